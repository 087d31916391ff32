"""End-to-end acceptance criteria, each at its stated tolerance."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from conftest import record
from kljnsim.attacks import loop_current_rms
from kljnsim.circuit import Emf, dc_loop_current, loop_current_variance, solve_injection
from kljnsim.cli import main, validate_physics
from kljnsim.config import Choice, DetectorConfig, PartyConfig, PhysicsConfig, ScenarioConfig, Variant
from kljnsim.detectors import wilson_interval
from kljnsim.harness import Experiment, run_monte_carlo
from kljnsim.protocol import run_bep
from kljnsim.signals import RngStream, gaussian_noise

PHYS = PhysicsConfig()
ALICE = PartyConfig(1e3, 1e4, 0.005)
BOB = PartyConfig(1e3, 1e4, -0.005)
# large enough DC gap that the DC change exceeds the AC rms in every state
ALICE_BIG = PartyConfig(1e3, 1e4, 0.3)
BOB_BIG = PartyConfig(1e3, 1e4, -0.3)
TRIALS = 10_000


def two_proportion_p(k1, n1, k2, n2):
    pooled = (k1 + k2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return 1.0
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = (k1 / n1 - k2 / n2) / se
    return 2 * stats.norm.sf(abs(z))


@pytest.fixture(scope="module")
def no_attack():
    return run_monte_carlo(Experiment(alice=ALICE, bob=BOB, trials=TRIALS, seed=101), keep_rows=True)


def test_criterion_1_physics_audit():
    start = time.perf_counter()
    rows = validate_physics(PHYS, ALICE, BOB, seed=0, samples=10**6)
    wall = time.perf_counter() - start
    worst = max(r[4] for r in rows)
    ok = len(rows) == 16 and all(r[5] for r in rows) and worst < 0.01 and wall < 10
    record(1, ok, f"16 checks, worst rel error {worst:.2e} (< 1e-2), {wall:.2f} s (< 10 s)")
    assert ok


def test_criterion_2_honest_protocol(no_attack):
    rep = no_attack
    rows = rep.rows
    n = len(rows)
    dc_flags = sum(r.flag_dc_alice or r.flag_dc_bob for r in rows)
    cmp_flags = sum(r.flag_instant or r.flag_ac for r in rows)
    secure = sum(r.secure for r in rows) / n
    ok = (rep.honest_ber < 1e-3 and cmp_flags == 0 and dc_flags / n <= 10 / 10**5
          and abs(secure - 0.5) <= 0.016)
    record(2, ok, f"{n} BEPs, BER {rep.honest_ber:.2e}, comparison alarms {cmp_flags}, "
                  f"DC alarms {dc_flags}, secure fraction {secure:.4f}")
    assert ok


def test_criterion_3_uncompensated_mitm():
    # precondition: DC change at Alice exceeds the AC current rms for every resistor pair
    gaps = []
    for a in Choice:
        for e in Choice:
            R_A, R_E = ALICE_BIG.resistance(a), BOB_BIG.resistance(e)
            shift = abs(dc_loop_current(0.3, -0.3, R_A, R_E) - dc_loop_current(0.3, 0.0, R_A, R_E))
            gaps.append(shift / math.sqrt(loop_current_variance(PHYS.noise_scale_D, R_A, R_E)))
    exp = Experiment(alice=ALICE_BIG, bob=BOB_BIG, scenario=ScenarioConfig(Variant.MITM_RESISTOR),
                     detectors=DetectorConfig(enabled={"dc"}), trials=TRIALS, seed=303)
    rep = run_monte_carlo(exp)
    ok = min(gaps) >= 1 and rep.dc_rate >= 0.99
    record(3, ok, f"min |dDC|/rms {min(gaps):.2f} (>= 1), single-BEP DC detection "
                  f"{rep.dc_rate:.4f} over {rep.beps} (>= 0.99)")
    assert ok


def test_criterion_4_compensated_mitm(no_attack):
    comp = ScenarioConfig(Variant.MITM_RESISTOR, dc_compensation=True)
    dc_run = run_monte_carlo(Experiment(alice=ALICE, bob=BOB, scenario=comp, trials=TRIALS, seed=404),
                             keep_rows=True)
    k_att = sum(r.flag_dc_alice or r.flag_dc_bob for r in dc_run.rows)
    k_ref = sum(r.flag_dc_alice or r.flag_dc_bob for r in no_attack.rows)
    p_value = two_proportion_p(k_att, dc_run.beps, k_ref, no_attack.beps)

    # hidden-probability decay on the pooled curve; epsilon=2 keeps every horizon in (0, 1)
    fit_run = run_monte_carlo(Experiment(alice=ALICE, bob=BOB, scenario=comp,
                                         detectors=DetectorConfig(epsilon=2.0), trials=TRIALS, seed=405))
    r2 = fit_run.fit_r2

    # extrapolation at the default tolerance: worst stratum's Wilson upper bound to the 2000th power
    strata = {}
    for r in dc_run.rows:
        key = (r.alice_choice, r.partner_choice, r.eve_emulated_alice, r.eve_emulated_bob)
        a, s = strata.get(key, (0, 0))
        strata[key] = (a + r.instant_agree_samples, s + r.samples)
    p_hi = max(wilson_interval(a, s)[1] for a, s in strata.values())
    log10_extrapolated = 2000 * math.log10(p_hi)

    ok = p_value > 0.01 and r2 is not None and r2 > 0.99 and log10_extrapolated < -10
    record(4, ok, f"DC flags {k_att} vs {k_ref} (two-proportion p={p_value:.3f} > 0.01), "
                  f"fit R^2 {r2:.4f} (> 0.99), log10(p_hi^2000) = {log10_extrapolated:.1f} (< -10)")
    assert ok


def test_compensated_mitm_hidden_curve_matches_agreement_power():
    # one resistor configuration: all four resistors low, so per-sample agreement is homogeneous
    comp = ScenarioConfig(Variant.MITM_RESISTOR, dc_compensation=True)
    rep = run_monte_carlo(Experiment(alice=ALICE, bob=BOB, scenario=comp, detectors=DetectorConfig(epsilon=3.0),
                                     trials=TRIALS, seed=406), keep_rows=True)
    rows = [r for r in rep.rows if (r.alice_choice, r.partner_choice, r.eve_emulated_alice,
                                    r.eve_emulated_bob) == ("L", "L", "L", "L")]
    p_hat = sum(r.instant_agree_samples for r in rows) / sum(r.samples for r in rows)
    for h in (1, 2, 5, 10, 20):
        hidden = sum(r.first_flag_index is None or r.first_flag_index >= h for r in rows)
        lo, hi = wilson_interval(hidden, len(rows))
        assert lo <= p_hat**h <= hi


def test_criterion_5_twin_current():
    identical = True
    for t in range(20):
        stream = RngStream(505, (t,))
        ref = None
        for series in (0.0, 0.1, 1.0):
            scen = ScenarioConfig(Variant.TWIN_CURRENT, series_dc_volt=series)
            w = run_bep(ALICE_BIG, BOB_BIG, scen, PHYS, DetectorConfig(), stream).waveforms
            if ref is None:
                ref = w
            identical &= all(np.array_equal(ref[k].samples, w[k].samples) for k in ref)
    rep = run_monte_carlo(Experiment(alice=ALICE_BIG, bob=BOB_BIG, scenario=ScenarioConfig(Variant.TWIN_CURRENT),
                                     detectors=DetectorConfig(enabled={"dc"}), trials=TRIALS, seed=506))
    ok = identical and rep.dc_voltage_rate >= 0.99
    record(5, ok, f"series sweep 0/0.1/1 V bit-identical: {identical}; DC-voltage detection "
                  f"{rep.dc_voltage_rate:.4f} over {rep.beps} (>= 0.99)")
    assert ok


def test_criterion_6_compensated_twin_voltage():
    scen = ScenarioConfig(Variant.TWIN_VOLTAGE, dc_compensation=True, committed_emulation="random")
    rep = run_monte_carlo(Experiment(alice=ALICE, bob=BOB, scenario=scen, trials=TRIALS, seed=606))
    counts = np.array(rep.secure_beps_to_detection)
    mean = counts.mean()
    # geometric(0.5) on {1, 2, ...}; pool the tail so every expected count is at least 5
    K = 10
    observed = [int(np.sum(counts == k)) for k in range(1, K)] + [int(np.sum(counts >= K))]
    probs = [0.5**k for k in range(1, K)] + [0.5 ** (K - 1)]
    expected = np.array(probs) * counts.size
    chi2 = stats.chisquare(observed, expected)
    ok = rep.censored_runs == 0 and abs(mean - 2.0) <= 0.1 and chi2.pvalue > 0.01
    record(6, ok, f"{counts.size} runs, mean secure BEPs to detection {mean:.3f} (2.0 +- 0.1), "
                  f"geometric(0.5) chi-square p={chi2.pvalue:.3f} (> 0.01), censored {rep.censored_runs}")
    assert ok


def test_criterion_7_injection():
    D, n = PHYS.noise_scale_D, PHYS.samples_per_bep
    # (a) Bob-side injected component: i_B minus the same loop without injection
    slope_errors = []
    for R_A, R_B in ((1e3, 1e4), (1e4, 1e3), (1e3, 9e3)):
        s = RngStream(707, (int(R_A), int(R_B)))
        e_A = Emf(gaussian_noise(s.child(0), D * R_A, n).samples, 0.005)
        e_B = Emf(gaussian_noise(s.child(1), D * R_B, n).samples, -0.005)
        i_inj = gaussian_noise(s.child(2), 1e-12, n).samples
        with_inj = solve_injection(e_A, R_A, e_B, R_B, i_inj).i_B.samples
        without = solve_injection(e_A, R_A, e_B, R_B, np.zeros(n)).i_B.samples
        slope = np.polyfit(i_inj, with_inj - without, 1)[0]
        slope_errors.append(abs(slope / (R_A / (R_A + R_B)) - 1))
    ok_a = max(slope_errors) < 0.01

    # (b) accuracy on secure states at the default injection amplitude
    base = Experiment(alice=ALICE, bob=BOB, scenario=ScenarioConfig(Variant.INJECTION), trials=TRIALS, seed=708)
    acc = run_monte_carlo(base).eve_accuracy
    ok_b = acc > 0.99

    # (c) DC sources on vs off with identical seeds
    small = replace(base, trials=1000, seed=709)
    on = run_monte_carlo(small, keep_rows=True)
    zero = PartyConfig(1e3, 1e4, 0.0)
    off = run_monte_carlo(replace(small, alice=zero, bob=zero), keep_rows=True)
    p1, n1 = on.eve_accuracy, sum(r.secure for r in on.rows)
    p2, n2 = off.eve_accuracy, sum(r.secure for r in off.rows)
    sigma = math.sqrt(p1 * (1 - p1) / n1 + p2 * (1 - p2) / n2)
    same_ac = [r.flag_ac for r in on.rows] == [r.flag_ac for r in off.rows]
    ok_c = abs(p1 - p2) <= 2 * sigma and same_ac

    # (d) AC comparison with a tolerance below the injected rms in every state
    inj_rms = 0.1 * loop_current_rms(PHYS, ALICE, BOB)
    eps = 0.03
    tol_max = eps * math.sqrt(loop_current_variance(D, 1e3, 1e3))
    det = run_monte_carlo(replace(base, detectors=DetectorConfig(epsilon=eps), trials=2000, seed=710))
    ok_d = inj_rms > tol_max and det.ac_rate >= 0.99

    ok = ok_a and ok_b and ok_c and ok_d
    record(7, ok, f"(a) max slope error {max(slope_errors):.1e} (< 1e-2); (b) accuracy {acc:.4f} (> 0.99); "
                  f"(c) |dacc| {abs(p1 - p2):.4f} <= 2 sigma {2 * sigma:.4f}, ac verdicts identical {same_ac}; "
                  f"(d) ac detection {det.ac_rate:.4f} (>= 0.99)")
    assert ok


def test_criterion_8_determinism(tmp_path):
    import json
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": {"variant": "mitm_resistor", "dc_compensation": True},
                               "detectors": {"epsilon": 2.0}, "run": {"trials": 300, "seed": 808,
                                                                        "target_bits": 16}}))
    outs = []
    for name, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / name), "--workers", workers]) == 0
        outs.append(tuple((tmp_path / name / f).read_bytes() for f in ("report.csv", "summary.csv")))
    ok = outs[0] == outs[1] == outs[2]
    record(8, ok, "report.csv and summary.csv byte-identical across two serial runs and a 2-worker run")
    assert ok
