"""Monte Carlo runner: repeats BEPs over a scenario and aggregates detection statistics."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .config import DetectorConfig, PartyConfig, PhysicsConfig, ScenarioConfig, Variant
from .detectors import wilson_interval
from .protocol import run_bep
from .signals import RngStream

SWEEP_PARAMETERS = ("dc_gap", "injection_rms", "samples_per_bep", "epsilon", "kappa")
Z95 = 1.959963984540054


@dataclass(frozen=True)
class Experiment:
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    alice: PartyConfig = field(default_factory=PartyConfig)
    bob: PartyConfig = field(default_factory=PartyConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    trials: int = 1000
    seed: int = 0
    horizons: tuple = (1, 2, 5, 10, 20)
    stream_path: tuple = ()
    # cap on BEPs per trial when a trial runs until DC detection (compensated twin-voltage gamble)
    max_run_beps: int = 1000

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        if any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be positive sample counts")

    @property
    def runs_until_detection(self) -> bool:
        s = self.scenario
        return s.variant is Variant.TWIN_VOLTAGE and s.dc_compensation


@dataclass(frozen=True)
class BepRow:
    """Everything the aggregator and report.csv need from one BEP; waveforms dropped."""

    trial: int
    bep_index: int
    alice_choice: str
    partner_choice: str
    state: str
    secure: bool
    alice_classified: str
    bob_classified: str
    alice_bit: Optional[int]
    bob_bit: Optional[int]
    flag_instant: bool
    flag_dc_alice: bool
    flag_dc_bob: bool
    flag_dc_voltage: bool
    flag_ac: bool
    flag_any: bool
    first_flag_index: Optional[int]
    instant_agree_samples: int
    samples: int
    dc_gt_rms: bool
    mean_i_alice: float
    mean_i_bob: float
    var_i_alice: float
    corr_toward_A: Optional[float]
    corr_toward_B: Optional[float]
    eve_guess: Optional[str]
    eve_emulated_alice: Optional[str]
    eve_emulated_bob: Optional[str]
    secure_emulation: bool
    dc_match: Optional[bool]


CSV_COLUMNS = (
    "scenario", "trial", "bep_index", "alice_choice", "partner_choice", "state", "secure",
    "alice_classified", "bob_classified", "bit", "flag_instant", "flag_dc_alice", "flag_dc_bob",
    "flag_ac", "first_flag_index", "mean_i_alice", "mean_i_bob", "var_i_alice",
    "corr_toward_A", "corr_toward_B", "eve_guess",
)


def _row(trial: int, k: int, rec, n: int, enabled) -> BepRow:
    v = rec.verdicts
    dc_alice = v["dc_alice_current"].flagged or v["dc_alice_voltage"].flagged
    dc_bob = v["dc_bob_current"].flagged or v["dc_bob_voltage"].flagged
    eve = rec.eve
    matches = list(eve.dc_match.values())
    return BepRow(
        trial=trial, bep_index=k,
        alice_choice=rec.alice_choice.value, partner_choice=rec.bob_choice.value,
        state=rec.state, secure=rec.secure,
        alice_classified=rec.alice_classified.value, bob_classified=rec.bob_classified.value,
        alice_bit=rec.alice_bit, bob_bit=rec.bob_bit,
        flag_instant=v["instant"].flagged, flag_dc_alice=dc_alice, flag_dc_bob=dc_bob,
        flag_dc_voltage=v["dc_alice_voltage"].flagged or v["dc_bob_voltage"].flagged,
        flag_ac=v["ac"].flagged, flag_any=rec.flagged(enabled),
        first_flag_index=v["instant"].first_flag_index,
        instant_agree_samples=rec.detector_stats["instant_agree_samples"], samples=n,
        dc_gt_rms=rec.detector_stats["dc_gt_rms_alice"] or rec.detector_stats["dc_gt_rms_bob"],
        mean_i_alice=rec.measurements["mean_i_alice"], mean_i_bob=rec.measurements["mean_i_bob"],
        var_i_alice=rec.measurements["var_i_alice"],
        corr_toward_A=eve.corr_toward_A, corr_toward_B=eve.corr_toward_B, eve_guess=eve.guessed_state,
        eve_emulated_alice=eve.emulated_toward_bob.value if eve.emulated_toward_bob else None,
        eve_emulated_bob=eve.emulated_toward_alice.value if eve.emulated_toward_alice else None,
        secure_emulation=eve.secure_emulation,
        dc_match=all(matches) if matches else None,
    )


def run_trial(exp: Experiment, trial: int) -> list:
    """One trial: a single BEP, or for the DC-gamble scenario a run of BEPs until DC detection."""
    stream = RngStream(exp.seed, exp.stream_path).child(trial)
    args = (exp.alice, exp.bob, exp.scenario, exp.physics, exp.detectors)
    n = exp.physics.samples_per_bep
    if not exp.runs_until_detection:
        return [_row(trial, 0, run_bep(*args, stream, keep_waveforms=False), n, exp.detectors.enabled)]
    rows = []
    for k in range(exp.max_run_beps):
        row = _row(trial, k, run_bep(*args, stream.child(k), keep_waveforms=False), n, exp.detectors.enabled)
        rows.append(row)
        if row.flag_dc_alice or row.flag_dc_bob:
            break
    return rows


def _run_chunk(exp: Experiment, trials: Sequence[int]) -> list:
    return [run_trial(exp, t) for t in trials]


@dataclass
class Tally:
    """Mergeable sufficient statistics; integer counts plus exactly-summed float lists."""

    trials: int = 0
    beps: int = 0
    flag_any: int = 0
    flag_instant: int = 0
    flag_dc: int = 0
    flag_dc_voltage: int = 0
    flag_ac: int = 0
    dc_gt_rms: int = 0
    bit_trials: int = 0
    bit_errors: int = 0
    eve_trials: int = 0
    eve_correct: int = 0
    agree_samples: int = 0
    compared_samples: int = 0
    hidden: dict = field(default_factory=dict)
    corr_A: list = field(default_factory=list)
    corr_B: list = field(default_factory=list)
    secure_to_detection: list = field(default_factory=list)
    censored_runs: int = 0
    gamble_beps: int = 0
    gamble_matches: int = 0

    def add_trial(self, rows: Sequence[BepRow], horizons, until_detection: bool) -> None:
        self.trials += 1
        for r in rows:
            self.beps += 1
            self.flag_any += r.flag_any
            self.flag_instant += r.flag_instant
            self.flag_dc += r.flag_dc_alice or r.flag_dc_bob
            self.flag_dc_voltage += r.flag_dc_voltage
            self.flag_ac += r.flag_ac
            self.dc_gt_rms += r.dc_gt_rms
            self.agree_samples += r.instant_agree_samples
            self.compared_samples += r.samples
            for h in horizons:
                hidden = r.first_flag_index is None or r.first_flag_index >= h
                self.hidden[h] = self.hidden.get(h, 0) + hidden
            if r.secure and not r.flag_any:
                self.bit_trials += 1
                self.bit_errors += r.alice_bit != r.bob_bit
            if r.corr_toward_A is not None:
                self.corr_A.append(r.corr_toward_A)
                self.corr_B.append(r.corr_toward_B)
                if r.secure:
                    self.eve_trials += 1
                    self.eve_correct += r.eve_guess == r.state
            if r.secure_emulation:
                self.gamble_beps += 1
                self.gamble_matches += bool(r.dc_match)
        if until_detection:
            last = rows[-1]
            if last.flag_dc_alice or last.flag_dc_bob:
                self.secure_to_detection.append(sum(r.secure_emulation for r in rows))
            else:
                self.censored_runs += 1

    def merge(self, other: "Tally") -> "Tally":
        out = Tally()
        for f in out.__dataclass_fields__:
            a, b = getattr(self, f), getattr(other, f)
            if isinstance(a, dict):
                setattr(out, f, {k: a.get(k, 0) + b.get(k, 0) for k in sorted(set(a) | set(b))})
            else:
                setattr(out, f, a + b)
        return out


@dataclass
class DetectionReport:
    scenario: str
    trials: int
    beps: int
    detection_rate: float
    detection_ci: tuple
    instant_rate: float
    dc_rate: float
    dc_voltage_rate: float
    ac_rate: float
    dc_gt_rms_rate: float
    honest_ber: Optional[float]
    honest_ber_ci: Optional[tuple]
    per_sample_agreement: float
    per_sample_agreement_ci: tuple
    hidden_curve: list
    fitted_p: Optional[float]
    fit_r2: Optional[float]
    eve_accuracy: Optional[float] = None
    eve_accuracy_ci: Optional[tuple] = None
    corr_toward_A_mean: Optional[float] = None
    corr_toward_B_mean: Optional[float] = None
    mean_secure_beps_to_detection: Optional[float] = None
    mean_secure_beps_ci: Optional[tuple] = None
    secure_beps_to_detection: Optional[list] = None
    censored_runs: int = 0
    gamble_match_rate: Optional[float] = None
    wall_seconds: float = 0.0
    rows: Optional[list] = field(default=None, repr=False)

    def summary(self) -> dict:
        """Flat, deterministic view (no wall time, no per-BEP rows, no raw samples)."""
        d = asdict(self)
        for k in ("wall_seconds", "rows", "secure_beps_to_detection", "hidden_curve"):
            d.pop(k)
        out = {}
        for k, v in d.items():
            if isinstance(v, (tuple, list)):
                out[f"{k}_lo"], out[f"{k}_hi"] = (v if v is not None else (None, None))
            elif v is None and k.endswith("_ci"):
                out[f"{k}_lo"] = out[f"{k}_hi"] = None
            else:
                out[k] = v
        for h, est, lo, hi in self.hidden_curve:
            out[f"hidden_n{h}"], out[f"hidden_n{h}_lo"], out[f"hidden_n{h}_hi"] = est, lo, hi
        return out


def fit_exponential_decay(hidden_curve) -> tuple[float, float]:
    """Least-squares line through (n, ln estimate); returns (exp(slope), R^2).

    Accepts (n, estimate, ...) tuples; points with estimate outside (0, 1) carry no
    decay information and are skipped.
    """
    pts = [(float(p[0]), float(p[1])) for p in hidden_curve if 0 < p[1] < 1]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points with estimate in (0, 1), got {len(pts)}")
    n = np.array([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(n, y, 1)
    resid = y - (slope * n + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(math.exp(slope)), r2


def _rate(k: int, n: int):
    return (k / n, wilson_interval(k, n)) if n else (None, None)


def _mean_ci(values: Sequence[float]):
    m = math.fsum(values) / len(values)
    if len(values) < 2:
        return m, (m, m)
    var = math.fsum((v - m) ** 2 for v in values) / (len(values) - 1)
    half = Z95 * math.sqrt(var / len(values))
    return m, (m - half, m + half)


def finalize(exp: Experiment, tally: Tally, wall: float = 0.0, rows=None) -> DetectionReport:
    det_rate, det_ci = _rate(tally.flag_any, tally.beps)
    ber, ber_ci = _rate(tally.bit_errors, tally.bit_trials)
    agree, agree_ci = _rate(tally.agree_samples, tally.compared_samples)
    curve = []
    for h in exp.horizons:
        est, (lo, hi) = _rate(tally.hidden[h], tally.beps)
        curve.append((h, est, lo, hi))
    try:
        fitted_p, fit_r2 = fit_exponential_decay(curve)
    except ValueError:
        fitted_p = fit_r2 = None
    report = DetectionReport(
        scenario=exp.scenario.variant.value, trials=tally.trials, beps=tally.beps,
        detection_rate=det_rate, detection_ci=det_ci,
        instant_rate=tally.flag_instant / tally.beps, dc_rate=tally.flag_dc / tally.beps,
        dc_voltage_rate=tally.flag_dc_voltage / tally.beps, ac_rate=tally.flag_ac / tally.beps,
        dc_gt_rms_rate=tally.dc_gt_rms / tally.beps,
        honest_ber=ber, honest_ber_ci=ber_ci,
        per_sample_agreement=agree, per_sample_agreement_ci=agree_ci,
        hidden_curve=curve, fitted_p=fitted_p, fit_r2=fit_r2,
        censored_runs=tally.censored_runs, wall_seconds=wall, rows=rows,
    )
    if tally.corr_A:
        report.eve_accuracy, report.eve_accuracy_ci = _rate(tally.eve_correct, tally.eve_trials)
        report.corr_toward_A_mean = math.fsum(tally.corr_A) / len(tally.corr_A)
        report.corr_toward_B_mean = math.fsum(tally.corr_B) / len(tally.corr_B)
    if tally.secure_to_detection:
        report.mean_secure_beps_to_detection, report.mean_secure_beps_ci = _mean_ci(tally.secure_to_detection)
        report.secure_beps_to_detection = list(tally.secure_to_detection)
    if tally.gamble_beps:
        report.gamble_match_rate = tally.gamble_matches / tally.gamble_beps
    return report


def run_monte_carlo(exp: Experiment, workers: int = 1, keep_rows: bool = False) -> DetectionReport:
    """Run ``exp.trials`` independent trials (one substream each) and aggregate them.

    Trials are assembled in trial order whatever the worker count, so serial and
    parallel runs give identical reports.
    """
    start = time.perf_counter()
    indices = list(range(exp.trials))
    if workers <= 1:
        per_trial = _run_chunk(exp, indices)
    else:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, [exp] * len(chunks), chunks))
        by_trial = {}
        for chunk, res in zip(chunks, results):
            by_trial.update(zip(chunk, res))
        per_trial = [by_trial[t] for t in indices]
    tally = Tally()
    for rows in per_trial:
        tally.add_trial(rows, exp.horizons, exp.runs_until_detection)
    all_rows = [r for rows in per_trial for r in rows] if keep_rows else None
    return finalize(exp, tally, time.perf_counter() - start, all_rows)


def with_parameter(exp: Experiment, parameter: str, value) -> Experiment:
    if parameter == "dc_gap":
        return replace(exp, alice=replace(exp.alice, dc_volt=value / 2),
                       bob=replace(exp.bob, dc_volt=-value / 2))
    if parameter == "injection_rms":
        return replace(exp, scenario=replace(exp.scenario, injection_rms=value))
    if parameter == "samples_per_bep":
        return replace(exp, physics=replace(exp.physics, samples_per_bep=int(value)))
    if parameter in ("epsilon", "kappa"):
        return replace(exp, detectors=replace(exp.detectors, **{parameter: value}))
    raise ValueError(f"unknown sweep parameter {parameter!r}; allowed: {', '.join(SWEEP_PARAMETERS)}")


def sweep(exp: Experiment, parameter: str, values, workers: int = 1) -> list:
    """One report per value; value i runs on substream ``stream_path + (i,)`` of the shared seed."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; allowed: {', '.join(SWEEP_PARAMETERS)}")
    reports = []
    for i, value in enumerate(values):
        point = replace(with_parameter(exp, parameter, value), stream_path=exp.stream_path + (i,))
        reports.append(run_monte_carlo(point, workers))
    return reports
