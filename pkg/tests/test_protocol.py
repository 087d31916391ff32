import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kljnsim.config import Choice, DetectorConfig, PartyConfig, PhysicsConfig, Quantity, ScenarioConfig, Variant
from kljnsim.circuit import dc_loop_current, loop_current_variance
from kljnsim.protocol import (
    bit_from_state,
    classify_partner,
    exchange_key,
    hypothesis_variance,
    run_bep,
    select_resistor,
)
from kljnsim.signals import RngStream

PHYS = PhysicsConfig()
DET = DetectorConfig()
ALICE = PartyConfig(1e3, 1e4, 0.005)
BOB = PartyConfig(1e3, 1e4, -0.005)
NONE = ScenarioConfig()


def choices(stream, count):
    return np.array([select_resistor(stream.child(k)) is Choice.H for k in range(count)], dtype=float)


def test_select_resistor_reproducible():
    s = RngStream(3, (1,))
    assert [select_resistor(s.child(k)) for k in range(50)] == [select_resistor(s.child(k)) for k in range(50)]


def test_select_resistor_fair():
    frac = choices(RngStream(4), 100_000).mean()
    assert 0.494 <= frac <= 0.506


def test_select_resistor_paths_uncorrelated():
    n = 20_000
    a = choices(RngStream(4, (0,)), n)
    b = choices(RngStream(4, (1,)), n)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(n)


def test_classify_nearest_hypothesis():
    phys = PhysicsConfig(noise_scale_D=1e-6)
    party = PartyConfig(1e3, 1e4)
    assert hypothesis_variance(1e3, 1e3, 1e-6, Quantity.CURRENT) == pytest.approx(5.0e-10)
    assert hypothesis_variance(1e3, 1e4, 1e-6, Quantity.CURRENT) == pytest.approx(9.0909e-11, rel=1e-4)
    assert classify_partner(1e3, 9.0e-11, party, phys, Quantity.CURRENT) is Choice.H
    v_L = loop_current_variance(1e-6, 1e3, 1e3)
    assert classify_partner(1e3, v_L, party, phys, Quantity.CURRENT) is Choice.L


def test_classify_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        classify_partner(1e3, 0.0, PartyConfig(), PHYS)


@pytest.mark.parametrize("a,b,bit", [(Choice.H, Choice.L, 0), (Choice.L, Choice.H, 1),
                                     (Choice.L, Choice.L, None), (Choice.H, Choice.H, None)])
def test_bit_from_state(a, b, bit):
    assert bit_from_state(a, b) == bit


@pytest.mark.parametrize("quantity", [Quantity.CURRENT, Quantity.VOLTAGE])
def test_misclassification_rate_no_attack(quantity):
    phys = PhysicsConfig(classify_by=quantity)
    stream = RngStream(21, (int(quantity is Quantity.VOLTAGE),))
    wrong = 0
    beps = 10_000
    for k in range(beps):
        r = run_bep(ALICE, BOB, NONE, phys, DET, stream.child(k), keep_waveforms=False)
        wrong += (r.alice_classified is not r.bob_choice) + (r.bob_classified is not r.alice_choice)
    assert wrong / beps < 1e-3


def test_zero_dc_classification_is_correct():
    zero = PartyConfig()
    for k in range(200):
        r = run_bep(zero, zero, NONE, PHYS, DET, RngStream(2).child(k), keep_waveforms=False)
        assert r.alice_classified is r.bob_choice and r.bob_classified is r.alice_choice


def test_intact_loop_readings_identical_and_unflagged():
    for k in range(50):
        r = run_bep(ALICE, BOB, NONE, PHYS, DET, RngStream(5).child(k))
        assert r.waveforms["u_A"] == r.waveforms["u_B"]
        assert r.waveforms["i_A"] == r.waveforms["i_B"]
        assert not r.verdicts["instant"].flagged and not r.verdicts["ac"].flagged


def test_no_attack_dc_current_matches_closed_form():
    hits = 0
    for k in range(200):
        r = run_bep(ALICE, BOB, NONE, PHYS, DET, RngStream(6).child(k))
        R_A, R_B = ALICE.resistance(r.alice_choice), BOB.resistance(r.bob_choice)
        se = math.sqrt(loop_current_variance(PHYS.noise_scale_D, R_A, R_B) / PHYS.samples_per_bep)
        hits += abs(r.measurements["mean_i_alice"] - dc_loop_current(0.005, -0.005, R_A, R_B)) < 5 * se
    assert hits == 200


def test_key_exchange_no_attack():
    rec = exchange_key(128, NONE, ALICE, BOB, PHYS, DET, RngStream(13))
    assert not rec.aborted
    assert rec.alice_key == rec.bob_key and len(rec.alice_key) == 128
    # BEPs needed ~ NegBin(128, 1/2): mean 256, sd sqrt(128 * 2) = 16
    assert abs(len(rec.beps) - 256) < 5 * 16


def test_key_exchange_aborts_under_uncompensated_mitm():
    alice, bob = PartyConfig(1e3, 1e4, 0.3), PartyConfig(1e3, 1e4, -0.3)
    scen = ScenarioConfig(Variant.MITM_RESISTOR)
    first_bep = 0
    runs = 300
    for t in range(runs):
        rec = exchange_key(16, scen, alice, bob, PHYS, DET, RngStream(14).child(t), max_beps=1)
        first_bep += rec.aborted
    assert first_bep / runs >= 0.99


def test_target_bits_zero_rejected():
    with pytest.raises(ValueError):
        exchange_key(0, NONE, ALICE, BOB, PHYS, DET, RngStream(0))


def test_state_frequencies():
    N = 4000
    counts = {"LL": 0, "LH": 0, "HL": 0, "HH": 0}
    for k in range(N):
        r = run_bep(ALICE, BOB, NONE, PhysicsConfig(samples_per_bep=50), DET, RngStream(31).child(k),
                    keep_waveforms=False)
        counts[r.state] += 1
    band = 5 * math.sqrt(N * 3 / 16)
    for c in counts.values():
        assert abs(c - N / 4) <= band


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**63), bits=st.integers(1, 6))
def test_key_agreement_property(seed, bits):
    phys = PhysicsConfig(samples_per_bep=400)
    rec = exchange_key(bits, NONE, ALICE, BOB, phys, DET, RngStream(seed))
    if not rec.aborted:
        assert rec.alice_key == rec.bob_key


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**63))
def test_no_attack_never_flags_comparison(seed):
    r = run_bep(ALICE, BOB, NONE, PhysicsConfig(samples_per_bep=200), DET, RngStream(seed))
    assert not r.verdicts["instant"].flagged and not r.verdicts["ac"].flagged
