"""Honest KLJN parties: resistor switching, partner identification, bit extraction and
the per-BEP evaluation of the defences."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import detectors as det
from .attacks import BUILDERS, EveRecord, PartyView, Termination
from .circuit import Emf, loop_current_variance, wire_voltage_variance
from .config import Choice, DetectorConfig, PartyConfig, PhysicsConfig, Quantity, ScenarioConfig
from .signals import RngStream, ac_variance, gaussian_noise

# substreams of one BEP
ALICE_SWITCH, BOB_SWITCH, ALICE_NOISE, BOB_NOISE, EVE, READOUT = range(6)

SECURE_STATES = ("LH", "HL")


def select_resistor(stream: RngStream) -> Choice:
    return Choice.H if stream.generator().integers(2) else Choice.L


def hypothesis_variance(own_R: float, partner_R: float, D: float, quantity: Quantity) -> float:
    if Quantity(quantity) is Quantity.CURRENT:
        return loop_current_variance(D, own_R, partner_R)
    return wire_voltage_variance(D, own_R, partner_R)


def classify_partner(own_R: float, measured_variance: float, partner: PartyConfig,
                     physics: PhysicsConfig, quantity: Quantity = Quantity.CURRENT) -> Choice:
    """Nearest no-attack hypothesis for the partner's resistor, distance taken in log variance."""
    if not measured_variance > 0:
        raise ValueError(f"measured variance must be positive, got {measured_variance}")
    D = physics.noise_scale_D
    log_m = math.log(measured_variance)
    d_L = abs(log_m - math.log(hypothesis_variance(own_R, partner.r_low, D, quantity)))
    d_H = abs(log_m - math.log(hypothesis_variance(own_R, partner.r_high, D, quantity)))
    return Choice.L if d_L <= d_H else Choice.H


def bit_from_state(alice: Choice, bob: Choice) -> Optional[int]:
    state = Choice(alice).value + Choice(bob).value
    return {"HL": 0, "LH": 1}.get(state)


@dataclass
class BepRecord:
    alice_choice: Choice
    bob_choice: Choice
    alice_classified: Choice
    bob_classified: Choice
    alice_bit: Optional[int]
    bob_bit: Optional[int]
    verdicts: dict
    detector_stats: dict
    measurements: dict
    eve: EveRecord
    waveforms: dict = field(default_factory=dict)

    @property
    def state(self) -> str:
        return self.alice_choice.value + self.bob_choice.value

    @property
    def secure(self) -> bool:
        return self.state in SECURE_STATES

    @property
    def detector_flags(self) -> dict:
        return {name: v.flagged for name, v in self.verdicts.items()}

    def flagged(self, enabled=("instant", "dc", "ac")) -> bool:
        return any(self.detector_flags[name] for name in self.detector_flags
                   if name.split("_")[0] in enabled)


def _readout(view: PartyView, physics: PhysicsConfig, stream: RngStream):
    """Readings a party publishes: the true waveform plus optional instrument noise."""
    if physics.measurement_noise_rms == 0:
        return view.u.samples, view.i.samples
    var = physics.measurement_noise_rms ** 2
    n = physics.samples_per_bep
    return (view.u.samples + gaussian_noise(stream.child(0), var, n).samples,
            view.i.samples + gaussian_noise(stream.child(1), var, n).samples)


def _dc_checks(view: PartyView, own: Choice, classified: Choice, alice: PartyConfig,
               bob: PartyConfig, side: str, kappa: float):
    verdicts, stats = {}, {}
    condition = False
    for q, series in ((Quantity.CURRENT, view.i.samples), (Quantity.VOLTAGE, view.u.samples)):
        baseline = det.expected_dc(own, classified, alice, bob, q, side)
        rms = math.sqrt(ac_variance(series))
        v = det.dc_average_test(series, baseline, rms, kappa)
        verdicts[q.value] = v
        stats[f"dc_shift_{q.value}_{side}"] = float(series.mean()) - baseline
        # the coarse single-sample criterion: DC change larger than the AC rms
        condition |= v.statistic > rms
    stats[f"dc_gt_rms_{side}"] = condition
    return verdicts, stats


def run_bep(alice: PartyConfig, bob: PartyConfig, scenario: ScenarioConfig, physics: PhysicsConfig,
            detectors: DetectorConfig, stream: RngStream, keep_waveforms: bool = True) -> BepRecord:
    D, n = physics.noise_scale_D, physics.samples_per_bep
    a_choice = select_resistor(stream.child(ALICE_SWITCH))
    b_choice = select_resistor(stream.child(BOB_SWITCH))
    R_A, R_B = alice.resistance(a_choice), bob.resistance(b_choice)
    e_A = Emf(gaussian_noise(stream.child(ALICE_NOISE), D * R_A, n).samples, alice.dc_volt)
    e_B = Emf(gaussian_noise(stream.child(BOB_NOISE), D * R_B, n).samples, bob.dc_volt)

    build = BUILDERS[scenario.variant]
    view_A, view_B, eve = build(Termination(alice, a_choice, e_A), Termination(bob, b_choice, e_B),
                                scenario, physics, stream.child(EVE))

    q = physics.classify_by
    meas = {
        "mean_i_alice": float(view_A.i.samples.mean()),
        "mean_i_bob": float(view_B.i.samples.mean()),
        "mean_u_alice": float(view_A.u.samples.mean()),
        "mean_u_bob": float(view_B.u.samples.mean()),
        "var_i_alice": ac_variance(view_A.i),
        "var_i_bob": ac_variance(view_B.i),
        "var_u_alice": ac_variance(view_A.u),
        "var_u_bob": ac_variance(view_B.u),
    }
    key = "i" if q is Quantity.CURRENT else "u"
    a_class = classify_partner(R_A, meas[f"var_{key}_alice"], bob, physics, q)
    b_class = classify_partner(R_B, meas[f"var_{key}_bob"], alice, physics, q)

    # exchanged readings and comparison tolerances from Alice's view of the state
    rep = stream.child(READOUT)
    u_A, i_A = _readout(view_A, physics, rep.child(0))
    u_B, i_B = _readout(view_B, physics, rep.child(1))
    R_cB = bob.resistance(a_class)
    tol_i = detectors.tolerance(math.sqrt(loop_current_variance(D, R_A, R_cB)), physics.measurement_noise_rms)
    tol_u = detectors.tolerance(math.sqrt(wire_voltage_variance(D, R_A, R_cB)), physics.measurement_noise_rms)
    v_i = det.instantaneous_compare(i_A, i_B, tol_i)
    v_u = det.instantaneous_compare(u_A, u_B, tol_u)
    agree = (np.abs(i_A - i_B) <= tol_i) & (np.abs(u_A - u_B) <= tol_u)

    verdicts = {
        "instant": det.combine_verdicts(v_i, v_u),
        "ac": det.ac_compare(i_A, i_B, tol_i),
    }
    stats = {"instant_agree_samples": int(agree.sum()), "tol_i": tol_i, "tol_u": tol_u}
    for side, view, own, cls in (("alice", view_A, a_choice, a_class), ("bob", view_B, b_choice, b_class)):
        dc_verdicts, dc_stats = _dc_checks(view, own, cls, alice, bob, side, detectors.kappa)
        for name, v in dc_verdicts.items():
            verdicts[f"dc_{side}_{name}"] = v
        stats.update(dc_stats)

    record = BepRecord(a_choice, b_choice, a_class, b_class, None, None, verdicts, stats, meas, eve)
    if record.secure and not record.flagged(detectors.enabled):
        record.alice_bit = bit_from_state(a_choice, a_class)
        record.bob_bit = bit_from_state(b_class, b_choice)
    if keep_waveforms:
        record.waveforms = {"u_A": view_A.u, "i_A": view_A.i, "u_B": view_B.u, "i_B": view_B.i}
    return record


@dataclass
class KeyRecord:
    beps: list
    alice_key: list
    bob_key: list
    aborted: bool


def exchange_key(target_bits: int, scenario: ScenarioConfig, alice: PartyConfig, bob: PartyConfig,
                 physics: PhysicsConfig, detectors: DetectorConfig, stream: RngStream,
                 max_beps: Optional[int] = None, keep_waveforms: bool = False) -> KeyRecord:
    """Run BEPs until ``target_bits`` key bits are collected or an enabled detector fires."""
    if target_bits < 1:
        raise ValueError(f"target_bits must be at least 1, got {target_bits}")
    beps, a_key, b_key = [], [], []
    k = 0
    while len(a_key) < target_bits and (max_beps is None or k < max_beps):
        rec = run_bep(alice, bob, scenario, physics, detectors, stream.child(k), keep_waveforms)
        beps.append(rec)
        k += 1
        if rec.flagged(detectors.enabled):
            return KeyRecord(beps, a_key, b_key, True)
        if rec.alice_bit is not None:
            a_key.append(rec.alice_bit)
        if rec.bob_bit is not None:
            b_key.append(rec.bob_bit)
    return KeyRecord(beps, a_key, b_key, False)
