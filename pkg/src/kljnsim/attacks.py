"""Eve's topologies.

Every builder takes the two honest terminations (already carrying their
resistor choice and EMF) and returns what Alice and Bob observe at their ends,
plus an :class:`EveRecord` with Eve's own choices and measurements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .circuit import (
    Emf,
    dc_wire_voltage,
    loop_current_variance,
    solve_current_driven,
    solve_injection,
    solve_single_loop,
    solve_voltage_driven,
    wire_voltage_variance,
)
from .config import RANDOM_COMMITMENT, Choice, Commitment, PartyConfig, PhysicsConfig, ScenarioConfig, Variant
from .signals import RngStream, TimeSeries, Unit, cross_correlation, gaussian_noise

# Eve's substreams under the BEP stream handed to a builder
_EVE_CHOICES, _EVE_NOISE_TO_ALICE, _EVE_NOISE_TO_BOB, _EVE_GENERATOR = range(4)


@dataclass(frozen=True)
class Termination:
    party: PartyConfig
    choice: Choice
    emf: Emf

    @property
    def R(self) -> float:
        return self.party.resistance(self.choice)


@dataclass(frozen=True)
class PartyView:
    u: TimeSeries
    i: TimeSeries


@dataclass
class EveRecord:
    emulated_toward_alice: Optional[Choice] = None
    emulated_toward_bob: Optional[Choice] = None
    commitments: dict = field(default_factory=dict)
    dc_match: dict = field(default_factory=dict)
    corr_toward_A: Optional[float] = None
    corr_toward_B: Optional[float] = None
    guessed_state: Optional[str] = None
    waveforms: dict = field(default_factory=dict)

    @property
    def secure_emulation(self) -> bool:
        return any(c.secure for c in self.commitments.values())


def _require(scenario: ScenarioConfig, variant: Variant) -> None:
    if scenario.variant is not variant:
        raise ValueError(f"builder for {variant.value!r} called with variant {scenario.variant.value!r}")


def _eve_choice(gen: np.random.Generator) -> Choice:
    return Choice.H if gen.integers(2) else Choice.L


def loop_current_rms(physics: PhysicsConfig, alice: PartyConfig, bob: PartyConfig) -> float:
    """Rms of the no-attack loop current averaged over the four equiprobable states."""
    D = physics.noise_scale_D
    variances = [
        loop_current_variance(D, alice.resistance(a), bob.resistance(b)) for a in Choice for b in Choice
    ]
    return math.sqrt(sum(variances) / 4)


def intact_bep(alice: Termination, bob: Termination, scenario, physics, stream):
    _require(scenario, Variant.NONE)
    sol = solve_single_loop(alice.emf, alice.R, bob.emf, bob.R)
    view = PartyView(sol.u_wire, sol.i_wire)
    return view, view, EveRecord()


def mitm_resistor_bep(alice: Termination, bob: Termination, scenario: ScenarioConfig,
                      physics: PhysicsConfig, stream: RngStream):
    """Wire cut; Eve closes each half with her own KLJN communicator."""
    _require(scenario, Variant.MITM_RESISTOR)
    gen = stream.child(_EVE_CHOICES).generator()
    fake_bob, fake_alice = _eve_choice(gen), _eve_choice(gen)
    D, n = physics.noise_scale_D, physics.samples_per_bep
    comp = scenario.effective_compensation

    R_fake_bob = bob.party.resistance(fake_bob)
    R_fake_alice = alice.party.resistance(fake_alice)
    e_fake_bob = Emf(gaussian_noise(stream.child(_EVE_NOISE_TO_ALICE), D * R_fake_bob, n).samples,
                     bob.party.dc_volt if comp else 0.0)
    e_fake_alice = Emf(gaussian_noise(stream.child(_EVE_NOISE_TO_BOB), D * R_fake_alice, n).samples,
                       alice.party.dc_volt if comp else 0.0)

    left = solve_single_loop(alice.emf, alice.R, e_fake_bob, R_fake_bob)
    right = solve_single_loop(e_fake_alice, R_fake_alice, bob.emf, bob.R)
    eve = EveRecord(emulated_toward_alice=fake_bob, emulated_toward_bob=fake_alice)
    return PartyView(left.u_wire, left.i_wire), PartyView(right.u_wire, right.i_wire), eve


def twin_current_bep(alice: Termination, bob: Termination, scenario: ScenarioConfig,
                     physics: PhysicsConfig, stream: RngStream):
    """Both wire halves driven by one ideal noise current source waveform."""
    _require(scenario, Variant.TWIN_CURRENT)
    gen = stream.child(_EVE_CHOICES).generator()
    fake_alice, fake_bob = _eve_choice(gen), _eve_choice(gen)
    D, n = physics.noise_scale_D, physics.samples_per_bep
    var = loop_current_variance(D, alice.party.resistance(fake_alice), bob.party.resistance(fake_bob))
    i_E = gaussian_noise(stream.child(_EVE_GENERATOR), var, n, Unit.AMPERE).samples

    u_A, i_A = solve_current_driven(alice.emf, alice.R, i_E, scenario.series_dc_volt)
    # Bob's termination sources -i_E into the wire
    u_B, i_out_B = solve_current_driven(bob.emf, bob.R, -i_E, scenario.series_dc_volt)
    i_B = TimeSeries(-i_out_B.samples, Unit.AMPERE)

    # the series source only shifts the voltage across Eve's own current generators
    compliance = TimeSeries(u_A.samples - u_B.samples - scenario.series_dc_volt, Unit.VOLT)
    eve = EveRecord(emulated_toward_alice=fake_bob, emulated_toward_bob=fake_alice,
                    waveforms={"i_E": TimeSeries(i_E, Unit.AMPERE), "u_compliance": compliance})
    return PartyView(u_A, i_A), PartyView(u_B, i_B), eve


def _draw_commitments(gen: np.random.Generator) -> dict:
    # fixed number of draws keeps the stream aligned whatever the branch
    kind, end, assumed = gen.random(3)
    if kind < 0.5:
        return {"alice": Commitment(None), "bob": Commitment(None)}
    gamble = "alice" if end < 0.5 else "bob"
    bet = Commitment(Choice.L if assumed < 0.5 else Choice.H)
    return {"alice": Commitment(None), "bob": Commitment(None), gamble: bet}


def twin_voltage_bep(alice: Termination, bob: Termination, scenario: ScenarioConfig,
                     physics: PhysicsConfig, stream: RngStream):
    """Both wire halves forced by one ideal noise voltage source waveform.

    Uncompensated, Eve emulates a random state with zero DC.  Compensated, each
    end gets a DC level fixed at the start of the BEP: an equal-pair emulation
    (average DC, always right) or a bet on the party's resistor (right half the time).
    """
    _require(scenario, Variant.TWIN_VOLTAGE)
    gen = stream.child(_EVE_CHOICES).generator()
    D, n = physics.noise_scale_D, physics.samples_per_bep
    U_A, U_B = alice.party.dc_volt, bob.party.dc_volt
    rA, rB = alice.party.resistance, bob.party.resistance
    z = stream.child(_EVE_GENERATOR).generator().standard_normal(n)

    eve = EveRecord()
    if not scenario.dc_compensation:
        fake_alice, fake_bob = _eve_choice(gen), _eve_choice(gen)
        sigma = math.sqrt(wire_voltage_variance(D, rA(fake_alice), rB(fake_bob)))
        drive_A = drive_B = sigma * z
        eve.emulated_toward_alice, eve.emulated_toward_bob = fake_bob, fake_alice
    else:
        drawn = _draw_commitments(gen)
        if scenario.committed_emulation == RANDOM_COMMITMENT:
            commitments = drawn
        else:
            commitments = dict(scenario.committed_emulation)
        for end in ("alice", "bob"):
            commitments.setdefault(end, Commitment(None))
        eve.commitments = commitments

        # toward Alice: Eve plays Bob against Alice's (assumed) resistor
        c = commitments["alice"]
        a_assumed = c.assumed if c.secure else alice.choice
        b_emulated = a_assumed.other if c.secure else alice.choice
        sigma_A = math.sqrt(wire_voltage_variance(D, rA(a_assumed), rB(b_emulated)))
        dc_A = dc_wire_voltage(U_A, U_B, rA(a_assumed), rB(b_emulated))
        eve.emulated_toward_alice = b_emulated
        eve.dc_match["alice"] = a_assumed is alice.choice

        c = commitments["bob"]
        b_assumed = c.assumed if c.secure else bob.choice
        a_emulated = b_assumed.other if c.secure else bob.choice
        sigma_B = math.sqrt(wire_voltage_variance(D, rA(a_emulated), rB(b_assumed)))
        dc_B = dc_wire_voltage(U_A, U_B, rA(a_emulated), rB(b_assumed))
        eve.emulated_toward_bob = a_emulated
        eve.dc_match["bob"] = b_assumed is bob.choice

        if not scenario.eve_knows_dc:
            dc_A = dc_B = 0.0
        drive_A = sigma_A * z + dc_A
        drive_B = sigma_B * z + dc_B

    u_A, i_A = solve_voltage_driven(alice.emf, alice.R, drive_A)
    u_B, i_out_B = solve_voltage_driven(bob.emf, bob.R, drive_B)
    i_B = TimeSeries(-i_out_B.samples, Unit.AMPERE)
    eve.waveforms = {"z": TimeSeries(z, Unit.VOLT)}
    return PartyView(u_A, i_A), PartyView(u_B, i_B), eve


def injection_bep(alice: Termination, bob: Termination, scenario: ScenarioConfig,
                  physics: PhysicsConfig, stream: RngStream):
    """Intact wire with Eve's zero-mean noise current injected at a point of it."""
    _require(scenario, Variant.INJECTION)
    rms = scenario.injection_rms
    if rms is None:
        rms = 0.1 * loop_current_rms(physics, alice.party, bob.party)
    n = physics.samples_per_bep
    i_inj = gaussian_noise(stream.child(_EVE_GENERATOR), rms * rms, n, Unit.AMPERE).samples
    sol = solve_injection(alice.emf, alice.R, bob.emf, bob.R, i_inj)
    eve = EveRecord(
        corr_toward_A=cross_correlation(i_inj, -sol.i_A.samples),
        corr_toward_B=cross_correlation(i_inj, sol.i_B.samples),
        waveforms={"i_inj": TimeSeries(i_inj, Unit.AMPERE)},
    )
    eve.guessed_state = eve_guess_state(eve, scenario.eve_threshold)
    return PartyView(sol.u_node, sol.i_A), PartyView(sol.u_node, sol.i_B), eve


def eve_guess_state(record: EveRecord, threshold: float = 0.0) -> Optional[str]:
    """The injected current prefers the lower-resistance side; that side connected R_L."""
    if record.corr_toward_A is None or record.corr_toward_B is None:
        raise ValueError("eve_guess_state needs the injection correlations")
    gap = record.corr_toward_A - record.corr_toward_B
    if abs(gap) <= threshold:
        return None
    return "LH" if gap > 0 else "HL"


BUILDERS: dict[Variant, Callable] = {
    Variant.NONE: intact_bep,
    Variant.MITM_RESISTOR: mitm_resistor_bep,
    Variant.TWIN_CURRENT: twin_current_bep,
    Variant.TWIN_VOLTAGE: twin_voltage_bep,
    Variant.INJECTION: injection_bep,
}
