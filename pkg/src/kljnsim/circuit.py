"""Per-sample closed-form solvers for the loop topologies.

Sign conventions: currents are positive in the Alice -> Bob direction along the
wire, the injected current is positive into the wire node, and every voltage is
measured against the common ground of the two ends.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import TimeSeries, Unit, as_array


def _check_resistance(*values: float) -> None:
    for r in values:
        if not r > 0:
            raise ValueError(f"resistance must be positive, got {r}")


@dataclass(frozen=True)
class Emf:
    """Series EMF of one termination: zero-mean noise plus a parasitic DC level."""

    noise: np.ndarray
    dc: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "noise", as_array(self.noise))
        object.__setattr__(self, "dc", float(self.dc))

    @property
    def total(self) -> np.ndarray:
        return self.noise + self.dc

    def __len__(self) -> int:
        return self.noise.shape[0]


@dataclass(frozen=True)
class LoopSolution:
    u_wire: TimeSeries
    i_wire: TimeSeries

    # The intact wire is a single node: both ends see the same waveforms.
    @property
    def u_A(self) -> TimeSeries:
        return self.u_wire

    @property
    def u_B(self) -> TimeSeries:
        return self.u_wire

    @property
    def i_A(self) -> TimeSeries:
        return self.i_wire

    @property
    def i_B(self) -> TimeSeries:
        return self.i_wire


@dataclass(frozen=True)
class InjectionSolution:
    i_A: TimeSeries
    i_B: TimeSeries
    u_node: TimeSeries


def _same_length(*emfs: Emf) -> None:
    lengths = {len(e) for e in emfs}
    if len(lengths) != 1:
        raise ValueError(f"noise series lengths differ: {sorted(lengths)}")


def solve_single_loop(e_A: Emf, R_A: float, e_B: Emf, R_B: float) -> LoopSolution:
    _check_resistance(R_A, R_B)
    _same_length(e_A, e_B)
    a, b = e_A.total, e_B.total
    i = (a - b) / (R_A + R_B)
    u = (a * R_B + b * R_A) / (R_A + R_B)
    return LoopSolution(TimeSeries(u, Unit.VOLT), TimeSeries(i, Unit.AMPERE))


def solve_current_driven(e: Emf, R: float, i_drive, series_volt: float = 0.0):
    """Termination driven by an ideal current source.

    ``i_drive`` is the current leaving the termination into the wire.  A voltage
    source in series with the ideal current source only moves the source's own
    compliance voltage, so ``series_volt`` cannot reach the returned observables.
    Returns ``(u_terminal, i)``.
    """
    _check_resistance(R)
    drive = as_array(i_drive)
    if drive.shape[0] != len(e):
        raise ValueError(f"length mismatch: {len(e)} vs {drive.shape[0]}")
    # series_volt drops across the source pair only; it never enters u or i
    u = e.total - drive * R
    return TimeSeries(u, Unit.VOLT), TimeSeries(drive.copy(), Unit.AMPERE)


def solve_voltage_driven(e: Emf, R: float, u_drive):
    """Termination whose port voltage is forced by an ideal voltage source.

    Returns ``(u_terminal, i)`` with ``i`` the current leaving the termination.
    """
    _check_resistance(R)
    drive = as_array(u_drive)
    if drive.shape[0] != len(e):
        raise ValueError(f"length mismatch: {len(e)} vs {drive.shape[0]}")
    i = (e.total - drive) / R
    return TimeSeries(drive.copy(), Unit.VOLT), TimeSeries(i, Unit.AMPERE)


def solve_injection(e_A: Emf, R_A: float, e_B: Emf, R_B: float, i_inj) -> InjectionSolution:
    """Intact loop with a current injected into the (ideal, single-node) wire.

    ``i_A`` flows from Alice into the node, ``i_B`` from the node into Bob, so
    ``i_A + i_inj == i_B`` at every sample.
    """
    _check_resistance(R_A, R_B)
    _same_length(e_A, e_B)
    inj = as_array(i_inj)
    if inj.shape[0] != len(e_A):
        raise ValueError(f"length mismatch: {len(e_A)} vs {inj.shape[0]}")
    g_A, g_B = 1.0 / R_A, 1.0 / R_B
    a, b = e_A.total, e_B.total
    u = (a * g_A + b * g_B + inj) / (g_A + g_B)
    i_A = (a - u) / R_A
    i_B = (u - b) / R_B
    return InjectionSolution(
        TimeSeries(i_A, Unit.AMPERE), TimeSeries(i_B, Unit.AMPERE), TimeSeries(u, Unit.VOLT)
    )


def dc_loop_current(U_DCA: float, U_DCB: float, R_A: float, R_B: float) -> float:
    _check_resistance(R_A, R_B)
    return (U_DCA - U_DCB) / (R_A + R_B)


def dc_wire_voltage(U_DCA: float, U_DCB: float, R_A: float, R_B: float) -> float:
    _check_resistance(R_A, R_B)
    return (U_DCA * R_B + U_DCB * R_A) / (R_A + R_B)


def loop_current_variance(D: float, R_A: float, R_B: float) -> float:
    """No-attack AC variance of the wire current when each EMF carries D*R."""
    _check_resistance(R_A, R_B)
    return D / (R_A + R_B)


def wire_voltage_variance(D: float, R_A: float, R_B: float) -> float:
    _check_resistance(R_A, R_B)
    return D * R_A * R_B / (R_A + R_B)
