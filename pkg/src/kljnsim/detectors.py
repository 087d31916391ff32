"""Eavesdropper detectors available to Alice and Bob.

* instantaneous comparison of exchanged readings over the authenticated channel,
* a local time-average test of the DC level against the no-attack baseline,
* comparison of the AC components only (defence against current injection).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .circuit import dc_loop_current, dc_wire_voltage
from .config import Choice, PartyConfig, Quantity
from .signals import as_array


@dataclass(frozen=True)
class DetectorVerdict:
    flagged: bool
    statistic: float
    threshold: float
    agreement_count: int
    first_flag_index: Optional[int] = None

    def hidden_through(self, horizon_n: int) -> bool:
        """True when no disagreement occurred in the first ``horizon_n`` samples."""
        return self.first_flag_index is None or self.first_flag_index >= horizon_n


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("Wilson interval needs n >= 1")
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # clamp so the interval always contains the point estimate despite rounding
    return min(max(0.0, centre - half), p), max(min(1.0, centre + half), p)


def _paired(ts_A, ts_B) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_array(ts_A), as_array(ts_B)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def instantaneous_compare(ts_A, ts_B, epsilon: float) -> DetectorVerdict:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    a, b = _paired(ts_A, ts_B)
    diff = np.abs(a - b)
    bad = np.flatnonzero(diff > epsilon)
    stat = float(diff.max()) if diff.size else 0.0
    if bad.size == 0:
        return DetectorVerdict(False, stat, epsilon, a.size)
    first = int(bad[0])
    return DetectorVerdict(True, stat, epsilon, first, first)


def ac_compare(ts_A, ts_B, epsilon: float) -> DetectorVerdict:
    a, b = _paired(ts_A, ts_B)
    return instantaneous_compare(a - a.mean(), b - b.mean(), epsilon)


def combine_verdicts(*verdicts: DetectorVerdict) -> DetectorVerdict:
    """Logical OR of per-sample comparisons; the statistic is the worst deviation/threshold."""
    firsts = [v.first_flag_index for v in verdicts if v.first_flag_index is not None]
    stat = max(v.statistic / v.threshold for v in verdicts)
    first = min(firsts) if firsts else None
    count = first if first is not None else min(v.agreement_count for v in verdicts)
    return DetectorVerdict(first is not None, stat, 1.0, count, first)


def expected_dc(
    own_choice: Choice,
    classified_partner_choice: Choice,
    alice: PartyConfig,
    bob: PartyConfig,
    quantity: Quantity,
    side: str = "alice",
) -> float:
    """No-attack DC level of the wire current or voltage given a party's view of the state."""
    if side == "alice":
        R_A, R_B = alice.resistance(own_choice), bob.resistance(classified_partner_choice)
    elif side == "bob":
        R_A, R_B = alice.resistance(classified_partner_choice), bob.resistance(own_choice)
    else:
        raise ValueError(f"side must be 'alice' or 'bob', got {side!r}")
    if Quantity(quantity) is Quantity.CURRENT:
        return dc_loop_current(alice.dc_volt, bob.dc_volt, R_A, R_B)
    return dc_wire_voltage(alice.dc_volt, bob.dc_volt, R_A, R_B)


def dc_average_test(ts, baseline: float, ac_rms: float, kappa: float) -> DetectorVerdict:
    """Flag when the BEP time average departs from the baseline by more than kappa standard errors."""
    x = as_array(ts)
    n = x.size
    if n < 2:
        raise ValueError("dc_average_test needs at least two samples")
    if ac_rms < 0 or not kappa > 0:
        raise ValueError(f"need ac_rms >= 0 and kappa > 0, got {ac_rms}, {kappa}")
    stat = abs(float(x.mean()) - baseline)
    threshold = kappa * ac_rms / math.sqrt(n)
    flagged = stat > threshold
    return DetectorVerdict(flagged, stat, threshold, 0 if flagged else n)


def hidden_probability(verdicts: Sequence[DetectorVerdict], horizon_n: int):
    """Fraction of trials that stayed unflagged through ``horizon_n`` samples, with 95% Wilson CI."""
    if len(verdicts) == 0:
        raise ValueError("hidden_probability needs at least one verdict")
    hidden = sum(v.hidden_through(horizon_n) for v in verdicts)
    return hidden / len(verdicts), wilson_interval(hidden, len(verdicts))
