"""Value types shared by the protocol, attack and detector modules."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional


class Choice(str, enum.Enum):
    L = "L"
    H = "H"

    @property
    def other(self) -> "Choice":
        return Choice.H if self is Choice.L else Choice.L


class Variant(str, enum.Enum):
    NONE = "none"
    MITM_RESISTOR = "mitm_resistor"
    TWIN_CURRENT = "twin_current"
    TWIN_VOLTAGE = "twin_voltage"
    INJECTION = "injection"


class Quantity(str, enum.Enum):
    CURRENT = "current"
    VOLTAGE = "voltage"


@dataclass(frozen=True)
class PhysicsConfig:
    """Noise scale D (V^2/Ohm, i.e. 4 k T_eff B folded into one constant) and BEP length.

    A resistor R carries per-sample EMF noise variance ``D * R``.
    ``classify_by`` selects which AC variance the parties invert to identify
    the partner's resistor.
    """

    noise_scale_D: float = 1e-6
    samples_per_bep: int = 2000
    measurement_noise_rms: float = 0.0
    classify_by: Quantity = Quantity.VOLTAGE

    def __post_init__(self):
        if not self.noise_scale_D > 0:
            raise ValueError(f"noise_scale_D must be positive, got {self.noise_scale_D}")
        if self.samples_per_bep < 2:
            raise ValueError(f"samples_per_bep must be at least 2, got {self.samples_per_bep}")
        if self.measurement_noise_rms < 0:
            raise ValueError("measurement_noise_rms must be non-negative")
        object.__setattr__(self, "classify_by", Quantity(self.classify_by))


@dataclass(frozen=True)
class PartyConfig:
    r_low: float = 1e3
    r_high: float = 1e4
    dc_volt: float = 0.0

    def __post_init__(self):
        if not 0 < self.r_low < self.r_high:
            raise ValueError(f"need 0 < r_low < r_high, got r_low={self.r_low}, r_high={self.r_high}")

    def resistance(self, choice: Choice) -> float:
        return self.r_low if Choice(choice) is Choice.L else self.r_high


@dataclass(frozen=True)
class Commitment:
    """Eve's per-BEP DC commitment toward one end in the compensated twin-voltage attack.

    ``assumed is None`` means an equal-pair emulation: Eve mirrors the party's
    resistor and fixes the wire DC at the average of the two parasitic levels,
    which is correct whatever the party picked.  Otherwise Eve bets that the
    party connected ``assumed`` and emulates the opposite resistor.
    """

    assumed: Optional[Choice] = None

    @property
    def secure(self) -> bool:
        return self.assumed is not None

    @classmethod
    def parse(cls, text: str) -> "Commitment":
        if text == "equal":
            return cls(None)
        return cls(Choice(text))


RANDOM_COMMITMENT = "random"


@dataclass(frozen=True)
class ScenarioConfig:
    variant: Variant = Variant.NONE
    dc_compensation: bool = False
    # per-end fixed commitments, or "random" to let Eve draw a fresh one every BEP
    committed_emulation: Optional[object] = None
    injection_rms: Optional[float] = None
    series_dc_volt: float = 0.0
    eve_knows_dc: bool = True
    # |corr_A - corr_B| at or below this makes Eve abstain from a guess
    eve_threshold: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.dc_compensation and self.variant not in (Variant.MITM_RESISTOR, Variant.TWIN_VOLTAGE):
            raise ValueError(f"dc_compensation is not defined for variant {self.variant.value!r}")
        needs_commitment = self.variant is Variant.TWIN_VOLTAGE and self.dc_compensation
        if needs_commitment and self.committed_emulation is None:
            raise ValueError("twin_voltage with dc_compensation needs committed_emulation (per-end map or 'random')")
        if self.committed_emulation is not None and not needs_commitment:
            raise ValueError("committed_emulation requires variant twin_voltage with dc_compensation")
        if isinstance(self.committed_emulation, str):
            if self.committed_emulation != RANDOM_COMMITMENT:
                raise ValueError(f"committed_emulation must be a per-end map or 'random', "
                                 f"got {self.committed_emulation!r}")
        elif self.committed_emulation is not None:
            ends = {}
            for end, value in dict(self.committed_emulation).items():
                if end not in ("alice", "bob"):
                    raise ValueError(f"committed_emulation end must be 'alice' or 'bob', got {end!r}")
                ends[end] = value if isinstance(value, Commitment) else Commitment.parse(value)
            object.__setattr__(self, "committed_emulation", ends)
        if self.injection_rms is not None and not (self.injection_rms >= 0 and math.isfinite(self.injection_rms)):
            raise ValueError(f"injection_rms must be non-negative, got {self.injection_rms}")
        if self.series_dc_volt != 0.0 and self.variant is not Variant.TWIN_CURRENT:
            raise ValueError("series_dc_volt only applies to twin_current")

    @property
    def effective_compensation(self) -> bool:
        return self.dc_compensation and self.eve_knows_dc


@dataclass(frozen=True)
class DetectorConfig:
    """Detector tuning.

    ``epsilon`` is dimensionless: the comparison tolerance is epsilon times the
    no-attack rms of the compared quantity.  ``None`` applies the default rule
    (5x the measurement noise rms when that is non-zero, else 1e-9 x rms).
    """

    epsilon: Optional[float] = None
    kappa: float = 5.0
    enabled: frozenset = frozenset({"instant", "dc", "ac"})

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        enabled = frozenset(self.enabled)
        unknown = enabled - {"instant", "dc", "ac"}
        if unknown:
            raise ValueError(f"unknown detectors: {sorted(unknown)}")
        object.__setattr__(self, "enabled", enabled)

    def tolerance(self, expected_rms: float, measurement_noise_rms: float) -> float:
        if self.epsilon is not None:
            return self.epsilon * expected_rms
        if measurement_noise_rms > 0:
            return 5.0 * measurement_noise_rms
        return 1e-9 * expected_rms
