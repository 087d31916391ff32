"""Seeded random streams, Gaussian noise and the elementary waveform statistics."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Unit(str, enum.Enum):
    VOLT = "volt"
    AMPERE = "ampere"


@dataclass(frozen=True)
class RngStream:
    """Hierarchical substream of a single root seed.

    Streams with the same ``(root_seed, stream_path)`` replay the same samples;
    distinct paths map to independent ``SeedSequence`` spawn keys.
    """

    root_seed: int
    stream_path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.root_seed < 2**64:
            raise ValueError(f"root_seed must be a 64-bit unsigned integer, got {self.root_seed}")
        path = tuple(int(p) for p in self.stream_path)
        if any(p < 0 for p in path):
            raise ValueError(f"stream_path entries must be non-negative, got {path}")
        object.__setattr__(self, "stream_path", path)

    def child(self, index: int) -> "RngStream":
        return RngStream(self.root_seed, self.stream_path + (index,))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.root_seed, spawn_key=self.stream_path)
        return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled waveform of one bit exchange period."""

    samples: np.ndarray
    unit: Unit = Unit.VOLT

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1:
            raise ValueError("TimeSeries samples must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError("TimeSeries samples must be finite")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "unit", Unit(self.unit))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.samples
        return self.samples.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return self.unit == other.unit and np.array_equal(self.samples, other.samples)

    __hash__ = None


def as_array(ts) -> np.ndarray:
    if isinstance(ts, TimeSeries):
        return ts.samples
    return np.asarray(ts, dtype=float)


def gaussian_noise(stream: RngStream, variance: float, n: int, unit: Unit = Unit.VOLT) -> TimeSeries:
    """n i.i.d. zero-mean Gaussian samples of the given variance, drawn from ``stream``."""
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if variance == 0:
        return TimeSeries(np.zeros(n), unit)
    z = stream.generator().standard_normal(n)
    return TimeSeries(np.sqrt(variance) * z, unit)


def mean(ts) -> float:
    x = as_array(ts)
    if x.size == 0:
        raise ValueError("mean of an empty series")
    return float(np.mean(x))


def ac_variance(ts) -> float:
    """Population variance about the sample mean (the power of the AC component)."""
    x = as_array(ts)
    if x.size < 2:
        raise ValueError("ac_variance needs at least two samples")
    return float(np.var(x))


def cross_correlation(a, b) -> float:
    """Raw zero-lag second moment (1/n) sum a_k b_k, no mean removal."""
    x, y = as_array(a), as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.size == 0:
        raise ValueError("cross_correlation of empty series")
    return float(np.dot(x, y) / x.size)
