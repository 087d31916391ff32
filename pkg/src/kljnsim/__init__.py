"""Monte Carlo simulator of the Kirchhoff-law-Johnson-noise key exchanger with parasitic
DC sources, its active attacks and the defences against them."""

from .config import (
    Choice,
    Commitment,
    DetectorConfig,
    PartyConfig,
    PhysicsConfig,
    Quantity,
    ScenarioConfig,
    Variant,
)
from .harness import DetectionReport, Experiment, fit_exponential_decay, run_monte_carlo, sweep
from .protocol import BepRecord, KeyRecord, exchange_key, run_bep
from .signals import RngStream, TimeSeries, Unit

__version__ = "0.1.0"
