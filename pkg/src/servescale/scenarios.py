"""Canonical synthetic inputs: latency profiles and workload shapes."""

from __future__ import annotations

import math

from .curves import SeasonalityParams, TrendParams
from .profiler import ExecutionProfile, FittedDistribution, SetupTimes
from .trace import SyntheticSpec

# compressed "day": 288 one-minute intervals
COMPRESSED_DAY = 288

DEFAULT_SETUP = SetupTimes(vm=90.0, cd=30.0, ml=10.0, mu=0.0)


def default_distributions() -> dict[int, FittedDistribution]:
    """Service-time laws of a model that speeds up sub-linearly with cores."""
    return {
        2: FittedDistribution("log-normal", (math.log(0.70), 0.15)),
        4: FittedDistribution("log-normal", (math.log(0.45), 0.15)),
        8: FittedDistribution("log-normal", (math.log(0.30), 0.15)),
    }


def default_profile(min_mem: float = 2.0, setup: SetupTimes = DEFAULT_SETUP, q: float = 0.95) -> ExecutionProfile:
    return ExecutionProfile.from_distributions("synthetic-model", default_distributions(), q, min_mem, setup)


def diurnal_spec(length: int = 10_000, seed: int = 7, period: int = COMPRESSED_DAY,
                 noise_sigma: float = 5.0) -> SyntheticSpec:
    """Slowly growing load with a daily cycle and one harmonic."""
    return SyntheticSpec(
        length=length,
        base_level=40.0,
        trend=TrendParams(120.0, 0.0004, length / 2),
        harmonics=(SeasonalityParams(float(period), (0.0, 60.0, 10.0), (20.0, 5.0)),),
        noise_sigma=noise_sigma,
        seed=seed,
    )


def regime_shift_spec(length: int = 4_500, seed: int = 11, period: int = COMPRESSED_DAY,
                      shifts=((1000, 60.0), (1500, -50.0), (2000, 70.0), (2600, -60.0),
                              (3300, 80.0), (3900, -40.0))) -> SyntheticSpec:
    """Daily cycle with abrupt level shifts the forecaster adapts to only slowly."""
    return SyntheticSpec(
        length=length,
        base_level=150.0,
        harmonics=(SeasonalityParams(float(period), (0.0, 60.0, 10.0), (20.0, 5.0)),),
        noise_sigma=5.0,
        seed=seed,
        level_shifts=tuple(shifts),
    )


SHAPES = {"diurnal": diurnal_spec, "regime-shift": regime_shift_spec}
