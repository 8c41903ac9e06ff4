"""Trend and seasonality curve families shared by the generator and the forecaster."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrendParams:
    """Logistic trend ``C / (1 + exp(-k (t - m_offset)))``."""

    C: float
    k: float
    m_offset: float

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"carrying capacity must be positive, got {self.C}")
        if not np.isfinite(self.k) or not np.isfinite(self.m_offset):
            raise ValueError("growth rate and offset must be finite")

    def __call__(self, t):
        return logistic(t, self.C, self.k, self.m_offset)


@dataclass(frozen=True)
class SeasonalityParams:
    """Fourier block of order N with period P (in intervals).

    ``a`` holds a_0..a_N and ``b`` holds b_1..b_N; the block evaluates to
    ``a_0/2 + sum_n a_n cos(2 pi n t / P) + b_n sin(2 pi n t / P)``.
    """

    P: float
    a: tuple[float, ...]
    b: tuple[float, ...]

    def __post_init__(self):
        if not self.P > 0:
            raise ValueError(f"period must be positive, got {self.P}")
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if len(self.b) < 1 or len(self.a) != len(self.b) + 1:
            raise ValueError(
                f"need len(a) == len(b) + 1 >= 2, got {len(self.a)} and {len(self.b)}"
            )

    @property
    def N(self) -> int:
        return len(self.b)

    def __call__(self, t):
        return fourier(t, self.P, self.a, self.b)


def logistic(t, C, k, m_offset):
    z = -k * (np.asarray(t, dtype=float) - m_offset)
    # exp overflow saturates to 0 contribution, which is the right limit
    with np.errstate(over="ignore"):
        return C / (1.0 + np.exp(z))


def fourier_design(t, P, N):
    """Columns [cos(2 pi n t/P) for n=1..N] + [sin(2 pi n t/P) for n=1..N]."""
    t = np.asarray(t, dtype=float)
    n = np.arange(1, N + 1)
    # reduce t modulo P first so s(t) and s(t+P) see identical arguments
    phase = 2.0 * np.pi * np.mod(t, P)[..., None] * n / P
    return np.concatenate([np.cos(phase), np.sin(phase)], axis=-1)


def fourier(t, P, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    X = fourier_design(t, P, len(b))
    return 0.5 * a[0] + X @ np.concatenate([a[1:], b])
