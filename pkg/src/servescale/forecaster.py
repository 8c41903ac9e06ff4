"""Additive workload forecaster: logistic trend + Fourier seasonality + holidays.

Fitting runs in three stages on a window of observed counts:

1. trend: carrying capacity fixed at 1.2x the window maximum, growth rate
   and offset by a coarse grid followed by Gauss-Newton;
2. seasonality and holiday effects: ordinary least squares on the
   detrended counts;
3. the 5th/95th percentiles of the in-sample residuals give the forecast
   bounds.
"""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .curves import SeasonalityParams, TrendParams, fourier_design, logistic
from .trace import TraceWindow, WorkloadTrace

logger = logging.getLogger(__name__)

CAPACITY_HEADROOM = 1.2
DEFAULT_PERIOD = 1440
GRID_SIZE = 21
GRID_POINTS = 128
GN_TOL = 1e-8
GN_MAX_ITER = 100
BACKFIT_MAX_ROUNDS = 30
BACKFIT_TOL = 1e-7
SECONDS_PER_DAY = 86400

__all__ = [
    "CAPACITY_HEADROOM", "Forecast", "ForecastError", "ForecastModel", "Holiday",
    "SeasonalityParams", "TrendParams", "ape95", "fit", "fit_range", "fit_seasonality", "predict", "predict_many",
    "RollingForecaster", "retrain_rolling", "rolling_forecasts", "tune", "load_holidays",
]


class ForecastError(ValueError):
    pass


class InsufficientDataError(ForecastError):
    pass


class DirectionError(ForecastError):
    pass


@dataclass(frozen=True)
class Holiday:
    """A holiday starting on ``epoch_day`` (days since 1970-01-01 UTC).

    One coefficient covers the whole ``window_days`` span; ``effect`` is the
    fitted value (0 until fitted).
    """

    epoch_day: int
    window_days: int = 1
    effect: float = 0.0

    def __post_init__(self):
        if self.window_days < 1:
            raise ValueError("holiday window must span at least one day")

    def indicator(self, t, start_epoch: int, resolution: int) -> np.ndarray:
        day = (start_epoch + np.asarray(t, dtype=np.int64) * resolution) // SECONDS_PER_DAY
        return ((day >= self.epoch_day) & (day < self.epoch_day + self.window_days)).astype(float)


def _check_holidays(holidays: Sequence[Holiday]) -> tuple[Holiday, ...]:
    holidays = tuple(holidays or ())
    days = [h.epoch_day for h in holidays]
    if len(set(days)) != len(days):
        raise ForecastError("holiday days must be pairwise distinct")
    return holidays


@dataclass(frozen=True)
class Forecast:
    t_target: int
    y: float
    y_low: float
    y_upp: float


@dataclass(frozen=True)
class ForecastModel:
    trend: TrendParams
    seasonality: SeasonalityParams
    holidays: tuple[Holiday, ...]
    residual_q05: float
    residual_q95: float
    trained_window: tuple[int, int]
    extra_seasonality: tuple[SeasonalityParams, ...] = ()
    start_epoch: int = 0
    resolution: int = 60
    t_forecast: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if self.residual_q05 > self.residual_q95:
            raise ForecastError("residual q05 must not exceed q95")

    @property
    def window_len(self) -> int:
        return self.trained_window[1] - self.trained_window[0]

    def components(self, t):
        """Return ``(g, s, h)`` evaluated at interval indices ``t``."""
        t = np.asarray(t, dtype=float)
        g = self.trend(t)
        s = self.seasonality(t)
        for block in self.extra_seasonality:
            s = s + block(t)
        h = np.zeros_like(t)
        for hol in self.holidays:
            h = h + hol.effect * hol.indicator(t, self.start_epoch, self.resolution)
        return g, s, h

    def mean(self, t):
        g, s, h = self.components(t)
        return g + s + h

    def to_dict(self) -> dict:
        def block(b):
            return {"P": b.P, "N": b.N, "a": list(b.a), "b": list(b.b)}

        return {
            "trend": {"C": self.trend.C, "k": self.trend.k, "m_offset": self.trend.m_offset},
            "seasonality": block(self.seasonality),
            "extra_seasonality": [block(b) for b in self.extra_seasonality],
            "holidays": [
                {"epoch_day": h.epoch_day, "window_days": h.window_days, "effect": h.effect}
                for h in self.holidays
            ],
            "residual_quantiles": {"q05": self.residual_q05, "q95": self.residual_q95},
            "trained_window": list(self.trained_window),
            "start_epoch": self.start_epoch,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, d) -> "ForecastModel":
        def block(b):
            return SeasonalityParams(b["P"], tuple(b["a"]), tuple(b["b"]))

        return cls(
            TrendParams(**d["trend"]),
            block(d["seasonality"]),
            tuple(Holiday(**h) for h in d["holidays"]),
            d["residual_quantiles"]["q05"],
            d["residual_quantiles"]["q95"],
            tuple(d["trained_window"]),
            tuple(block(b) for b in d.get("extra_seasonality", [])),
            d.get("start_epoch", 0),
            d.get("resolution", 60),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- stage 1: trend ----------------------------------------------------------


def _sse(y, t, C, k, m):
    r = y - logistic(t, C, k, m)
    return float(r @ r)


def _grid_start(t: np.ndarray, y: np.ndarray, C: float) -> tuple[float, float]:
    ks = np.logspace(-5, 0, GRID_SIZE)
    ms = np.linspace(t[0], t[-1], GRID_SIZE)
    # the grid only seeds Gauss-Newton, so score it on an evenly strided subset
    stride = max(1, len(t) // GRID_POINTS)
    t, y = t[::stride], y[::stride]
    z = -ks[:, None, None] * (t[None, None, :] - ms[None, :, None])
    with np.errstate(over="ignore"):
        g = C / (1.0 + np.exp(z))
    sse = ((g - y) ** 2).sum(axis=-1)
    ik, im = np.unravel_index(int(np.argmin(sse)), sse.shape)
    return float(ks[ik]), float(ms[im])


def _gauss_newton(t: np.ndarray, y: np.ndarray, C: float, k: float, m: float) -> tuple[float, float]:
    """Refine ``(k, m)`` with C fixed; step halving keeps the SSE monotone."""
    best = _sse(y, t, C, k, m)
    for _ in range(GN_MAX_ITER):
        with np.errstate(over="ignore"):
            sig = 1.0 / (1.0 + np.exp(-k * (t - m)))
        r = y - C * sig
        d = C * sig * (1.0 - sig)
        J = np.column_stack([d * (t - m), -d * k])
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        if not np.all(np.isfinite(step)):
            break
        lam = 1.0
        while lam > 1e-6:
            k_new, m_new = k + lam * step[0], m + lam * step[1]
            cand = _sse(y, t, C, k_new, m_new)
            if cand <= best:
                break
            lam *= 0.5
        else:
            break
        # stop on parameter convergence, or when the SSE no longer moves
        # (flat data leaves (k, m) weakly identified)
        converged = ((abs(k_new - k) <= GN_TOL * max(1.0, abs(k))
                      and abs(m_new - m) <= GN_TOL * max(1.0, abs(m)))
                     or best - cand <= GN_TOL * best)
        k, m, best = k_new, m_new, cand
        if converged:
            break
    return k, m


# -- stage 2: seasonality + holidays ----------------------------------------


def _design(t, blocks: Sequence[tuple[float, int]], holidays, start_epoch, resolution):
    cols = [np.ones_like(t, dtype=float)]
    for P, N in blocks:
        cols.append(fourier_design(t, P, N))
    for hol in holidays:
        cols.append(hol.indicator(t, start_epoch, resolution)[:, None])
    return np.column_stack(cols)


def fit_seasonality(t, values, P: float, N: int) -> SeasonalityParams:
    """OLS of ``values`` on a constant plus the 2N Fourier columns."""
    t = np.asarray(t, dtype=float)
    X = _design(t, [(P, N)], (), 0, 60)
    coef, _, rank, _ = np.linalg.lstsq(X, np.asarray(values, dtype=float), rcond=None)
    if rank < X.shape[1]:
        raise ForecastError("singular seasonal design; try a smaller Fourier order")
    return SeasonalityParams(P, (2.0 * coef[0], *coef[1:N + 1]), tuple(coef[N + 1:]))


def fit_range(trace: WorkloadTrace, start: int, end: int, P: float = DEFAULT_PERIOD, N: int = 10,
              holidays: Sequence[Holiday] = (), extra: Sequence[tuple[float, int]] = ()) -> ForecastModel:
    """Fit the model on intervals ``[start, end)`` of ``trace``."""
    clock = time.perf_counter()
    if not 0 <= start < end <= len(trace):
        raise ForecastError(f"window [{start}, {end}) outside trace of length {len(trace)}")
    if N < 1 or not P > 0:
        raise ForecastError("need P > 0 and N >= 1")
    if N > P / 2:
        raise ForecastError(f"Fourier order {N} exceeds P/2 = {P / 2}")
    W = end - start
    if W < 2 * N + 2:
        raise InsufficientDataError(f"window of {W} intervals is too short for order {N}")
    if W < 2 * P:
        warnings.warn(f"training window {W} shorter than two periods ({2 * P})", stacklevel=2)
    holidays = _check_holidays(holidays)

    t = np.arange(start, end, dtype=float)
    y = np.asarray(trace.counts[start:end], dtype=float)
    peak = float(y.max())
    C = CAPACITY_HEADROOM * peak if peak > 0 else 1.0

    blocks = [(P, N), *[(float(p), int(n)) for p, n in extra]]
    X = _design(t, blocks, holidays, trace.start_epoch, trace.resolution)
    # holidays outside the window have an all-zero column: keep them at 0
    active = np.ones(X.shape[1], dtype=bool)
    n_base = X.shape[1] - len(holidays)
    for j in range(len(holidays)):
        if not X[:, n_base + j].any():
            active[n_base + j] = False
    Xa = X[:, active]
    if np.linalg.matrix_rank(Xa) < Xa.shape[1]:
        raise ForecastError(
            f"singular seasonal design ({Xa.shape[1]} columns); try a smaller Fourier order"
        )
    pinv = np.linalg.pinv(Xa)

    # stage 1 then stage 2, alternated: the trend is refitted on counts with
    # the current periodic/holiday part removed until (k, m) settle
    k, m = _grid_start(t, y, C)
    g = logistic(t, C, k, m)
    periodic = np.zeros_like(y)
    coef_a = np.zeros(Xa.shape[1])
    for _ in range(BACKFIT_MAX_ROUNDS):
        k, m = _gauss_newton(t, y - periodic, C, k, m)
        g_new = logistic(t, C, k, m)
        coef_a = pinv @ (y - g_new)
        # the constant column stays out of what the trend sees: level belongs to g
        periodic = Xa @ coef_a - coef_a[0]
        shift = float(np.max(np.abs(g_new - g)))
        g = g_new
        if shift <= BACKFIT_TOL * max(1.0, peak):
            break
    trend = TrendParams(C, k, m)
    coef = np.zeros(X.shape[1])
    coef[active] = coef_a

    intercept = coef[0]
    pos = 1
    seasonal = []
    for i, (bp, bn) in enumerate(blocks):
        cos_c = coef[pos:pos + bn]
        sin_c = coef[pos + bn:pos + 2 * bn]
        pos += 2 * bn
        a0 = 2.0 * intercept if i == 0 else 0.0
        seasonal.append(SeasonalityParams(bp, (a0, *cos_c), tuple(sin_c)))
    fitted_holidays = tuple(replace(h, effect=float(c)) for h, c in zip(holidays, coef[pos:]))

    model = ForecastModel(
        trend=trend,
        seasonality=seasonal[0],
        holidays=fitted_holidays,
        residual_q05=0.0,
        residual_q95=0.0,
        trained_window=(start, end),
        extra_seasonality=tuple(seasonal[1:]),
        start_epoch=trace.start_epoch,
        resolution=trace.resolution,
    )
    eps = y - model.mean(t)
    q05, q95 = np.quantile(eps, [0.05, 0.95])
    # t_forecast: wall time to produce a usable model (diagnostic, not serialized)
    return replace(model, residual_q05=float(q05), residual_q95=float(q95),
                   t_forecast=time.perf_counter() - clock)


def fit(window: TraceWindow, P: float = DEFAULT_PERIOD, N: int = 10, holidays: Sequence[Holiday] = (),
        extra: Sequence[tuple[float, int]] = ()) -> ForecastModel:
    """Fit on the training segment of ``window``."""
    return fit_range(window.trace, 0, window.train_len, P, N, holidays, extra)


# -- prediction --------------------------------------------------------------


def predict_many(model: ForecastModel, targets) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    targets = np.asarray(targets)
    if targets.size and targets.min() < model.trained_window[1]:
        raise DirectionError(
            f"cannot forecast interval {int(targets.min())} before the end of training "
            f"({model.trained_window[1]})"
        )
    raw = model.mean(targets)
    low = np.maximum(0.0, raw + model.residual_q05)
    upp = np.maximum(0.0, raw + model.residual_q95)
    # clip keeps low <= y <= upp even if the residual quantiles straddle 0 oddly
    y = np.clip(np.maximum(0.0, raw), low, upp)
    return y, low, upp


def predict(model: ForecastModel, t_target: int) -> Forecast:
    y, low, upp = predict_many(model, [t_target])
    return Forecast(int(t_target), float(y[0]), float(low[0]), float(upp[0]))


def _seasonal_spec(model: ForecastModel):
    return model.seasonality.P, model.seasonality.N, [(b.P, b.N) for b in model.extra_seasonality]


def retrain_rolling(model: ForecastModel, trace: WorkloadTrace, now: int) -> ForecastModel:
    """Refit on the ``model.window_len`` intervals ending (exclusive) at ``now``."""
    if now <= model.trained_window[1] - 1:
        raise ForecastError("retraining needs at least one new interval")
    W = model.window_len
    if now - W < 0:
        raise InsufficientDataError(f"only {now} intervals observed, window needs {W}")
    P, N, extra = _seasonal_spec(model)
    holidays = tuple(replace(h, effect=0.0) for h in model.holidays)
    return fit_range(trace, now - W, now, P, N, holidays, extra)


def rolling_forecasts(trace: WorkloadTrace, targets: Iterable[int], horizon: int, W: int,
                      P: float = DEFAULT_PERIOD, N: int = 10, holidays: Sequence[Holiday] = (),
                      retrain_every: int = 1, extra: Sequence[tuple[float, int]] = ()):
    """Forecast each target from a model fitted ``horizon`` intervals earlier.

    For target ``T`` the issue time is ``T - horizon`` and the model sees
    intervals ``[T - horizon - W, T - horizon)``. With ``retrain_every > 1``
    the model is refitted only on issue times that are multiples of it
    (relative to the first issue) and reused in between.
    Returns arrays ``(y, y_low, y_upp)``.
    """
    targets = list(targets)
    if horizon < 0:
        raise ForecastError("horizon must be >= 0")
    y = np.empty(len(targets))
    low = np.empty(len(targets))
    upp = np.empty(len(targets))
    models: dict[int, ForecastModel] = {}
    first_issue = None
    for j, T in enumerate(targets):
        issue = T - horizon
        if issue - W < 0:
            raise InsufficientDataError(f"target {T} needs {W} intervals before {issue}")
        if first_issue is None:
            first_issue = issue
        anchor = issue - (issue - first_issue) % max(1, retrain_every)
        model = models.get(anchor)
        if model is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = fit_range(trace, anchor - W, anchor, P, N, holidays, extra)
            models.clear()
            models[anchor] = model
        yy, ll, uu = predict_many(model, [T])
        y[j], low[j], upp[j] = yy[0], ll[0], uu[0]
    return y, low, upp


@dataclass(frozen=True)
class RollingForecaster:
    """Recipe for forecasts issued ``horizon`` intervals ahead of their target
    by a model refitted on the trailing ``W`` intervals."""

    horizon: int
    W: int
    P: float = DEFAULT_PERIOD
    N: int = 10
    holidays: tuple[Holiday, ...] = ()
    retrain_every: int = 1
    extra: tuple[tuple[float, int], ...] = ()

    def forecasts(self, trace: WorkloadTrace, targets: Iterable[int]):
        return rolling_forecasts(trace, targets, self.horizon, self.W, self.P, self.N,
                                 self.holidays, self.retrain_every, self.extra)

    @property
    def first_target(self) -> int:
        """Smallest target with a full training window behind its issue time."""
        return self.W + self.horizon


# -- hyper-parameter selection -----------------------------------------------


def ape95(actual, forecast) -> float:
    """95th percentile of absolute percentage error over non-zero actuals."""
    actual = np.asarray(actual, dtype=float)
    forecast = np.asarray(forecast, dtype=float)
    mask = actual > 0
    if not mask.any():
        return math.nan
    return float(np.quantile(np.abs(forecast[mask] - actual[mask]) / actual[mask], 0.95))


@dataclass(frozen=True)
class TuneResult:
    N: int
    W: int
    score: float
    cells: tuple[tuple[int, int, float | None, str], ...]


def tune(window: TraceWindow, N_grid: Sequence[int] = (10, 15, 20, 25, 30), W_grid: Sequence[int] = (),
         P: float = DEFAULT_PERIOD, holidays: Sequence[Holiday] = (), executor=None) -> TuneResult:
    """Pick ``(N, W)`` with the lowest validation APE95; ties go to smaller N, then W.

    Each cell fits on the ``W`` intervals preceding the validation segment
    and forecasts the whole segment. Failing cells are excluded.
    """
    if not N_grid:
        raise ForecastError("empty Fourier-order grid")
    W_grid = tuple(W_grid) or (window.train_len,)
    if window.validation_len <= 0:
        raise ForecastError("tuning needs a validation segment")
    end = window.train_len
    val = np.arange(window.validation.start, window.validation.stop)
    actual = np.asarray(window.trace.counts, dtype=float)[val]

    def run(cell):
        N, W = cell
        try:
            if W > end:
                raise InsufficientDataError(f"window {W} exceeds the {end} training intervals")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model = fit_range(window.trace, end - W, end, P, N, holidays)
            y, _, _ = predict_many(model, val)
            return N, W, ape95(actual, y), ""
        except ForecastError as exc:
            return N, W, None, str(exc)

    cells = [(int(N), int(W)) for N in N_grid for W in W_grid]
    results = list(executor.map(run, cells) if executor is not None else map(run, cells))
    ok = [r for r in results if r[2] is not None and not math.isnan(r[2])]
    if not ok:
        raise ForecastError("every grid cell failed: " + "; ".join(r[3] for r in results))
    N, W, score, _ = min(ok, key=lambda r: (r[2], r[0], r[1]))
    return TuneResult(N, W, score, tuple(results))


def load_holidays(path) -> tuple[Holiday, ...]:
    """One holiday per line: ``epoch_day[,window_days]``; ``#`` starts a comment."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            day = int(parts[0])
            span = int(parts[1]) if len(parts) > 1 and parts[1] else 1
        except ValueError:
            raise ForecastError(f"{path}:{lineno}: malformed holiday line {line!r}") from None
        out.append(Holiday(day, span))
    return _check_holidays(out)
