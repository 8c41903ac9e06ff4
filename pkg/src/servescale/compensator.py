"""Forecast correction from recent forecast errors.

A regressor maps ``[y, y_upp, y_low, e_1..e_m]`` to a corrected forecast,
where ``e_1`` is the most recent realized error ``actual - forecast``.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .forecaster import Forecast
from .gbt import BoostedTrees, fit_boosted
from .trace import TraceRangeError, WorkloadTrace

logger = logging.getLogger(__name__)

DEFAULT_ERRORS = 5
KINDS = ("identity", "linear", "boosted_trees")
MIN_ROWS = {"identity": 1, "linear": 9, "boosted_trees": 100}
RIDGE_PENALTY = 1e-6
TRAIN_FRACTION = 0.8
# ``residual``: boost from the raw forecast so trees learn the correction and
# not the level, which they could not extrapolate beyond the training range
BOOSTED_DEFAULTS = {"n_rounds": 200, "max_depth": 3, "learning_rate": 0.1, "residual": True}


class CompensatorError(ValueError):
    pass


class InsufficientHistoryError(CompensatorError):
    pass


def feature_names(n_errors: int = DEFAULT_ERRORS) -> tuple[str, ...]:
    return ("y", "y_upp", "y_low") + tuple(f"e{i}" for i in range(1, n_errors + 1))


FEATURES = feature_names()


class ErrorRing:
    """The most recent forecast errors, newest first."""

    def __init__(self, capacity: int = DEFAULT_ERRORS, errors=()):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._errors: deque[float] = deque(maxlen=capacity)
        # ``errors`` is given newest first
        for e in reversed(list(errors)[:capacity]):
            self._errors.appendleft(float(e))

    def push(self, error: float) -> "ErrorRing":
        self._errors.appendleft(float(error))
        return self

    @property
    def errors(self) -> tuple[float, ...]:
        return tuple(self._errors)

    @property
    def full(self) -> bool:
        return len(self._errors) == self.capacity

    def __len__(self):
        return len(self._errors)

    def __repr__(self):
        return f"ErrorRing(capacity={self.capacity}, errors={self.errors})"


def push_error(ring: ErrorRing, actual: float, forecast_y: float) -> ErrorRing:
    return ring.push(float(actual) - float(forecast_y))


@dataclass(frozen=True)
class TrainingSet:
    X: np.ndarray
    target: np.ndarray
    features: tuple[str, ...] = FEATURES
    targets: tuple[int, ...] = ()

    def __len__(self):
        return len(self.target)


def training_set_from_arrays(actual, y, y_low, y_upp, lag: int = 1,
                             n_errors: int = DEFAULT_ERRORS, targets=None) -> TrainingSet:
    """Rows for every position with ``n_errors`` realized errors ``lag`` or more
    positions back; the first ``lag + n_errors - 1`` positions are skipped."""
    actual, y, y_low, y_upp = (np.asarray(a, dtype=float) for a in (actual, y, y_low, y_upp))
    n = len(actual)
    if not (len(y) == len(y_low) == len(y_upp) == n):
        raise CompensatorError("actual and forecast arrays differ in length")
    if lag < 1:
        raise CompensatorError("errors must be realized: lag >= 1")
    skip = lag + n_errors - 1
    rows = n - skip
    if rows <= 0:
        raise InsufficientHistoryError(
            f"{n} points cannot fill {n_errors} errors at lag {lag}; need more than {skip}")
    err = actual - y
    idx = np.arange(skip, n)
    cols = [y[idx], y_upp[idx], y_low[idx]]
    cols += [err[idx - lag - k] for k in range(n_errors)]
    X = np.column_stack(cols)
    tt = tuple(int(targets[i]) for i in idx) if targets is not None else tuple(int(i) for i in idx)
    return TrainingSet(X, actual[idx].copy(), feature_names(n_errors), tt)


def build_training_set(trace: WorkloadTrace, forecaster, targets: range, lag: int | None = None,
                       n_errors: int = DEFAULT_ERRORS) -> TrainingSet:
    """Rows for targets in ``targets`` using forecasts issued ``forecaster.horizon``
    intervals ahead. The default ``lag`` is ``horizon + 1``: the most recent
    error known when a forecast is issued."""
    targets = range(targets.start, targets.stop) if isinstance(targets, range) else range(*targets)
    if targets.start < 0 or targets.stop > len(trace):
        raise TraceRangeError(f"range [{targets.start}, {targets.stop}) outside trace of {len(trace)}")
    if lag is None:
        lag = forecaster.horizon + 1
    if len(targets) <= lag + n_errors - 1:
        raise InsufficientHistoryError(f"range of {len(targets)} points cannot fill the error ring")
    y, low, upp = forecaster.forecasts(trace, targets)
    actual = trace.values[targets.start:targets.stop]
    return training_set_from_arrays(actual, y, low, upp, lag, n_errors, targets=targets)


@dataclass(frozen=True)
class CompensatorModel:
    kind: str
    features: tuple[str, ...] = FEATURES
    coef: tuple[float, ...] = ()
    intercept: float = 0.0
    trees: BoostedTrees | None = None
    solver: str = ""
    training_report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CompensatorError(f"unknown kind {self.kind!r}")

    @property
    def n_errors(self) -> int:
        return len(self.features) - 3

    def predict(self, X) -> np.ndarray:
        """Unclamped model output for feature rows ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.features):
            raise CompensatorError(f"expected {len(self.features)} features, got {X.shape[1]}")
        if self.kind == "identity":
            return X[:, 0].copy()
        if self.kind == "linear":
            return X @ np.asarray(self.coef) + self.intercept
        return self.trees.predict(X)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "features": list(self.features), "solver": self.solver,
             "training_report": self.training_report}
        if self.kind == "linear":
            d["coef"] = list(self.coef)
            d["intercept"] = self.intercept
        elif self.kind == "boosted_trees":
            d["trees"] = self.trees.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "CompensatorModel":
        trees = BoostedTrees.from_dict(d["trees"]) if "trees" in d else None
        return cls(d["kind"], tuple(d["features"]), tuple(d.get("coef", ())), d.get("intercept", 0.0),
                   trees, d.get("solver", ""), dict(d.get("training_report", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CompensatorModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def identity_model(n_errors: int = DEFAULT_ERRORS) -> CompensatorModel:
    return CompensatorModel("identity", feature_names(n_errors))


def _fit_linear(X, y):
    A = np.column_stack([np.ones(len(X)), X])
    if np.linalg.matrix_rank(A) == A.shape[1]:
        w, *_ = np.linalg.lstsq(A, y, rcond=None)
        solver = "ols"
    else:
        # singular design: ridge on the coefficients, intercept unpenalized
        penalty = RIDGE_PENALTY * np.eye(A.shape[1])
        penalty[0, 0] = 0.0
        w = np.linalg.solve(A.T @ A + penalty, A.T @ y)
        solver = "ridge"
        logger.info("singular least-squares design; fell back to ridge (%g)", RIDGE_PENALTY)
    return tuple(float(v) for v in w[1:]), float(w[0]), solver


def _fit(kind, X, y, features, hp) -> CompensatorModel:
    if kind == "identity":
        return CompensatorModel("identity", features)
    if kind == "linear":
        coef, intercept, solver = _fit_linear(X, y)
        return CompensatorModel("linear", features, coef, intercept, solver=solver)
    trees = fit_boosted(X, y, int(hp["n_rounds"]), int(hp["max_depth"]), float(hp["learning_rate"]),
                        offset_feature=0 if hp["residual"] else None)
    return CompensatorModel("boosted_trees", features, trees=trees, solver="gbt")


def _mae(model, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.abs(np.maximum(0.0, model.predict(X)) - y)))


def train(dataset: TrainingSet, kind: str = "boosted_trees", hyperparams: dict | None = None,
          cv_folds: int = 5) -> CompensatorModel:
    """Fit on the first 80% of rows (time order) and score on the rest.

    ``mae_cv`` is the mean absolute error over ``cv_folds`` contiguous folds of
    the training part (0 disables it).
    """
    if kind not in KINDS:
        raise CompensatorError(f"unknown kind {kind!r}; expected one of {KINDS}")
    hp = dict(BOOSTED_DEFAULTS)
    unknown = set(hyperparams or {}) - set(hp)
    if unknown:
        raise CompensatorError(f"unknown hyperparameters {sorted(unknown)}")
    hp.update(hyperparams or {})
    n = len(dataset)
    if n < MIN_ROWS[kind]:
        raise InsufficientHistoryError(f"{kind} needs >= {MIN_ROWS[kind]} rows, got {n}")
    X, y = dataset.X, dataset.target
    n_train = max(MIN_ROWS[kind], int(TRAIN_FRACTION * n))
    model = _fit(kind, X[:n_train], y[:n_train], dataset.features, hp)

    cv = []
    if cv_folds >= 2 and kind != "identity" and n_train // cv_folds >= 1:
        bounds = np.linspace(0, n_train, cv_folds + 1).astype(int)
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            keep = np.r_[0:lo, hi:n_train]
            if len(keep) < MIN_ROWS[kind]:
                continue
            fold = _fit(kind, X[keep], y[keep], dataset.features, hp)
            cv.append(_mae(fold, X[lo:hi], y[lo:hi]))
    report = {
        "rows": n,
        "train_rows": n_train,
        "mae_train": _mae(model, X[:n_train], y[:n_train]),
        "mae_cv": float(np.mean(cv)) if cv else None,
        "mae_test": _mae(model, X[n_train:], y[n_train:]) if n_train < n else None,
    }
    if kind == "linear":
        report["fallback"] = model.solver == "ridge"
    if kind == "boosted_trees":
        report["hyperparams"] = hp
    return CompensatorModel(model.kind, model.features, model.coef, model.intercept, model.trees,
                            model.solver, report)


class Compensation(NamedTuple):
    value: float
    compensated: bool


def features(forecast: Forecast, ring: ErrorRing) -> np.ndarray:
    return np.array([forecast.y, forecast.y_upp, forecast.y_low, *ring.errors], dtype=float)


def compensate(model: CompensatorModel, forecast: Forecast, ring: ErrorRing) -> Compensation:
    """Corrected forecast ``max(0, model(features))``.

    Identity models return ``forecast.y`` unchanged. A ring that is not yet
    full falls back to the raw forecast with ``compensated=False``.
    """
    if model.kind == "identity":
        return Compensation(float(forecast.y), False)
    if ring.capacity != model.n_errors:
        raise CompensatorError(f"model uses {model.n_errors} errors, ring holds {ring.capacity}")
    if not ring.full:
        return Compensation(float(forecast.y), False)
    value = float(model.predict(features(forecast, ring)[None, :])[0])
    return Compensation(max(0.0, value), True)


def compensate_series(model: CompensatorModel, actual, y, y_low, y_upp, lag: int):
    """Batch form of replaying ``push_error``/``compensate`` along aligned arrays.

    Position ``t`` sees the errors of positions ``t - lag, t - lag - 1, ...``;
    positions without a full ring keep the raw forecast. Returns
    ``(values, compensated_flags)``.
    """
    y = np.asarray(y, dtype=float)
    out = y.copy()
    flags = np.zeros(len(y), dtype=bool)
    if model.kind == "identity":
        return out, flags
    skip = lag + model.n_errors - 1
    if len(y) <= skip:
        return out, flags
    ds = training_set_from_arrays(actual, y, y_low, y_upp, lag, model.n_errors)
    out[skip:] = np.maximum(0.0, model.predict(ds.X))
    flags[skip:] = True
    return out, flags


__all__ = [
    "CompensatorError", "CompensatorModel", "Compensation", "ErrorRing", "FEATURES",
    "InsufficientHistoryError", "TrainingSet", "build_training_set", "compensate", "compensate_series", "feature_names",
    "identity_model", "push_error", "train", "training_set_from_arrays",
]
