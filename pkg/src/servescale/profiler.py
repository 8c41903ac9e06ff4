"""Execution-time distribution fitting per core count.

Each supported family is fitted by maximum likelihood, the fits are ranked
by the one-sample Kolmogorov-Smirnov distance, and the winner provides the
percentile latency ``t_p`` used for capacity planning.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

DEFAULT_PERCENTILE = 0.95
DEFAULT_MIN_SAMPLES = 30
NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 200


class ProfilingError(ValueError):
    pass


class FitError(ProfilingError):
    def __init__(self, message, iterations=()):
        super().__init__(message)
        self.iterations = list(iterations)


class DegenerateDataError(FitError):
    pass


class SpeedupWarning(UserWarning):
    pass


# -- families ---------------------------------------------------------------


class Family:
    name: str
    param_names: tuple[str, ...]

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def fit(self, x: np.ndarray) -> tuple[float, ...]:
        raise NotImplementedError

    def cdf(self, x, params):
        raise NotImplementedError

    def pdf(self, x, params):
        raise NotImplementedError

    def ppf(self, q: float, params) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, params, size=None):
        raise NotImplementedError

    def mean(self, params) -> float:
        raise NotImplementedError

    def check(self, params):
        if len(params) != self.n_params:
            raise ValueError(f"{self.name} takes {self.n_params} parameters, got {len(params)}")


def _ensure_spread(x, what):
    if np.ptp(x) == 0:
        raise DegenerateDataError(f"{what}: all samples equal, variance is zero")


class Normal(Family):
    name = "normal"
    param_names = ("mu", "sigma")

    def fit(self, x):
        _ensure_spread(x, self.name)
        mu = float(np.mean(x))
        return mu, float(np.sqrt(np.mean((x - mu) ** 2)))

    def check(self, params):
        super().check(params)
        if not params[1] > 0:
            raise ValueError("sigma must be positive")

    def cdf(self, x, params):
        mu, sigma = params
        return special.ndtr((np.asarray(x, dtype=float) - mu) / sigma)

    def pdf(self, x, params):
        mu, sigma = params
        z = (np.asarray(x, dtype=float) - mu) / sigma
        return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2 * math.pi))

    def ppf(self, q, params):
        mu, sigma = params
        return float(mu + sigma * special.ndtri(q))

    def sample(self, rng, params, size=None):
        # latencies are positive: redraw the (rare) non-positive values
        mu, sigma = params
        out = rng.normal(mu, sigma, size=size)
        if size is None:
            while out <= 0:
                out = rng.normal(mu, sigma)
            return float(out)
        bad = out <= 0
        while bad.any():
            out[bad] = rng.normal(mu, sigma, size=int(bad.sum()))
            bad = out <= 0
        return out

    def mean(self, params):
        return float(params[0])


class LogNormal(Family):
    name = "log-normal"
    param_names = ("mu", "sigma")

    def fit(self, x):
        lx = np.log(x)
        _ensure_spread(lx, self.name)
        mu = float(np.mean(lx))
        return mu, float(np.sqrt(np.mean((lx - mu) ** 2)))

    def check(self, params):
        super().check(params)
        if not params[1] > 0:
            raise ValueError("sigma must be positive")

    def cdf(self, x, params):
        mu, sigma = params
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(x > 0, special.ndtr((np.log(np.maximum(x, 1e-300)) - mu) / sigma), 0.0)

    def pdf(self, x, params):
        mu, sigma = params
        x = np.maximum(np.asarray(x, dtype=float), 1e-300)
        z = (np.log(x) - mu) / sigma
        return np.exp(-0.5 * z * z) / (x * sigma * math.sqrt(2 * math.pi))

    def ppf(self, q, params):
        mu, sigma = params
        return float(math.exp(mu + sigma * special.ndtri(q)))

    def sample(self, rng, params, size=None):
        out = rng.lognormal(params[0], params[1], size=size)
        return float(out) if size is None else out

    def mean(self, params):
        return float(math.exp(params[0] + 0.5 * params[1] ** 2))


class Exponential(Family):
    name = "exponential"
    param_names = ("rate",)

    def fit(self, x):
        return (1.0 / float(np.mean(x)),)

    def check(self, params):
        super().check(params)
        if not params[0] > 0:
            raise ValueError("rate must be positive")

    def cdf(self, x, params):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, -np.expm1(-params[0] * np.maximum(x, 0.0)), 0.0)

    def pdf(self, x, params):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, params[0] * np.exp(-params[0] * np.maximum(x, 0.0)), 0.0)

    def ppf(self, q, params):
        return float(-math.log1p(-q) / params[0])

    def sample(self, rng, params, size=None):
        out = rng.exponential(1.0 / params[0], size=size)
        return float(out) if size is None else out

    def mean(self, params):
        return 1.0 / params[0]


class Gamma(Family):
    name = "gamma"
    param_names = ("shape", "scale")

    def fit(self, x):
        mean = float(np.mean(x))
        s = math.log(mean) - float(np.mean(np.log(x)))
        if not s > 0:
            raise DegenerateDataError("gamma: log-mean gap is zero, samples have no spread")
        # Newton on log(k) - digamma(k) = s, started from the Minka approximation
        k = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
        history = []
        for _ in range(NEWTON_MAX_ITER):
            f = math.log(k) - special.digamma(k) - s
            fp = 1.0 / k - special.polygamma(1, k)
            step = f / fp
            k_new = k - step
            if k_new <= 0:
                k_new = k / 2.0
            history.append((k_new, f))
            if abs(k_new - k) <= NEWTON_TOL * max(1.0, k):
                k = k_new
                break
            k = k_new
        else:
            raise FitError("gamma: Newton iteration did not converge", history)
        return k, mean / k

    def check(self, params):
        super().check(params)
        if not (params[0] > 0 and params[1] > 0):
            raise ValueError("shape and scale must be positive")

    def cdf(self, x, params):
        k, theta = params
        x = np.asarray(x, dtype=float)
        return special.gammainc(k, np.maximum(x, 0.0) / theta)

    def pdf(self, x, params):
        k, theta = params
        x = np.maximum(np.asarray(x, dtype=float), 1e-300)
        return np.exp((k - 1) * np.log(x) - x / theta - special.gammaln(k) - k * math.log(theta))

    def ppf(self, q, params):
        k, theta = params
        return _invert_cdf(lambda v: float(self.cdf(v, params)), lambda v: float(self.pdf(v, params)),
                           q, guess=k * theta)

    def sample(self, rng, params, size=None):
        out = rng.gamma(params[0], params[1], size=size)
        return float(out) if size is None else out

    def mean(self, params):
        return params[0] * params[1]


class Weibull(Family):
    name = "weibull"
    param_names = ("shape", "scale")

    def fit(self, x):
        lx = np.log(x)
        _ensure_spread(lx, self.name)
        lmax = float(lx.max())
        mean_l = float(lx.mean())
        # profile-likelihood score for the shape:
        #   sum(x^k ln x) / sum(x^k) - 1/k - mean(ln x) = 0
        k = 1.2 / float(lx.std())
        history = []
        for _ in range(NEWTON_MAX_ITER):
            w = np.exp(k * (lx - lmax))
            sw = w.sum()
            a1 = float((w * lx).sum() / sw)
            a2 = float((w * lx * lx).sum() / sw)
            f = a1 - 1.0 / k - mean_l
            fp = a2 - a1 * a1 + 1.0 / (k * k)
            k_new = k - f / fp
            if k_new <= 0:
                k_new = k / 2.0
            history.append((k_new, f))
            if abs(k_new - k) <= NEWTON_TOL * max(1.0, k):
                k = k_new
                break
            k = k_new
        else:
            raise FitError("weibull: Newton iteration did not converge", history)
        w = np.exp(k * (lx - lmax))
        scale = math.exp(lmax + math.log(float(w.mean())) / k)
        return k, scale

    def check(self, params):
        super().check(params)
        if not (params[0] > 0 and params[1] > 0):
            raise ValueError("shape and scale must be positive")

    def cdf(self, x, params):
        k, lam = params
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-((x / lam) ** k))

    def pdf(self, x, params):
        k, lam = params
        x = np.maximum(np.asarray(x, dtype=float), 1e-300)
        z = x / lam
        return (k / lam) * z ** (k - 1) * np.exp(-(z**k))

    def ppf(self, q, params):
        k, lam = params
        return float(lam * (-math.log1p(-q)) ** (1.0 / k))

    def sample(self, rng, params, size=None):
        out = params[1] * rng.weibull(params[0], size=size)
        return float(out) if size is None else out

    def mean(self, params):
        return params[1] * math.gamma(1.0 + 1.0 / params[0])


FAMILIES: dict[str, Family] = {
    f.name: f for f in (Normal(), LogNormal(), Gamma(), Weibull(), Exponential())
}


def _invert_cdf(cdf: Callable[[float], float], pdf: Callable[[float], float], q: float,
                guess: float, tol: float = NEWTON_TOL) -> float:
    """Safeguarded Newton/bisection for ``cdf(x) = q`` on ``x > 0``."""
    lo, hi = 0.0, max(guess, 1e-12)
    while cdf(hi) < q:
        lo, hi = hi, hi * 2.0
    x = min(max(guess, lo), hi)
    for _ in range(NEWTON_MAX_ITER):
        f = cdf(x) - q
        if f > 0:
            hi = x
        else:
            lo = x
        d = pdf(x)
        x_new = x - f / d if d > 0 else 0.5 * (lo + hi)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)) or hi - lo <= tol * max(1.0, hi):
            return x_new
        x = x_new
    raise FitError(f"quantile inversion at q={q} did not converge")


# -- fitted distributions ---------------------------------------------------


@dataclass(frozen=True)
class FittedDistribution:
    family: str
    params: tuple[float, ...]
    ks_statistic: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; supported: {sorted(FAMILIES)}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        FAMILIES[self.family].check(params)
        if not 0.0 <= self.ks_statistic <= 1.0:
            raise ValueError(f"K-S statistic must lie in [0, 1], got {self.ks_statistic}")

    @property
    def dist(self) -> Family:
        return FAMILIES[self.family]

    @property
    def n_params(self) -> int:
        return self.dist.n_params

    def cdf(self, x):
        return self.dist.cdf(x, self.params)

    def ppf(self, q: float) -> float:
        return self.dist.ppf(q, self.params)

    def sample(self, rng: np.random.Generator, size=None):
        return self.dist.sample(rng, self.params, size)

    @property
    def mean(self) -> float:
        return self.dist.mean(self.params)


def _as_samples(samples, min_samples: int) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < min_samples:
        raise ProfilingError(f"need at least {min_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ProfilingError("latency samples must be finite and positive")
    return x


def fit_mle(samples, family: str, min_samples: int = DEFAULT_MIN_SAMPLES) -> FittedDistribution:
    """Maximum-likelihood fit of one family; the K-S distance is attached."""
    if family not in FAMILIES:
        raise ProfilingError(f"unsupported family {family!r}")
    x = _as_samples(samples, min_samples)
    params = FAMILIES[family].fit(x)
    fitted = FittedDistribution(family, params)
    return FittedDistribution(family, fitted.params, ks_statistic(x, fitted))


def ks_statistic(samples, fitted) -> float:
    """Exact one-sample K-S distance ``sup_x |F0(x) - F_n(x)|``.

    ``fitted`` is a FittedDistribution or any vectorised CDF callable. The
    supremum is reached at the jumps of the empirical CDF, so both sides of
    every step are checked.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ProfilingError("no samples")
    cdf = fitted.cdf if isinstance(fitted, FittedDistribution) else fitted
    f0 = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    upper = np.abs(f0 - i / n)
    lower = np.abs(f0 - (i - 1) / n)
    return float(max(upper.max(), lower.max()))


def rank_and_select(samples, min_samples: int = DEFAULT_MIN_SAMPLES, executor=None,
                    families=None, tie_tolerance: float | None = None) -> FittedDistribution:
    """Fit every family and return the one with the smallest K-S distance.

    Fits whose distance is within ``tie_tolerance`` of the best count as
    tied (default ``1/sqrt(n)``, the scale of K-S sampling noise, so nested
    families such as exponential vs. gamma are not split by noise). Among
    tied fits the one with fewer parameters wins, then the smaller distance,
    then the alphabetically first name. ``executor`` (anything with ``map``)
    lets the fits run in parallel; the choice does not depend on completion
    order.
    """
    x = _as_samples(samples, min_samples)
    if np.ptp(x) == 0:
        raise ProfilingError("all samples are identical; no continuous law can be ranked")
    names = sorted(families or FAMILIES)

    def attempt(name):
        try:
            return name, fit_mle(x, name, min_samples)
        except (FitError, ValueError, FloatingPointError) as exc:
            return name, exc

    results = list(executor.map(attempt, names) if executor is not None else map(attempt, names))
    fits = [r for _, r in results if isinstance(r, FittedDistribution)]
    if not fits:
        detail = "; ".join(f"{name}: {err}" for name, err in results)
        raise ProfilingError(f"no family could be fitted ({detail})")
    for name, r in results:
        if not isinstance(r, FittedDistribution):
            logger.info("family %s rejected: %s", name, r)
    if tie_tolerance is None:
        tie_tolerance = 1.0 / math.sqrt(x.size)
    best = min(f.ks_statistic for f in fits)
    tied = [f for f in fits if f.ks_statistic <= best + tie_tolerance]
    return min(tied, key=lambda f: (f.n_params, f.ks_statistic, f.family))


def percentile_latency(fitted: FittedDistribution, q: float = DEFAULT_PERCENTILE) -> float:
    if not 0.0 < q < 1.0:
        raise ValueError(f"percentile must lie in (0, 1), got {q}")
    return fitted.ppf(q)


# -- profiles ---------------------------------------------------------------


@dataclass(frozen=True)
class SetupTimes:
    """Lifecycle transition durations in seconds (VM deploy, container
    download, model load, model unload)."""

    vm: float = 0.0
    cd: float = 0.0
    ml: float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        for name in ("vm", "cd", "ml", "mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"setup time {name} must be >= 0")

    @property
    def setup(self) -> float:
        return self.vm + self.cd + self.ml


@dataclass(frozen=True)
class CoreProfile:
    cores: int
    fitted: FittedDistribution
    t_p: float


@dataclass(frozen=True)
class ExecutionProfile:
    service: str
    per_core: Mapping[int, CoreProfile]
    q: float = DEFAULT_PERCENTILE
    min_mem: float = 0.0
    setup_times: SetupTimes = field(default_factory=SetupTimes)

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"percentile must lie in (0, 1), got {self.q}")
        if not self.per_core:
            raise ValueError("profile has no core counts")
        object.__setattr__(self, "per_core", dict(sorted(self.per_core.items())))

    @property
    def core_counts(self) -> list[int]:
        return list(self.per_core)

    def t_p(self, cores: int) -> float | None:
        entry = self.per_core.get(cores)
        return None if entry is None else entry.t_p

    def distribution(self, cores: int) -> FittedDistribution:
        try:
            return self.per_core[cores].fitted
        except KeyError:
            raise KeyError(f"service {self.service!r} has no profile for {cores} cores") from None

    def speedup_violations(self) -> list[tuple[int, int]]:
        """Adjacent core counts where more cores gave a larger ``t_p``."""
        items = list(self.per_core.values())
        return [(a.cores, b.cores) for a, b in zip(items, items[1:]) if b.t_p > a.t_p]

    @classmethod
    def from_distributions(cls, service, dists: Mapping[int, FittedDistribution], q=DEFAULT_PERCENTILE,
                           min_mem=0.0, setup_times: SetupTimes | None = None):
        per_core = {int(p): CoreProfile(int(p), d, percentile_latency(d, q)) for p, d in dists.items()}
        return cls(service, per_core, q, min_mem, setup_times or SetupTimes())

    def to_dict(self) -> dict:
        return {
            "service": self.service,
            "q": self.q,
            "min_mem_gb": self.min_mem,
            "setup_times_s": {
                "vm": self.setup_times.vm,
                "cd": self.setup_times.cd,
                "ml": self.setup_times.ml,
                "mu": self.setup_times.mu,
            },
            "per_core": [
                {
                    "cores": e.cores,
                    "family": e.fitted.family,
                    "params": list(e.fitted.params),
                    "ks": e.fitted.ks_statistic,
                    "t_p_s": e.t_p,
                }
                for e in self.per_core.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExecutionProfile":
        per_core = {}
        for e in data["per_core"]:
            fitted = FittedDistribution(e["family"], tuple(e["params"]), float(e.get("ks", 0.0)))
            per_core[int(e["cores"])] = CoreProfile(int(e["cores"]), fitted, float(e["t_p_s"]))
        st = data.get("setup_times_s", {})
        return cls(
            data["service"],
            per_core,
            float(data.get("q", DEFAULT_PERCENTILE)),
            float(data.get("min_mem_gb", 0.0)),
            SetupTimes(*(float(st.get(k, 0.0)) for k in ("vm", "cd", "ml", "mu"))),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ExecutionProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_profile(samples_by_core: Mapping[int, np.ndarray], service: str = "service",
                  q: float = DEFAULT_PERCENTILE, min_mem: float = 0.0,
                  setup_times: SetupTimes | None = None, min_samples: int = DEFAULT_MIN_SAMPLES,
                  executor=None) -> ExecutionProfile:
    per_core = {}
    for cores in sorted(samples_by_core):
        if cores < 1:
            raise ProfilingError(f"core count must be positive, got {cores}")
        fitted = rank_and_select(samples_by_core[cores], min_samples, executor)
        per_core[cores] = CoreProfile(cores, fitted, percentile_latency(fitted, q))
    profile = ExecutionProfile(service, per_core, q, min_mem, setup_times or SetupTimes())
    for a, b in profile.speedup_violations():
        warnings.warn(f"{service}: t_p grows from {a} to {b} cores", SpeedupWarning, stacklevel=2)
    return profile


def load_samples(path) -> dict[int, np.ndarray]:
    """Read a ``cores,latency_seconds`` CSV into per-core sample arrays."""
    path = Path(path)
    grouped: dict[int, list[float]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"cores", "latency_seconds"} <= set(reader.fieldnames):
            raise ProfilingError(f"{path}: header must be 'cores,latency_seconds'")
        for lineno, row in enumerate(reader, start=2):
            try:
                cores = int(row["cores"])
                latency = float(row["latency_seconds"])
            except (TypeError, ValueError):
                raise ProfilingError(f"{path}:{lineno}: malformed row {row!r}") from None
            if cores < 1 or not math.isfinite(latency) or latency <= 0:
                raise ProfilingError(f"{path}:{lineno}: cores must be >= 1 and latency > 0")
            grouped.setdefault(cores, []).append(latency)
    if not grouped:
        raise ProfilingError(f"{path}: no samples")
    return {p: np.asarray(v) for p, v in sorted(grouped.items())}


def write_samples(samples_by_core: Mapping[int, np.ndarray], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cores", "latency_seconds"])
        for cores in sorted(samples_by_core):
            for v in samples_by_core[cores]:
                writer.writerow([cores, repr(float(v))])


def generate_samples(dists: Mapping[int, FittedDistribution], n: int, seed: int) -> dict[int, np.ndarray]:
    """Synthetic latency samples per core count, one seeded stream per core count."""
    return {
        int(p): d.sample(np.random.default_rng([seed, int(p)]), size=n)
        for p, d in sorted(dists.items())
    }
