"""Cost-minimal VM flavor selection and VM counts for a forecasted load."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

from .profiler import ExecutionProfile

# relative slack on floor(lambda / t_p) so that 2.0 / 0.4 counts as 5
FLOOR_RTOL = 1e-9
ORACLE_LIMIT = 10_000_000


class EstimatorError(ValueError):
    pass


class InfeasibleSLOError(EstimatorError):
    def __init__(self, reasons: dict[str, str]):
        detail = "; ".join(f"{name}: {why}" for name, why in reasons.items())
        super().__init__(f"no flavor can meet the SLO ({detail})")
        self.reasons = reasons


class OracleScaleError(EstimatorError):
    pass


@dataclass(frozen=True)
class VmFlavor:
    name: str
    cores: int
    mem_gb: float
    cost: float

    def __post_init__(self):
        if int(self.cores) != self.cores or self.cores < 1:
            raise EstimatorError(f"{self.name}: cores must be a positive integer")
        if not self.mem_gb > 0:
            raise EstimatorError(f"{self.name}: memory must be positive")
        if not self.cost > 0:
            raise EstimatorError(f"{self.name}: cost must be positive")
        object.__setattr__(self, "cores", int(self.cores))


@dataclass(frozen=True)
class FlavorCatalog:
    flavors: tuple[VmFlavor, ...]

    def __post_init__(self):
        flavors = tuple(self.flavors)
        if not flavors:
            raise EstimatorError("catalog is empty")
        names = [f.name for f in flavors]
        if len(set(names)) != len(names):
            raise EstimatorError("flavor names must be unique")
        object.__setattr__(self, "flavors", flavors)

    def __len__(self):
        return len(self.flavors)

    def __getitem__(self, i) -> VmFlavor:
        return self.flavors[i]

    def __iter__(self):
        return iter(self.flavors)

    def index(self, name: str) -> int:
        for i, f in enumerate(self.flavors):
            if f.name == name:
                return i
        raise KeyError(name)

    def subset(self, indices: Sequence[int]) -> "FlavorCatalog":
        return FlavorCatalog(tuple(self.flavors[i] for i in indices))


def load_catalog(path) -> FlavorCatalog:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"name", "cores", "mem_gb", "cost_per_period"} - set(reader.fieldnames or ())
        if missing:
            raise EstimatorError(f"{path}: missing columns {sorted(missing)}")
        flavors = []
        for lineno, row in enumerate(reader, start=2):
            try:
                flavors.append(VmFlavor(row["name"].strip(), int(row["cores"]),
                                        float(row["mem_gb"]), float(row["cost_per_period"])))
            except ValueError as exc:
                raise EstimatorError(f"{path}:{lineno}: {exc}") from None
    return FlavorCatalog(tuple(flavors))


def builtin_catalog(name: str = "ec2_t3") -> FlavorCatalog:
    with resources.as_file(resources.files("servescale") / "data" / f"{name}.csv") as p:
        return load_catalog(p)


@dataclass(frozen=True)
class SloSpec:
    """Latency bound ``lambda_s`` on the ``percentile`` latency. ``min_mem``
    of None defers to the profile's memory requirement."""

    lambda_s: float
    percentile: float = 0.95
    min_mem: float | None = None

    def __post_init__(self):
        if not self.lambda_s > 0:
            raise EstimatorError("lambda must be positive")
        if not 0 < self.percentile < 1:
            raise EstimatorError("percentile must lie in (0, 1)")


def latency_bound(profile: ExecutionProfile, cores: int, slo: SloSpec) -> float | None:
    """``t_p`` at the SLO percentile, or None when ``cores`` was not profiled."""
    if profile.t_p(cores) is None:
        return None
    if math.isclose(slo.percentile, profile.q, rel_tol=0, abs_tol=1e-12):
        return profile.t_p(cores)
    return profile.distribution(cores).ppf(slo.percentile)


def _min_mem(profile: ExecutionProfile, slo: SloSpec) -> float:
    return profile.min_mem if slo.min_mem is None else slo.min_mem


def infeasibility(flavor: VmFlavor, profile: ExecutionProfile, slo: SloSpec) -> str | None:
    """Why ``flavor`` cannot serve a single request within the SLO, if it cannot."""
    need = _min_mem(profile, slo)
    if flavor.mem_gb < need:
        return f"memory {flavor.mem_gb:g} GB < {need:g} GB"
    t_p = latency_bound(profile, flavor.cores, slo)
    if t_p is None:
        return f"unprofiled core count {flavor.cores}"
    if _floor_ratio(slo.lambda_s, t_p) < 1:
        return f"latency t_p={t_p:.6g} s > lambda={slo.lambda_s:g} s"
    return None


def _floor_ratio(lam: float, t_p: float) -> int:
    q = lam / t_p
    k = math.floor(q)
    if (k + 1) - q <= FLOOR_RTOL * max(1.0, q):
        k += 1
    return int(k)


def requests_per_vm(flavor: VmFlavor, profile: ExecutionProfile, slo: SloSpec) -> int:
    """Requests one VM serves back-to-back within one lambda window; 0 if infeasible."""
    if infeasibility(flavor, profile, slo) is not None:
        return 0
    return _floor_ratio(slo.lambda_s, latency_bound(profile, flavor.cores, slo))


def _cheaper(cost_a, n_a, cost_b, n_b) -> bool:
    """Is (cost_a / n_a, cost_a) lexicographically below (cost_b / n_b, cost_b)?"""
    ca, cb = Fraction(cost_a), Fraction(cost_b)
    lhs, rhs = ca * n_b, cb * n_a
    if lhs != rhs:
        return lhs < rhs
    return ca < cb


def select_flavor(catalog: FlavorCatalog, profile: ExecutionProfile, slo: SloSpec) -> tuple[int, int, float]:
    """Flavor with the lowest cost per request; ties go to the cheaper flavor,
    then to the lower index. Returns ``(i_star, n_req, cpr)``."""
    best = None
    reasons = {}
    for i, flavor in enumerate(catalog):
        why = infeasibility(flavor, profile, slo)
        if why is not None:
            reasons[flavor.name] = why
            continue
        n = requests_per_vm(flavor, profile, slo)
        if best is None or _cheaper(flavor.cost, n, catalog[best[0]].cost, best[1]):
            best = (i, n)
    if best is None:
        raise InfeasibleSLOError(reasons)
    i, n = best
    return i, n, catalog[i].cost / n


def vm_count(y: float, n_req: int) -> int:
    if n_req < 1:
        raise EstimatorError("n_req must be >= 1")
    if y < 0:
        raise EstimatorError("forecast must be non-negative")
    return math.ceil(y / n_req)


def lower_bound_cost(y: float, n_req: int, cost: float) -> float:
    """Rational optimum: the load priced at the best cost per request."""
    return y / n_req * cost


@dataclass(frozen=True)
class EstimationResult:
    i_star: int
    n_req: int
    cpr: float
    alpha: int
    lower_bound_cost: float
    cost: float

    @property
    def total_cost(self) -> float:
        return self.alpha * self.cost


def estimate(catalog: FlavorCatalog, profile: ExecutionProfile, slo: SloSpec, y: float) -> EstimationResult:
    i, n, cpr = select_flavor(catalog, profile, slo)
    cost = catalog[i].cost
    return EstimationResult(i, n, cpr, vm_count(y, n), lower_bound_cost(y, n, cost), cost)


def brute_force_optimal(catalog: FlavorCatalog, profile: ExecutionProfile, slo: SloSpec, y: float,
                        bound: Sequence[int] | None = None) -> float:
    """Cheapest mixed-flavor deployment whose capacity covers ``y``.

    ``bound[i]`` caps the count of flavor ``i`` (default: enough to cover ``y``
    alone). The last usable flavor's count is implied by the remaining demand,
    so only the other counts are enumerated.
    """
    if y < 0:
        raise EstimatorError("forecast must be non-negative")
    if y == 0:
        return 0.0
    n = [requests_per_vm(f, profile, slo) for f in catalog]
    usable = [i for i in range(len(catalog)) if n[i] >= 1]
    if not usable:
        raise InfeasibleSLOError({f.name: infeasibility(f, profile, slo) for f in catalog})
    caps = {i: (math.ceil(y / n[i]) if bound is None else int(bound[i])) for i in usable}
    space = 1
    for i in usable:
        space *= caps[i] + 1
    if space > ORACLE_LIMIT:
        raise OracleScaleError(f"search space {space} exceeds {ORACLE_LIMIT}")

    best = math.inf
    *head, last = usable

    def search(k: int, remaining: float, spent: float):
        nonlocal best
        if spent >= best:
            return
        if k == len(head):
            need = max(0, math.ceil(remaining / n[last] - FLOOR_RTOL)) if remaining > 0 else 0
            if need <= caps[last]:
                best = min(best, spent + need * catalog[last].cost)
            return
        i = head[k]
        for a in range(caps[i] + 1):
            search(k + 1, remaining - a * n[i], spent + a * catalog[i].cost)
            if remaining - a * n[i] <= 0:
                break

    search(0, float(y), 0.0)
    if best == math.inf:
        raise EstimatorError("bounds too small to cover the demand")
    return best


__all__ = [
    "EstimationResult", "EstimatorError", "FlavorCatalog", "InfeasibleSLOError", "OracleScaleError",
    "SloSpec", "VmFlavor", "brute_force_optimal", "builtin_catalog", "estimate", "infeasibility",
    "latency_bound", "load_catalog", "lower_bound_cost", "requests_per_vm", "select_flavor", "vm_count",
]
