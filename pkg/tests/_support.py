"""Shared builders for tests."""

import itertools
import math

import numpy as np

from servescale.estimator import FlavorCatalog, VmFlavor
from servescale.profiler import CoreProfile, ExecutionProfile, FittedDistribution, SetupTimes


def make_profile(t_p: dict, q=0.95, min_mem=0.0, setup=SetupTimes()):
    """Profile whose percentile latency per core count is exactly ``t_p``."""
    per_core = {c: CoreProfile(c, FittedDistribution("normal", (v, v / 100)), v) for c, v in t_p.items()}
    return ExecutionProfile("svc", per_core, q, min_mem, setup)


def catalog(*specs):
    """``(name, cores, mem_gb, cost)`` tuples."""
    return FlavorCatalog(tuple(VmFlavor(*s) for s in specs))


def exhaustive_min_cost(n_req, costs, y):
    """Enumerate every count vector up to covering ``y`` with one flavor."""
    usable = [i for i, n in enumerate(n_req) if n > 0]
    ranges = [range(math.ceil(y / n_req[i]) + 1) for i in usable]
    best = math.inf
    for counts in itertools.product(*ranges):
        if sum(c * n_req[i] for c, i in zip(counts, usable)) >= y:
            best = min(best, sum(c * costs[i] for c, i in zip(counts, usable)))
    return best


def random_instance(rng: np.random.Generator, max_flavors=6, max_y=200):
    """Random catalog/profile/SLO with at least one feasible flavor."""
    from servescale.estimator import SloSpec
    cores_choice = [1, 2, 4, 8, 16]
    lam = float(rng.uniform(0.5, 3.0))
    t_p = {c: float(lam / rng.integers(1, 9) * rng.uniform(0.8, 1.0)) for c in cores_choice}
    m = int(rng.integers(1, max_flavors + 1))
    specs = []
    for i in range(m):
        c = int(rng.choice(cores_choice))
        specs.append((f"f{i}", c, float(rng.choice([1, 2, 4, 8])), float(np.round(rng.uniform(0.01, 2.0), 4))))
    specs[0] = (specs[0][0], specs[0][1], 8.0, specs[0][3])  # keep one flavor memory-feasible
    y = float(rng.integers(0, max_y + 1))
    return catalog(*specs), make_profile(t_p, min_mem=2.0), SloSpec(lam), y
