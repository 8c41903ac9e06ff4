"""Deterministic request-level replay of a workload against the provisioned cluster.

Arrivals inside each interval are spread uniformly; requests go to the
balancer member with the fewest queued plus in-flight requests (ties to the
lowest id) and are served FIFO, one at a time per VM. Service times are drawn
from the profiled distribution for the VM's active core count using one
random stream per VM. The provisioner ticks once per interval and its
lifecycle actions take effect at their exact due times.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .compensator import CompensatorModel, compensate_series
from .estimator import FlavorCatalog, InfeasibleSLOError, SloSpec, requests_per_vm, select_flavor
from .forecaster import RollingForecaster
from .profiler import ExecutionProfile
from .svgplot import line_chart
from .provisioner import Cluster, Provisioner, ProvisionerConfig, VmState
from .trace import TraceRangeError, WorkloadTrace

logger = logging.getLogger(__name__)

SAMPLE_BLOCK = 256
DRAIN_GRACE_S = 3600.0

# event priorities at equal times
_COMPLETE, _TICK, _MONITOR = 0, 1, 3


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class VerticalPolicy:
    enabled: bool = False
    margin: float = 0.7
    interference: float = 1.2
    interval_s: float = 5.0

    def __post_init__(self):
        if not 0 < self.margin <= 1:
            raise ValueError("margin must lie in (0, 1]")
        if self.interference < 1:
            raise ValueError("interference factor must be >= 1")
        if self.interval_s <= 0:
            raise ValueError("monitor interval must be positive")


@dataclass(frozen=True)
class SimulationConfig:
    """``start``/``end`` delimit the simulated intervals of the trace.

    ``prewarm`` is the number of VMs already serving at the start (``"auto"``:
    enough for the largest forecast before the first provisioned interval).
    ``aggregate`` controls what a tick provisions for: ``"point"`` uses the
    forecast of the target interval only, ``"max"`` the largest forecast from
    now through the target, since VMs parked now stay parked until then.
    """

    provisioner: ProvisionerConfig
    start: int = 0
    end: int | None = None
    vertical: VerticalPolicy = field(default_factory=VerticalPolicy)
    prewarm: int | str | None = "auto"
    aggregate: str = "max"
    flavor: int | None = None

    def __post_init__(self):
        if self.aggregate not in ("point", "max"):
            raise ValueError("aggregate must be 'point' or 'max'")
        if isinstance(self.prewarm, str) and self.prewarm != "auto":
            raise ValueError("prewarm must be an integer, 'auto' or None")


# -- forecasts ---------------------------------------------------------------------


@dataclass(frozen=True)
class ForecastPlan:
    """Per-target raw and compensated forecasts for targets ``first .. first+len-1``."""

    first: int
    raw: np.ndarray
    low: np.ndarray
    upp: np.ndarray
    corrected: np.ndarray
    compensated: np.ndarray  # bool per target

    def at(self, t: int) -> float:
        return float(self.corrected[t - self.first])

    def for_tick(self, i: int, horizon: int, aggregate: str) -> float:
        if aggregate == "point":
            return self.at(i + horizon)
        return float(np.max(self.corrected[i - self.first:i + horizon + 1 - self.first]))


def plan_forecasts(trace: WorkloadTrace, start: int, end: int, horizon: int,
                   forecaster: RollingForecaster | None = None,
                   compensator: CompensatorModel | None = None) -> ForecastPlan:
    """Forecasts for every target a tick in ``[start, end)`` may consult.

    ``forecaster=None`` is oracle foresight: the true counts (the last count
    past the end of the trace).
    """
    values = trace.values
    if forecaster is None:
        targets = np.arange(start, end + horizon)
        y = values[np.minimum(targets, len(values) - 1)]
        zeros = np.zeros(len(y))
        return ForecastPlan(start, y, y.copy(), y.copy(), y.copy(), zeros.astype(bool))
    if forecaster.horizon != horizon:
        raise SimulationError(f"forecaster horizon {forecaster.horizon} != provisioning horizon {horizon}")
    n_errors = compensator.n_errors if compensator is not None else 0
    lag = horizon + 1
    lo = max(start - (lag + n_errors - 1) if n_errors else start, forecaster.first_target)
    if start < forecaster.first_target:
        raise TraceRangeError(f"simulation start {start} precedes the first forecastable interval "
                              f"{forecaster.first_target}")
    targets = range(lo, end + horizon)
    y, low, upp = forecaster.forecasts(trace, targets)
    actual = np.array([values[t] if t < len(values) else np.nan for t in targets])
    if compensator is None:
        corrected, flags = y.copy(), np.zeros(len(y), dtype=bool)
    else:
        corrected, flags = compensate_series(compensator, actual, y, low, upp, lag)
    k = start - lo
    return ForecastPlan(start, y[k:], low[k:], upp[k:], corrected[k:], flags[k:])


# -- service sampling ----------------------------------------------------------------


class ServiceSampler:
    """Service times per VM from one seeded stream each (``[seed, vm_id]``)."""

    def __init__(self, profile: ExecutionProfile, seed: int, interference: float = 1.2):
        self.profile = profile
        self.seed = seed
        self.interference = interference
        self._rngs: dict[int, np.random.Generator] = {}
        self._buffers: dict[tuple[int, int], deque] = {}

    def draw(self, vm_id: int, cores: int, colocated: bool = False) -> float:
        buf = self._buffers.get((vm_id, cores))
        if not buf:
            if self.profile.t_p(cores) is None:
                raise SimulationError(f"vm {vm_id}: no profile for {cores} active cores")
            rng = self._rngs.get(vm_id)
            if rng is None:
                rng = self._rngs[vm_id] = np.random.default_rng([self.seed, vm_id])
            block = self.profile.distribution(cores).sample(rng, SAMPLE_BLOCK)
            buf = self._buffers[(vm_id, cores)] = deque(float(v) for v in block)
        s = buf.popleft()
        return s * self.interference if colocated else s


# -- report ----------------------------------------------------------------------------


REQUEST_FIELDS = ("id", "arrival_s", "start_s", "end_s", "vm", "latency_s", "slo_hit")
TICK_FIELDS = ("tick", "now_s", "forecast", "alpha", "delta", "deploys", "recalls", "parks", "expiries",
               "actual", "live_vms", "warm_vms", "active_cores")


@dataclass
class SimulationReport:
    arrival: np.ndarray
    start: np.ndarray
    end: np.ndarray
    vm: np.ndarray
    lambda_s: float
    ticks: list[dict]
    total_cost: float
    core_seconds_released: float
    flavor: str
    n_req: int
    deployments: int
    transitions: int
    unfinished: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def latency(self) -> np.ndarray:
        return self.end - self.arrival

    @property
    def hits(self) -> np.ndarray:
        lat = self.latency
        return np.where(np.isnan(lat), False, lat <= self.lambda_s)

    @property
    def n_requests(self) -> int:
        return len(self.arrival)

    @property
    def slo_compliance(self) -> float:
        return 1.0 if self.n_requests == 0 else float(self.hits.mean())

    def latency_percentile(self, q: float) -> float | None:
        lat = self.latency[~np.isnan(self.latency)]
        return None if len(lat) == 0 else float(np.percentile(lat, q))

    def summary(self) -> dict:
        return {
            "requests": self.n_requests,
            "unfinished": self.unfinished,
            "slo_compliance": self.slo_compliance,
            "slo_hits": int(self.hits.sum()),
            "lambda_s": self.lambda_s,
            "total_cost": self.total_cost,
            "core_seconds_released": float(self.core_seconds_released),
            "latency_p50_s": self.latency_percentile(50),
            "latency_p95_s": self.latency_percentile(95),
            "latency_p99_s": self.latency_percentile(99),
            "flavor": self.flavor,
            "n_req": self.n_req,
            "deployments": self.deployments,
            "transitions": self.transitions,
            "ticks": len(self.ticks),
            **self.meta,
        }

    def write(self, out_dir, prefix: str = "simulation") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{prefix}_report.json", out / f"{prefix}_requests.csv", out / f"{prefix}_ticks.csv"]
        paths[0].write_text(json.dumps(self.summary(), indent=1, sort_keys=True) + "\n")
        with paths[1].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REQUEST_FIELDS)
            hits = self.hits
            for i in range(self.n_requests):
                done = not math.isnan(self.end[i])
                w.writerow([i, repr(float(self.arrival[i])),
                            repr(float(self.start[i])) if not math.isnan(self.start[i]) else "",
                            repr(float(self.end[i])) if done else "",
                            int(self.vm[i]) if self.vm[i] >= 0 else "",
                            repr(float(self.end[i] - self.arrival[i])) if done else "",
                            int(hits[i])])
        with paths[2].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TICK_FIELDS)
            for row in self.ticks:
                w.writerow(["" if row[k] is None else row[k] for k in TICK_FIELDS])
        return paths


def account_cost(deployments, tau_vm: float, costs: Sequence[float], horizon_end: float) -> float:
    """Each deployment pays ``ceil(span / tau_vm)`` lease periods (at least one);
    open deployments are billed up to ``horizon_end``."""
    total = 0.0
    for d in deployments:
        end = horizon_end if d.end is None else d.end
        periods = max(1, math.ceil((end - d.start) / tau_vm - 1e-9))
        total += periods * costs[d.flavor_index]
    return total


# -- the event loop -------------------------------------------------------------------


def _snap_up(profiled: list[int], want: int, cap: int) -> int:
    for p in profiled:
        if p >= want:
            return min(p, cap)
    return cap


def dispatch(members: Sequence[int], load: dict[int, int]) -> int | None:
    """Least-loaded serving VM, lowest id on ties; None when nothing serves."""
    if not members:
        return None
    return min(members, key=lambda v: (load[v], v))


def vertical_decision(latencies: Sequence[float], active: int, profiled: Sequence[int], cores: int,
                      lambda_s: float, margin: float) -> int:
    """Active cores after one monitoring window.

    Any SLO miss doubles the allocation (snapped up to a profiled count, capped
    at the flavor); a window p95 below ``margin * lambda_s`` releases one
    profiled step; an empty window changes nothing.
    """
    if len(latencies) == 0:
        return active
    if max(latencies) > lambda_s:
        return _snap_up(list(profiled), 2 * active, cores)
    if np.percentile(latencies, 95) < margin * lambda_s:
        lower = [p for p in profiled if p < active]
        if lower:
            return lower[-1]
    return active


def run(trace: WorkloadTrace, profile: ExecutionProfile, catalog: FlavorCatalog, slo: SloSpec,
        config: SimulationConfig, plan: ForecastPlan | None = None, seed: int = 0) -> SimulationReport:
    """Replay intervals ``[config.start, config.end)`` of ``trace``.

    ``plan`` supplies the forecasts the provisioner consumes (oracle foresight
    when omitted).
    """
    pcfg = config.provisioner
    res = pcfg.resolution
    start = config.start
    end = len(trace) if config.end is None else config.end
    if not 0 <= start < end <= len(trace):
        raise TraceRangeError(f"simulation range [{start}, {end}) outside trace of {len(trace)}")
    h = pcfg.horizon
    if plan is None:
        plan = plan_forecasts(trace, start, end, h)
    vpol = config.vertical
    lam = slo.lambda_s

    cluster = Cluster()
    prov = Provisioner(catalog, profile, slo, pcfg, cluster)
    prov.select(config.flavor)
    flavor = catalog[prov.state.i_star]
    profiled = [p for p in profile.core_counts if p <= flavor.cores]
    if flavor.cores not in profiled:
        raise SimulationError(f"flavor {flavor.name} has {flavor.cores} cores but that count is unprofiled")
    sampler = ServiceSampler(profile, seed, vpol.interference)

    # arrivals: uniformly spread inside each interval
    counts = np.asarray(trace.counts[start:end], dtype=np.int64)
    n_total = int(counts.sum())
    arrival = np.empty(n_total)
    pos = 0
    for m, c in enumerate(counts):
        if c:
            arrival[pos:pos + c] = (start + m) * res + (np.arange(c) + 0.5) * (res / c)
            pos += c
    t_begin, t_end = start * res, end * res
    start_s = np.full(n_total, np.nan)
    end_s = np.full(n_total, np.nan)
    vm_of = np.full(n_total, -1, dtype=np.int64)

    queues: dict[int, deque] = {}
    busy: dict[int, bool] = {}
    global_q: deque = deque()
    window: dict[int, list[float]] = {}
    released = 0.0
    acc_since: dict[int, float] = {}
    acc_rate: dict[int, int] = {}  # idle cores per VM since acc_since
    members: list[int] = []
    heap: list = []
    seq = 0

    def push(t, prio, kind, payload):
        nonlocal seq
        heapq.heappush(heap, (t, prio, seq, kind, payload))
        seq += 1

    def accrue(vm, t):
        nonlocal released
        since = acc_since.get(vm.id)
        if since is not None:
            released += acc_rate[vm.id] * (t - since)
            acc_since[vm.id] = t
            acc_rate[vm.id] = vm.cores - vm.active_cores if vm.alive else 0

    def track(vm, t):
        acc_since[vm.id] = t
        acc_rate[vm.id] = vm.cores - vm.active_cores

    def begin(vm_id, t):
        vm = cluster.vms[vm_id]
        rid = queues[vm_id].popleft()
        colocated = vpol.enabled and vm.active_cores < vm.cores
        s = sampler.draw(vm_id, vm.active_cores, colocated)
        start_s[rid] = t
        busy[vm_id] = True
        push(t + s, _COMPLETE, "done", (vm_id, rid))

    def assign(rid, t):
        if not members:
            global_q.append(rid)
            return
        target = dispatch(members, cluster.load)
        queues.setdefault(target, deque()).append(rid)
        cluster.load[target] += 1
        vm_of[rid] = target
        if not busy.get(target):
            begin(target, t)

    def handle(events):
        for ev in events:
            if ev.kind == "deploy":
                continue
            vm = cluster.vms[ev.vm_id]
            members[:] = cluster.balancer()
            if ev.kind == "ready":
                track(vm, ev.time)
                window[vm.id] = []
                while global_q:
                    assign(global_q.popleft(), ev.time)
            elif ev.kind in ("park", "terminate", "leave"):
                accrue(vm, ev.time)
                if ev.kind != "leave":
                    acc_since.pop(vm.id, None)

    def run_registry(until):
        while (due := prov.next_due()) is not None and due <= until:
            handle(prov.run_due(due))

    # initial fleet
    n_events = 0
    if config.prewarm is not None:
        if config.prewarm == "auto":
            peak = float(np.max(plan.corrected[:h + 1])) if len(plan.corrected) else 0.0
            n0 = math.ceil(prov.window_load(peak) / prov.state.n_req) if peak > 0 else 0
        else:
            n0 = int(config.prewarm)
        for _ in range(n0):
            vm = prov.deploy(t_begin)
            for st in (VmState.VM_WARM, VmState.CONTAINER_COLD, VmState.CONTAINER_WARM):
                cluster.transition(vm, st, t_begin)
            vm.active_cores = vm.cores
            prov.state.registry.discard(vm.id, {"container_download", "model_load"})
            track(vm, t_begin)
            window[vm.id] = []
        prov.state.prev_count = n0
        prov.events.clear()
        members[:] = cluster.balancer()

    for i in range(start, end):
        push(i * res, _TICK, "tick", i)
    if vpol.enabled:
        k = 1
        while t_begin + k * vpol.interval_s <= t_end:
            push(t_begin + k * vpol.interval_s, _MONITOR, "monitor", None)
            k += 1

    tick_rows = []
    a = 0
    outstanding = n_total
    while True:
        next_heap = heap[0][0] if heap else math.inf
        next_arr = arrival[a] if a < n_total else math.inf
        t = min(next_heap, next_arr)
        due = prov.next_due()
        if due is not None and due <= t and (due <= t_end + DRAIN_GRACE_S):
            handle(prov.run_due(due))
            continue
        if t == math.inf or t > t_end + DRAIN_GRACE_S:
            break
        if outstanding == 0 and t > t_end and not (heap and heap[0][3] == "done"):
            break
        if next_heap <= next_arr and heap:
            t, _, _, kind, payload = heapq.heappop(heap)
            n_events += 1
            if kind == "done":
                vm_id, rid = payload
                end_s[rid] = t
                outstanding -= 1
                busy[vm_id] = False
                cluster.load[vm_id] -= 1
                if vm_id in window:
                    window[vm_id].append(t - arrival[rid])
                if queues[vm_id]:
                    begin(vm_id, t)
                elif cluster.load[vm_id] == 0:
                    before = len(prov.events)
                    prov.on_idle(vm_id, t)
                    handle(prov.events[before:])
            elif kind == "tick":
                i = payload
                before = len(prov.events)
                forecast = plan.for_tick(i, h, config.aggregate)
                rec = prov.tick(t, forecast)
                handle(prov.events[before:])
                live = cluster.live()
                warm = [vm for vm in live if vm.state is VmState.CONTAINER_WARM]
                tick_rows.append({
                    "tick": rec.tick, "now_s": rec.now_s, "forecast": rec.forecast, "alpha": rec.alpha,
                    "delta": rec.delta, "deploys": rec.deploys, "recalls": rec.recalls, "parks": rec.parks,
                    "expiries": rec.expiries, "actual": int(trace.counts[i]), "live_vms": len(live),
                    "warm_vms": len(warm), "active_cores": sum(vm.active_cores for vm in warm),
                })
            elif kind == "monitor":
                for vm_id in members:
                    vm = cluster.vms[vm_id]
                    lat = window.get(vm_id, [])
                    window[vm_id] = []
                    new = vertical_decision(lat, vm.active_cores, profiled, vm.cores, lam, vpol.margin)
                    if new != vm.active_cores:
                        accrue(vm, t)
                        vm.active_cores = new
        else:
            rid = a
            a += 1
            assign(rid, t)

    # close the books
    for vm in cluster.live():
        accrue(vm, t_end)
    unfinished = int(np.isnan(end_s).sum())
    costs = [f.cost for f in catalog]
    total_cost = account_cost(cluster.deployments(), pcfg.tau_vm, costs, t_end)
    report = SimulationReport(
        arrival, start_s, end_s, vm_of, lam, tick_rows, total_cost, released, flavor.name,
        prov.state.n_req, len(cluster.vms), cluster.transitions, unfinished,
        meta={"seed": seed, "start_interval": start, "end_interval": end, "horizon": h,
              "events": n_events},
    )
    return report


@dataclass(frozen=True)
class SweepRow:
    flavor: str
    index: int
    greedy: bool
    n_req: int
    total_cost: float
    slo_compliance: float


def sweep_flavors(trace, profile, catalog, slo, config: SimulationConfig, plan=None, seed=0,
                  executor=None) -> list[SweepRow]:
    """One simulation per feasible flavor; the greedy choice is marked."""
    greedy, _, _ = select_flavor(catalog, profile, slo)
    feasible = [i for i, f in enumerate(catalog) if requests_per_vm(f, profile, slo) >= 1]
    if not feasible:
        raise InfeasibleSLOError({})

    def one(i):
        rep = run(trace, profile, catalog, slo, replace(config, flavor=i), plan, seed)
        return SweepRow(catalog[i].name, i, i == greedy, rep.n_req, rep.total_cost, rep.slo_compliance)

    mapper = executor.map if executor is not None else map
    return list(mapper(one, feasible))


def write_sweep(rows: Sequence[SweepRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flavor", "greedy", "n_req", "total_cost", "slo_compliance"])
        for r in rows:
            w.writerow([r.flavor, int(r.greedy), r.n_req, repr(r.total_cost), repr(r.slo_compliance)])


def plot_svg(report: SimulationReport, path) -> None:
    """Requests and forecast per interval over the warm VM count."""
    ticks = report.ticks
    line_chart([
        ("requests per interval", [("actual", [r["actual"] for r in ticks], "black"),
                                   ("forecast", [r["forecast"] or 0.0 for r in ticks], "red")]),
        ("VMs", [("warm", [r["warm_vms"] for r in ticks], "blue"),
                 ("live", [r["live_vms"] for r in ticks], "gray")]),
    ], path)


__all__ = [
    "ForecastPlan", "ServiceSampler", "SimulationConfig", "SimulationError", "SimulationReport", "SweepRow",
    "VerticalPolicy", "account_cost", "dispatch", "plan_forecasts", "plot_svg", "run",
    "vertical_decision",
    "sweep_flavors", "write_sweep",
]
