"""VM lifecycle state machine and the forecast-ahead provisioning loop.

Lifecycle edges (durations from the profile's setup times)::

    VmCold -> VmWarm              t_vm   VM booted, container download starts
    VmWarm -> ContainerCold       t_cd   container present, model load starts
    ContainerCold -> ContainerWarm t_ml  model loaded, VM joins the balancer
    ContainerWarm -> ContainerCold t_mu  model unloaded (parked)
    any -> VmCold                        lease expiry / termination

Every mutation goes through ``Cluster.transition`` which rejects any other edge.
"""

from __future__ import annotations

import csv
import enum
import heapq
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .estimator import (FlavorCatalog, InfeasibleSLOError, SloSpec, infeasibility, requests_per_vm,
                        select_flavor, vm_count)
from .profiler import ExecutionProfile, SetupTimes

logger = logging.getLogger(__name__)

HORIZON_RTOL = 1e-9


class VmState(enum.Enum):
    VM_COLD = "VmCold"
    VM_WARM = "VmWarm"
    CONTAINER_COLD = "ContainerCold"
    CONTAINER_WARM = "ContainerWarm"


LEGAL_EDGES = frozenset({
    (VmState.VM_COLD, VmState.VM_WARM),
    (VmState.VM_WARM, VmState.CONTAINER_COLD),
    (VmState.CONTAINER_COLD, VmState.CONTAINER_WARM),
    (VmState.CONTAINER_WARM, VmState.CONTAINER_COLD),
    (VmState.VM_WARM, VmState.VM_COLD),
    (VmState.CONTAINER_COLD, VmState.VM_COLD),
    (VmState.CONTAINER_WARM, VmState.VM_COLD),
})


class ProvisionerError(RuntimeError):
    pass


class IllegalTransitionError(ProvisionerError):
    pass


class ContractViolation(ProvisionerError):
    pass


def setup_horizon(setup_times: SetupTimes, t_forecast: float = 0.0, resolution: int = 60) -> int:
    """Whole forecast intervals covering ``t_vm + t_cd + t_ml + t_forecast``."""
    total = setup_times.vm + setup_times.cd + setup_times.ml + t_forecast
    if total <= 0:
        return 0
    return max(0, math.ceil(total / resolution - HORIZON_RTOL))


@dataclass
class VmInstance:
    id: int
    flavor_index: int
    cores: int
    deploy_time: float
    lease_expiry: float
    state: VmState = VmState.VM_COLD
    state_since: float = 0.0
    active_cores: int = 0
    serving_batch: bool = False
    draining: str | None = None  # "park" or "terminate" while finishing queued work
    terminated_at: float | None = None

    @property
    def alive(self) -> bool:
        return self.terminated_at is None


@dataclass(frozen=True)
class Deployment:
    vm_id: int
    flavor_index: int
    start: float
    end: float | None


class Cluster:
    """Live and terminated VMs plus per-VM outstanding request counts.

    ``load`` is maintained by whoever dispatches requests; the cluster only
    reads it to decide whether a VM can leave the balancer immediately.
    """

    def __init__(self):
        self.vms: dict[int, VmInstance] = {}
        self.load: dict[int, int] = {}
        self.transitions = 0
        self._ids = itertools.count()

    def deploy(self, flavor_index: int, cores: int, now: float, tau_vm: float) -> VmInstance:
        vm = VmInstance(next(self._ids), flavor_index, cores, now, now + tau_vm, state_since=now)
        self.vms[vm.id] = vm
        self.load[vm.id] = 0
        return vm

    def transition(self, vm: VmInstance, new: VmState, now: float) -> None:
        if not vm.alive:
            raise IllegalTransitionError(f"vm {vm.id} is terminated")
        if (vm.state, new) not in LEGAL_EDGES:
            raise IllegalTransitionError(f"vm {vm.id}: {vm.state.value} -> {new.value} is not a lifecycle edge")
        vm.state = new
        vm.state_since = now
        self.transitions += 1

    def terminate(self, vm: VmInstance, now: float) -> None:
        if vm.state is not VmState.VM_COLD:
            self.transition(vm, VmState.VM_COLD, now)
        vm.terminated_at = now
        vm.draining = None
        vm.serving_batch = False
        vm.active_cores = 0

    def live(self) -> list[VmInstance]:
        return [vm for vm in self.vms.values() if vm.alive]

    def balancer(self) -> list[int]:
        """Ids serving traffic: model loaded and not draining."""
        return [vm.id for vm in self.vms.values()
                if vm.alive and vm.state is VmState.CONTAINER_WARM and vm.draining is None]

    def deployments(self) -> list[Deployment]:
        """Billing spans; a lease ends at its expiry even if draining ran longer."""
        out = []
        for vm in self.vms.values():
            end = None if vm.terminated_at is None else min(vm.terminated_at, vm.lease_expiry)
            out.append(Deployment(vm.id, vm.flavor_index, vm.deploy_time, end))
        return out

    def snapshot(self) -> dict:
        return {
            "vms": [
                {**{k: v for k, v in asdict(vm).items() if k != "state"}, "state": vm.state.value,
                 "load": self.load[vm.id]}
                for vm in self.vms.values()
            ],
            "transitions": self.transitions,
        }


# registry entry kinds, in execution order for equal due times
DOWNLOAD, MODEL_LOAD, MODEL_READY, EXPIRE = "container_download", "model_load", "model_ready", "vm_expire"
_KIND_ORDER = {DOWNLOAD: 0, MODEL_LOAD: 1, MODEL_READY: 2, EXPIRE: 3}


class ActionRegistry:
    """Time-keyed pending actions: container downloads, model loads (and their
    completions) and lease expiries."""

    def __init__(self):
        self._heap: list[tuple[float, int, int, str, int]] = []
        self._seq = itertools.count()

    def add(self, kind: str, due: float, vm_id: int) -> None:
        heapq.heappush(self._heap, (float(due), _KIND_ORDER[kind], next(self._seq), kind, vm_id))

    def next_due(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def pop_due(self, now: float):
        if self._heap and self._heap[0][0] <= now:
            due, _, _, kind, vm_id = heapq.heappop(self._heap)
            return due, kind, vm_id
        return None

    def discard(self, vm_id: int, kinds=None) -> None:
        keep = [e for e in self._heap if not (e[4] == vm_id and (kinds is None or e[3] in kinds))]
        if len(keep) != len(self._heap):
            heapq.heapify(keep)
            self._heap = keep

    def entries(self, kind: str) -> dict[float, list[int]]:
        out: dict[float, list[int]] = {}
        for due, _, seq, k, vm_id in sorted(self._heap):
            if k == kind:
                out.setdefault(due, []).append(vm_id)
        return out

    def __len__(self):
        return len(self._heap)


@dataclass(frozen=True)
class ProvisionerConfig:
    """``accounting`` picks the delta rule: ``"fleet"`` compares alpha with the
    VMs whose lease covers the target interval; ``"incremental"`` uses
    ``(alpha - prevStepVMCount) + expireVMCount``. ``recall`` is ``"all"``
    (recall every parked VM whenever new VMs are deployed) or ``"partial"``
    (recall only as many as are missing right now)."""

    horizon: int
    tau_vm: float = 3600.0
    tick_s: float = 60.0
    resolution: int = 60
    recall: str = "all"
    accounting: str = "fleet"

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.tau_vm <= 0 or self.tick_s <= 0 or self.resolution <= 0:
            raise ValueError("tau_vm, tick_s and resolution must be positive")
        if self.recall not in ("all", "partial"):
            raise ValueError(f"recall must be 'all' or 'partial', got {self.recall!r}")
        if self.accounting not in ("fleet", "incremental"):
            raise ValueError(f"accounting must be 'fleet' or 'incremental', got {self.accounting!r}")


@dataclass
class ProvisionerState:
    prev_count: int = 0
    scaled: set[int] = field(default_factory=set)
    registry: ActionRegistry = field(default_factory=ActionRegistry)
    i_star: int | None = None
    n_req: int | None = None
    first_run: bool = True
    counted_expiry: set[int] = field(default_factory=set)
    tick: int = 0


@dataclass(frozen=True)
class TickRecord:
    tick: int
    now_s: float
    forecast: float | None
    alpha: int
    delta: int
    deploys: int
    recalls: int
    parks: int
    expiries: int
    expire_count: int = 0
    deferred_parks: int = 0
    degraded: bool = False


TICK_FIELDS = ("tick", "now_s", "forecast", "alpha", "delta", "deploys", "recalls", "parks", "expiries")


@dataclass(frozen=True)
class Event:
    """An executed lifecycle action, reported to the request-level simulation."""

    time: float
    kind: str  # "ready", "leave", "terminate", "park", "deploy", ...
    vm_id: int


class Provisioner:
    """Forecast-ahead horizontal scaler for one prediction service."""

    def __init__(self, catalog: FlavorCatalog, profile: ExecutionProfile, slo: SloSpec,
                 config: ProvisionerConfig, cluster: Cluster | None = None):
        self.catalog = catalog
        self.profile = profile
        self.slo = slo
        self.config = config
        self.cluster = cluster if cluster is not None else Cluster()
        self.state = ProvisionerState()
        self.setup = profile.setup_times
        self.log: list[TickRecord] = []
        self.events: list[Event] = []
        self._expiries_since_tick = 0

    # -- helpers ------------------------------------------------------------

    def _emit(self, time, kind, vm_id):
        self.events.append(Event(time, kind, vm_id))

    def select(self, flavor_index: int | None = None) -> None:
        """Fix the flavor (greedy choice unless ``flavor_index`` is forced)."""
        if flavor_index is None:
            i, n, _ = select_flavor(self.catalog, self.profile, self.slo)
        else:
            flavor = self.catalog[flavor_index]
            n = requests_per_vm(flavor, self.profile, self.slo)
            if n < 1:
                raise InfeasibleSLOError({flavor.name: infeasibility(flavor, self.profile, self.slo)})
            i = flavor_index
        self.state.i_star, self.state.n_req = i, n
        self.state.first_run = False

    def window_load(self, y_per_interval: float) -> float:
        """Requests per SLO window implied by a per-interval forecast."""
        return max(0.0, y_per_interval) * self.slo.lambda_s / self.config.resolution

    def target_end(self, now: float) -> float:
        """End of the interval the current forecast targets."""
        return now + self.config.horizon * self.config.resolution + self.config.resolution

    def _recall_pool(self) -> list[int]:
        pending = sorted(vm.id for vm in self.cluster.live() if vm.draining == "park")
        return pending + sorted(self.state.scaled)

    # -- lifecycle actions ----------------------------------------------------

    def deploy(self, now: float) -> VmInstance:
        flavor = self.catalog[self.state.i_star]
        vm = self.cluster.deploy(self.state.i_star, flavor.cores, now, self.config.tau_vm)
        reg = self.state.registry
        reg.add(DOWNLOAD, now + self.setup.vm, vm.id)
        reg.add(MODEL_LOAD, now + self.setup.vm + self.setup.cd, vm.id)
        reg.add(EXPIRE, vm.lease_expiry, vm.id)
        self._emit(now, "deploy", vm.id)
        return vm

    def scale_up(self, k: int, now: float) -> list[int]:
        """Bring ``k`` parked VMs back: pending parks are cancelled first, then
        cold VMs reload their model (warm after ``t_ml``)."""
        pool = self._recall_pool()
        if k < 0 or k > len(pool):
            raise ContractViolation(f"cannot recall {k} of {len(pool)} parked VMs")
        recalled = []
        for vm_id in pool[:k]:
            vm = self.cluster.vms[vm_id]
            if vm.draining == "park":
                vm.draining = None
                self._emit(now, "ready", vm_id)
            else:
                self.state.scaled.discard(vm_id)
                vm.serving_batch = False
                self.state.registry.add(MODEL_LOAD, now, vm_id)
            recalled.append(vm_id)
        return recalled

    def scale_down(self, k: int, now: float) -> tuple[list[int], list[int]]:
        """Park ``k`` warm VMs, idle ones first (soonest lease expiry first).

        Busy VMs leave the balancer and park once their queue drains.
        Returns ``(parked_now, deferred)``.
        """
        warm = [vm for vm in self.cluster.live()
                if vm.state is VmState.CONTAINER_WARM and vm.draining is None]
        if k > len(warm):
            raise ContractViolation(f"cannot park {k} of {len(warm)} warm VMs")
        warm.sort(key=lambda vm: (self.cluster.load[vm.id] > 0, vm.lease_expiry, vm.id))
        parked, deferred = [], []
        for vm in warm[:k]:
            if self.cluster.load[vm.id] == 0:
                self._park(vm, now)
                parked.append(vm.id)
            else:
                vm.draining = "park"
                self._emit(now, "leave", vm.id)
                deferred.append(vm.id)
        return parked, deferred

    def _park(self, vm: VmInstance, now: float) -> None:
        self.cluster.transition(vm, VmState.CONTAINER_COLD, now + self.setup.mu)
        vm.draining = None
        vm.serving_batch = True
        self.state.scaled.add(vm.id)
        self._emit(now, "park", vm.id)

    def expire(self, vm: VmInstance, now: float) -> bool:
        """Terminate ``vm`` at lease expiry, or start draining it. True if terminated."""
        self.state.scaled.discard(vm.id)
        self.state.registry.discard(vm.id, {DOWNLOAD, MODEL_LOAD, MODEL_READY})
        if self.cluster.load[vm.id] > 0:
            if vm.draining is None:
                self._emit(now, "leave", vm.id)
            vm.draining = "terminate"
            return False
        self.cluster.terminate(vm, now)
        self._expiries_since_tick += 1
        self._emit(now, "terminate", vm.id)
        return True

    def on_idle(self, vm_id: int, now: float) -> None:
        """Called when a VM's queue empties; completes a pending park or expiry."""
        vm = self.cluster.vms[vm_id]
        if not vm.alive or vm.draining is None:
            return
        if vm.draining == "park":
            self._park(vm, now)
        else:
            self.cluster.terminate(vm, now)
            self._expiries_since_tick += 1
            self._emit(now, "terminate", vm.id)

    # -- registry execution ------------------------------------------------

    def next_due(self) -> float | None:
        return self.state.registry.next_due()

    def run_due(self, now: float) -> list[Event]:
        """Execute every registry entry due at or before ``now``, each at its own due time."""
        start = len(self.events)
        reg = self.state.registry
        while (entry := reg.pop_due(now)) is not None:
            due, kind, vm_id = entry
            vm = self.cluster.vms.get(vm_id)
            if vm is None or not vm.alive:
                continue
            if kind == DOWNLOAD:
                self.cluster.transition(vm, VmState.VM_WARM, due)
            elif kind == MODEL_LOAD:
                if vm.state is VmState.VM_WARM:
                    self.cluster.transition(vm, VmState.CONTAINER_COLD, due)
                reg.add(MODEL_READY, due + self.setup.ml, vm_id)
            elif kind == MODEL_READY:
                self.cluster.transition(vm, VmState.CONTAINER_WARM, due)
                vm.active_cores = vm.cores
                vm.serving_batch = False
                self._emit(due, "ready", vm_id)
            elif kind == EXPIRE:
                self.expire(vm, due)
        return self.events[start:]

    # -- the loop ------------------------------------------------------------

    def committed(self, now: float) -> int:
        """Live VMs whose lease covers the interval targeted at ``now``."""
        end = self.target_end(now)
        return sum(1 for vm in self.cluster.live() if vm.lease_expiry >= end and vm.draining != "terminate")

    def expiring(self, now: float) -> list[VmInstance]:
        end = self.target_end(now)
        return [vm for vm in self.cluster.live() if vm.lease_expiry < end]

    def tick(self, now: float, forecast: float | None) -> TickRecord:
        """One provisioning step for the forecast (requests per interval) of the
        interval ``horizon`` intervals ahead. ``None`` reuses the previous alpha."""
        st = self.state
        if st.first_run:
            self.select()
        self.run_due(now)
        degraded = forecast is None or not math.isfinite(forecast)
        alpha = st.prev_count if degraded else vm_count(self.window_load(forecast), st.n_req)

        fresh = [vm for vm in self.expiring(now) if vm.id not in st.counted_expiry]
        st.counted_expiry.update(vm.id for vm in fresh)
        expire_count = len(fresh)
        if self.config.accounting == "incremental":
            delta = (alpha - st.prev_count) + expire_count
        else:
            delta = alpha - self.committed(now)

        deploys = recalls = parks = deferred = 0
        if delta > 0:
            for _ in range(delta):
                self.deploy(now)
            deploys = delta
            pool = len(self._recall_pool())
            if self.config.recall == "all":
                k = pool
            else:
                warm = len(self.cluster.balancer())
                k = min(pool, max(0, alpha - warm))
            recalls = len(self.scale_up(k, now))
        else:
            delta2 = delta + len(self._recall_pool())
            if delta2 >= 0:
                recalls = len(self.scale_up(delta2, now))
            else:
                warm = len(self.cluster.balancer())
                parked, later = self.scale_down(min(-delta2, warm), now)
                parks, deferred = len(parked), len(later)
                if -delta2 > warm:
                    deferred += -delta2 - warm

        self.run_due(now)
        expiries = self._expiries_since_tick
        self._expiries_since_tick = 0
        st.prev_count = alpha
        record = TickRecord(st.tick, now, None if degraded else float(forecast), alpha, delta, deploys,
                            recalls, parks, expiries, expire_count, deferred, degraded)
        st.tick += 1
        self.log.append(record)
        return record


def write_action_log(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TICK_FIELDS)
        for r in records:
            writer.writerow([r.tick, r.now_s, "" if r.forecast is None else repr(r.forecast), r.alpha,
                             r.delta, r.deploys, r.recalls, r.parks, r.expiries])


def write_snapshot(cluster: Cluster, path) -> None:
    Path(path).write_text(json.dumps(cluster.snapshot(), indent=1, sort_keys=True) + "\n")


__all__ = [
    "ActionRegistry", "Cluster", "ContractViolation", "Deployment", "Event", "IllegalTransitionError",
    "LEGAL_EDGES", "Provisioner", "ProvisionerConfig", "ProvisionerError", "ProvisionerState",
    "TickRecord", "VmInstance", "VmState", "setup_horizon", "write_action_log", "write_snapshot",
]
