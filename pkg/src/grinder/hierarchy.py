"""Simulated GPU / host / storage tier stack with byte-exact accounting.

A :class:`TierSession` mirrors the stage structure of partition-wise
training: every (layer, partition) step of the forward and backward passes,
every layer boundary, and the loss stage invoke one hook each, and every
hook charges its data movement to an :class:`IoLedger`.  Nothing in this
module is randomized; identical inputs always produce identical ledgers,
byte for byte, which is what lets closed-form traffic formulas be checked
against simulated epochs exactly.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
import math

import numpy as np

from .model import AGGREGATION_MODES
from .plan import PartitionPlan

__all__ = [
    "CACHE_GRANULARITIES",
    "CacheState",
    "HierarchyConfig",
    "IoLedger",
    "LINKS",
    "POLICY_KINDS",
    "PolicySpec",
    "SUM_AGGREGATION_MODES",
    "TierSession",
    "schedule_partitions",
]

LINKS = ("gpu_host", "gpu_storage", "host_storage")
POLICY_KINDS = ("GRINNDER", "HONGTU_SWAP", "HONGTU_INTERMEDIATE", "NAIVE")
CACHE_GRANULARITIES = ("layer_lru", "partition_lru", "vertex")

# Retaining an aggregated intermediate only reconstructs the backward pass
# when aggregation is a normalized sum over in-neighbors, so the
# HONGTU_INTERMEDIATE policy refuses any other aggregation mode.
SUM_AGGREGATION_MODES = ("mean_self_loop", "symmetric_norm")

_PHASE_RANK = {"forward": 0, "loss": 1, "backward": 2}


def _positive_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


@dataclass
class HierarchyConfig:
    """Capacities and speeds of the simulated three-tier stack.

    Capacities are bytes, bandwidths are bytes per second, and
    ``compute_rate`` is flops per second (``math.inf`` models I/O-only
    timing).  ``host_capacity`` may be zero: a host-less stack is a
    meaningful configuration for the swap policies.
    """

    gpu_capacity: int = 1 << 40
    host_capacity: int = 1 << 40
    storage_capacity: int = 1 << 50
    host_gpu_bandwidth: float = 1.0
    storage_bandwidth: float = 1.0
    page_size: int = 4096
    compute_rate: float = math.inf
    bytes_per_value: int = 8

    def __post_init__(self):
        if self.gpu_capacity <= 0:
            raise ValueError(f"gpu_capacity must be positive, got {self.gpu_capacity}")
        if self.host_capacity < 0:
            raise ValueError(f"host_capacity must be >= 0, got {self.host_capacity}")
        if self.storage_capacity <= 0:
            raise ValueError(
                f"storage_capacity must be positive, got {self.storage_capacity}")
        if not self.host_gpu_bandwidth > 0:
            raise ValueError("host_gpu_bandwidth must be positive")
        if not self.storage_bandwidth > 0:
            raise ValueError("storage_bandwidth must be positive")
        if not _positive_power_of_two(self.page_size):
            raise ValueError(f"page_size must be a power of two, got {self.page_size}")
        if not self.compute_rate > 0:
            raise ValueError("compute_rate must be positive (math.inf allowed)")
        if int(self.bytes_per_value) < 1:
            raise ValueError("bytes_per_value must be a positive integer")


@dataclass
class PolicySpec:
    """A named offloading policy plus its cache and routing knobs.

    ``bypass_enabled`` routes produced rows and gradient reads over the
    direct gpu<->storage link; switching it off reroutes those bytes through
    the host (charging both remaining links).  The HONGTU policies never use
    the direct link regardless.
    """

    kind: str
    cache_granularity: str | None = None
    bypass_enabled: bool | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.cache_granularity is None:
            self.cache_granularity = "vertex" if self.kind == "NAIVE" else "layer_lru"
        if self.cache_granularity not in CACHE_GRANULARITIES:
            raise ValueError(
                f"unknown cache granularity {self.cache_granularity!r}; "
                f"expected one of {CACHE_GRANULARITIES}")
        if self.bypass_enabled is None:
            self.bypass_enabled = not self.kind.startswith("HONGTU")
        self.bypass_enabled = bool(self.bypass_enabled)

    @classmethod
    def normalize(cls, value) -> "PolicySpec":
        if isinstance(value, PolicySpec):
            return value
        if isinstance(value, str):
            return cls(value)
        raise TypeError(f"expected a policy name or PolicySpec, got {type(value)!r}")


class CacheState:
    """Byte-granular LRU cache with a reservable write-back share.

    ``reserved`` bytes are held back from the cacheable capacity (the
    gradient accumulation buffer trades water with cached layers).  Evicted
    entries are clean copies, so eviction never costs I/O; only misses do.
    An entry larger than the unreserved space streams through uncached.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        self.capacity = int(capacity)
        self.reserved = 0
        self.occupied = 0
        self._entries: OrderedDict = OrderedDict()

    def contains(self, key) -> bool:
        return key in self._entries

    def keys(self) -> list:
        return list(self._entries)

    def _evict_to(self, limit: int) -> list:
        evicted = []
        while self._entries and self.occupied > limit:
            key, size = self._entries.popitem(last=False)
            self.occupied -= size
            evicted.append(key)
        return evicted

    def lookup_admit(self, key, nbytes: int) -> tuple[bool, list]:
        """Touch ``key``; on a miss, admit it if it can ever fit.

        Returns ``(hit, evicted_keys)``.
        """
        if key in self._entries:
            self._entries.move_to_end(key)
            return True, []
        nbytes = int(nbytes)
        limit = self.capacity - self.reserved
        if 0 < nbytes <= limit:
            evicted = self._evict_to(limit - nbytes)
            self._entries[key] = nbytes
            self.occupied += nbytes
            return False, evicted
        return False, []

    def set_reserved(self, nbytes: int) -> list:
        self.reserved = int(nbytes)
        return self._evict_to(self.capacity - self.reserved)

    def refresh(self, key) -> bool:
        """Mark a resident entry as rewritten in place (free of charge)."""
        if key in self._entries:
            self._entries.move_to_end(key)
            return True
        return False


class IoLedger:
    """Append-only record of simulated transfers, residency, and stages.

    Events are ``(epoch, phase, layer, partition, link, direction, kind,
    bytes)`` tuples with 1-based layers; layer-boundary and loss stages use
    partition -1.  Topology bytes keep their own per-link counters and are
    excluded from the payload link totals, but still count toward per-stage
    I/O for the time model.  Keyed storage allocations back a conservation
    audit: every keyed read must hit a live allocation (the input layer
    ``("act", 0)`` pre-exists and is always readable).
    """

    def __init__(self, config: HierarchyConfig, policy: PolicySpec, num_layers: int):
        self.config = config
        self.policy = policy
        self.num_layers = num_layers
        self.epoch = 0
        self.events: list[tuple] = []
        self.stages: list[dict] = []
        self.link_bytes = {link: {"read": 0, "write": 0} for link in LINKS}
        self.topology_bytes = {link: 0 for link in LINKS}
        self.cache_hits = 0
        self.cache_misses = 0
        self.gather_request_bytes = 0
        self.staging_bytes = 0
        self.page_reads = 0
        self.swap_spill_bytes = {"read": 0, "write": 0}
        self.flags: dict = {}
        self.audit_issues: list[tuple] = []
        self.peak_residency = {"gpu": 0, "host": 0, "storage": 0}
        self._levels = {"host": 0, "storage": 0}
        self._allocs: dict[str, dict] = {"host": {}, "storage": {}}
        self._stage: dict | None = None

    # -- stages and transfers ------------------------------------------------

    def set_epoch(self, epoch: int) -> None:
        self.epoch = int(epoch)

    def begin_stage(self, phase: str, layer: int, partition: int) -> None:
        self._stage = {"phase": phase, "layer": int(layer),
                       "partition": int(partition), "flops": 0,
                       "gpu_host_bytes": 0, "storage_bytes": 0}
        self.stages.append(self._stage)

    def charge(self, link: str, direction: str, kind: str, nbytes) -> None:
        nbytes = int(nbytes)
        if nbytes < 0:
            raise ValueError(f"transfer sizes are monotone; got {nbytes} bytes")
        if link not in self.link_bytes:
            raise ValueError(f"unknown link {link!r}")
        if direction not in ("read", "write"):
            raise ValueError(f"unknown direction {direction!r}")
        if nbytes == 0:
            return
        if self._stage is None:
            raise RuntimeError("transfer charged outside any stage")
        if kind == "topology":
            self.topology_bytes[link] += nbytes
        else:
            self.link_bytes[link][direction] += nbytes
        if kind == "spill":
            self.swap_spill_bytes[direction] += nbytes
        if link == "gpu_host":
            self._stage["gpu_host_bytes"] += nbytes
        else:
            self._stage["storage_bytes"] += nbytes
        self.events.append((self.epoch, self._stage["phase"], self._stage["layer"],
                            self._stage["partition"], link, direction, kind, nbytes))

    def note_flops(self, flops) -> None:
        if self._stage is None:
            raise RuntimeError("flops noted outside any stage")
        self._stage["flops"] += int(flops)

    def note_gpu(self, nbytes) -> None:
        nbytes = int(nbytes)
        if nbytes > self.peak_residency["gpu"]:
            self.peak_residency["gpu"] = nbytes
        if nbytes > self.config.gpu_capacity:
            self.flags["gpu_capacity_exceeded"] = True

    # -- residency -----------------------------------------------------------

    def _after_level_change(self, tier: str) -> None:
        level = self._levels[tier]
        if level > self.peak_residency[tier]:
            self.peak_residency[tier] = level
        if tier == "storage" and level > self.config.storage_capacity:
            raise ValueError(
                f"storage residency {level} exceeds capacity "
                f"{self.config.storage_capacity}")

    def level(self, tier: str) -> int:
        return self._levels[tier]

    def set_level(self, tier: str, value) -> None:
        self._levels[tier] = int(value)
        self._after_level_change(tier)

    def alloc(self, tier: str, key, nbytes) -> None:
        allocs = self._allocs[tier]
        if key in allocs:
            raise RuntimeError(f"{tier} allocation {key!r} is already live")
        allocs[key] = int(nbytes)
        self._levels[tier] += int(nbytes)
        self._after_level_change(tier)

    def grow(self, tier: str, key, delta) -> None:
        delta = int(delta)
        if delta == 0:
            return
        allocs = self._allocs[tier]
        allocs[key] = allocs.get(key, 0) + delta
        self._levels[tier] += delta
        self._after_level_change(tier)

    def free(self, tier: str, key) -> None:
        allocs = self._allocs[tier]
        if key not in allocs:
            raise RuntimeError(f"{tier} allocation {key!r} is not live")
        self._levels[tier] -= allocs.pop(key)

    def free_if_live(self, tier: str, key) -> None:
        if key in self._allocs[tier]:
            self.free(tier, key)

    def read_key(self, key) -> None:
        """Audit a keyed storage read against the live allocations."""
        if key == ("act", 0):
            return  # the input layer pre-exists outside the epoch's lifetimes
        if key not in self._allocs["storage"]:
            stage = self._stage or {"phase": "?", "layer": -1}
            self.audit_issues.append(
                (self.epoch, stage["phase"], stage["layer"], key))

    def live_storage_keys(self) -> set:
        return set(self._allocs["storage"])

    # -- views ---------------------------------------------------------------

    def stage_table(self, epoch: int = 1) -> dict:
        """Per-layer payload bytes of one epoch, split by link and direction.

        Backward rows are listed in execution order (last layer first).
        Topology bytes are excluded; they have their own counters.
        """
        def _zero():
            return {"gpu_host": 0, "gpu_storage": 0,
                    "host_storage_reads": 0, "host_storage_writes": 0}

        L = self.num_layers
        table = {"forward": [_zero() for _ in range(L)], "loss": _zero(),
                 "backward": [_zero() for _ in range(L)]}
        for ep, phase, layer, _part, link, direction, kind, nbytes in self.events:
            if ep != epoch or kind == "topology":
                continue
            if phase == "loss":
                row = table["loss"]
            elif phase == "forward":
                row = table["forward"][layer - 1]
            else:
                row = table["backward"][L - layer]
            if link == "host_storage":
                side = "host_storage_reads" if direction == "read" else "host_storage_writes"
                row[side] += nbytes
            else:
                row[link] += nbytes
        return table


def schedule_partitions(plan: PartitionPlan, cached_partitions, row_bytes: int = 1
                        ) -> list[int]:
    """Order partitions to maximize reuse of already-resident source rows.

    Greedy: repeatedly pick the partition whose gather set overlaps the
    modeled cache contents by the most bytes (ties to the smallest id), then
    fold the picked partition's source owners into the model.  Capacity is
    deliberately ignored; the model only tracks which owners were touched.
    With nothing cached the result is ascending ids.
    """
    labels = np.asarray(plan.labels)
    owners: list[dict[int, int]] = []
    for topo in plan.topologies:
        if topo.gather_map.size:
            qs, counts = np.unique(labels[topo.gather_map], return_counts=True)
            owners.append(dict(zip(qs.tolist(), counts.tolist())))
        else:
            owners.append({})
    model = set(cached_partitions)
    remaining = list(range(plan.num_partitions))
    order = []
    while remaining:
        best, best_overlap = remaining[0], -1
        for pid in remaining:
            overlap = row_bytes * sum(
                rows for q, rows in owners[pid].items() if q in model)
            if overlap > best_overlap:
                best, best_overlap = pid, overlap
        order.append(best)
        remaining.remove(best)
        model.update(owners[best])
    return order


class TierSession:
    """Replays training's stage hooks against the three-tier byte model.

    The four policies move the same logical tensors along different routes:

    - ``GRINNDER``: gathered source rows are served from a host-side LRU
      cache of input layers (a missed layer is read from storage once per
      stage run over it); produced rows and gradient reads use the direct
      gpu<->storage link; scattered gradient contributions accumulate in a
      reserved host buffer flushed to storage once per layer.
    - ``HONGTU_SWAP``: every byte crosses the gpu<->host link; whole
      gathered-input snapshots are retained on the host, and per-stage flow
      beyond the host capacity swaps 1:1 to storage.
    - ``HONGTU_INTERMEDIATE``: like the swap policy but retains the
      aggregated intermediate (one layer) instead of the gathered input.
    - ``NAIVE``: no host tier; every row moves between GPU and storage
      directly, and gathers are charged at page granularity.

    The session's ledger is deterministic: it depends only on the plan,
    the layer widths, the policy, and the configuration.
    """

    def __init__(self, plan: PartitionPlan, dims, policy, config: HierarchyConfig,
                 aggregation_mode: str = "mean_self_loop"):
        self.plan = plan
        self.policy = PolicySpec.normalize(policy)
        self.config = config
        dims = [int(d) for d in dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError("dims must list input, hidden, and output widths")
        if aggregation_mode not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation_mode {aggregation_mode!r}")
        if (self.policy.kind == "HONGTU_INTERMEDIATE"
                and aggregation_mode not in SUM_AGGREGATION_MODES):
            raise ValueError(
                "HONGTU_INTERMEDIATE retains aggregated intermediates, which "
                f"requires a normalized-sum aggregation, not {aggregation_mode!r}")
        self.dims = dims
        self.num_layers = len(dims) - 1
        n = plan.num_vertices
        bpv = int(config.bytes_per_value)
        self.layer_bytes = [n * d * bpv for d in dims]
        self.t_rows = [t.targets.size for t in plan.topologies]
        self.g_rows = [t.gather_map.size for t in plan.topologies]
        self.e_cnt = [t.num_edges for t in plan.topologies]
        self.topo_bytes = [8 * (t + 1) + 4 * e + 4 * g
                           for t, e, g in zip(self.t_rows, self.e_cnt, self.g_rows)]
        labels = np.asarray(plan.labels)
        self.part_rows = np.bincount(labels, minlength=plan.num_partitions)
        self.owner_rows: list[list[tuple[int, int]]] = []
        self.gather_runs: list[list[tuple[int, int]]] = []
        for topo in plan.topologies:
            if topo.gather_map.size:
                qs, counts = np.unique(labels[topo.gather_map], return_counts=True)
                self.owner_rows.append(list(zip(qs.tolist(), counts.tolist())))
                ids = np.sort(topo.gather_map)
                breaks = np.flatnonzero(np.diff(ids) != 1) + 1
                starts = np.concatenate([[0], breaks])
                ends = np.concatenate([breaks, [ids.size]])
                self.gather_runs.append(
                    [(int(ids[s]), int(e - s)) for s, e in zip(starts, ends)])
            else:
                self.owner_rows.append([])
                self.gather_runs.append([])
        self.ledger = IoLedger(config, self.policy, self.num_layers)
        # Double-buffered staging room for the next partition's gathered rows
        # (what lets modeled_time overlap prefetch with compute).  Reported
        # for sizing, never charged against host capacity: the byte and peak
        # accounting below tracks retained state, not in-flight buffers.
        max_gather = max(self.g_rows, default=0)
        self.ledger.staging_bytes = (
            2 * max_gather * max(dims[:-1]) * int(config.bytes_per_value))
        self.cache: CacheState | None = None
        self._granularity = self.policy.cache_granularity
        if self.policy.kind == "GRINNDER":
            self._granularity = self._degraded_granularity()
            if self._granularity != self.policy.cache_granularity:
                self.ledger.flags["cache_degraded"] = self._granularity
            if self._granularity != "vertex":
                self.cache = CacheState(config.host_capacity)
        self._reserved = 0
        self._epoch = 0
        self._open_layer: tuple | None = None
        self._flow_down = 0
        self._flow_up = 0

    # -- setup helpers --------------------------------------------------------

    def _degraded_granularity(self) -> str:
        """Fall back to coarser-to-finer caching units until one fits."""
        gran = self.policy.cache_granularity
        cap = self.config.host_capacity
        bpv = self.config.bytes_per_value
        if gran == "layer_lru" and max(self.layer_bytes[:-1]) > cap:
            gran = "partition_lru"
        if gran == "partition_lru":
            max_rows = int(self.part_rows.max()) if self.part_rows.size else 0
            if max_rows * max(self.dims[:-1]) * bpv > cap:
                gran = "vertex"
        return gran

    # -- residency helpers ----------------------------------------------------

    def _note_host(self) -> None:
        occupied = self.cache.occupied if self.cache is not None else 0
        self.ledger.set_level("host", occupied + self._reserved)

    def _set_reserved(self, nbytes: int) -> None:
        self._reserved = int(nbytes)
        if self.cache is not None:
            self.cache.set_reserved(self._reserved)
        self._note_host()

    def _host_alloc(self, key, nbytes) -> None:
        self.ledger.alloc("host", key, nbytes)
        self._sync_swap_excess()

    def _host_free(self, key) -> None:
        self.ledger.free("host", key)
        self._sync_swap_excess()

    def _sync_swap_excess(self) -> None:
        excess = max(0, self.ledger.level("host") - self.config.host_capacity)
        self.ledger.set_level("storage", excess)

    # -- transfer helpers -----------------------------------------------------

    def _store(self, direction: str, kind: str, nbytes: int) -> None:
        """A gpu<->storage transfer, rerouted via host when bypass is off."""
        if nbytes == 0:
            return
        if self.policy.bypass_enabled:
            self.ledger.charge("gpu_storage", direction, kind, nbytes)
        else:
            self.ledger.charge("host_storage", direction, kind, nbytes)
            self.ledger.charge("gpu_host", direction, kind, nbytes)

    def _topology(self, pid: int) -> None:
        nbytes = self.topo_bytes[pid]
        if self.policy.kind.startswith("HONGTU"):
            self.ledger.charge("gpu_host", "read", "topology", nbytes)
        else:
            self._store("read", "topology", nbytes)

    def _page_charge(self, pid: int, record: int) -> tuple[int, int]:
        """Bytes and pages for reading a partition's gather rows by page."""
        page = self.config.page_size
        charged = 0
        pages = 0
        for start, length in self.gather_runs[pid]:
            first = (start * record) // page
            last = ((start + length) * record - 1) // page
            count = last - first + 1
            pages += count
            charged += count * page
        return charged, pages

    def _ensure_cached(self, layer: int, pid: int, din: int) -> None:
        """Make partition ``pid``'s gather rows of input ``layer`` host-resident."""
        bpv = self.config.bytes_per_value
        row_b = din * bpv
        self.ledger.gather_request_bytes += self.g_rows[pid] * row_b
        if self.g_rows[pid] == 0:
            return
        led = self.ledger
        if self._granularity == "layer_lru":
            hit, _ = self.cache.lookup_admit(layer, self.layer_bytes[layer])
            if hit:
                led.cache_hits += 1
            else:
                led.cache_misses += 1
                led.read_key(("act", layer))
                led.charge("host_storage", "read", "activation",
                           self.layer_bytes[layer])
            self._note_host()
        elif self._granularity == "partition_lru":
            for q, _rows in self.owner_rows[pid]:
                slab = int(self.part_rows[q]) * row_b
                hit, _ = self.cache.lookup_admit((layer, q), slab)
                if hit:
                    led.cache_hits += 1
                else:
                    led.cache_misses += 1
                    led.read_key(("act", layer))
                    led.charge("host_storage", "read", "activation", slab)
            self._note_host()
        else:  # vertex: page-granular streaming, nothing is retained
            charged, pages = self._page_charge(pid, row_b)
            led.cache_misses += len(self.gather_runs[pid])
            led.page_reads += pages
            led.read_key(("act", layer))
            led.charge("host_storage", "read", "activation", charged)

    def _refresh_written(self, act_index: int, pid: int) -> None:
        """A rewritten layer refreshes any resident host copy in place."""
        if self.cache is None:
            return
        if self._granularity == "layer_lru":
            self.cache.refresh(act_index)
        else:
            self.cache.refresh((act_index, pid))

    def _enter_hongtu_layer(self, phase: str, l: int) -> None:
        if self._open_layer == (phase, l):
            return
        self._open_layer = (phase, l)
        self._flow_down = 0
        self._flow_up = 0
        work = self.layer_bytes[l]
        if phase == "forward" and l == 1:
            work += self.layer_bytes[0]  # the input layer has no retained copy
        self._host_alloc(("work", phase, l), work)

    def _charge_spill(self, down: int, up: int) -> None:
        flow = down + up
        spill = max(0, flow - self.config.host_capacity)
        reads = min(spill, down)
        writes = spill - reads
        if reads:
            self.ledger.charge("host_storage", "read", "spill", reads)
        if writes:
            self.ledger.charge("host_storage", "write", "spill", writes)

    # -- hooks ----------------------------------------------------------------

    def begin_epoch(self) -> None:
        self._epoch += 1
        self.ledger.set_epoch(self._epoch)

    def end_epoch(self) -> None:
        pass

    def partition_order(self, layer: int, phase: str) -> list[int]:
        """Static schedule: most cache overlap first; ascending when cold."""
        if self.policy.kind != "GRINNDER" or self.cache is None:
            return list(range(self.plan.num_partitions))
        if self._granularity == "layer_lru":
            cached = (set(range(self.plan.num_partitions))
                      if self.cache.contains(layer) else set())
        else:
            cached = {key[1] for key in self.cache.keys() if key[0] == layer}
        row_b = self.dims[layer] * self.config.bytes_per_value
        return schedule_partitions(self.plan, cached, row_b)

    def forward_partition(self, layer: int, pid: int) -> None:
        l = layer + 1
        din, dout = self.dims[layer], self.dims[l]
        bpv = self.config.bytes_per_value
        led = self.ledger
        led.begin_stage("forward", l, pid)
        kind = self.policy.kind
        if kind.startswith("HONGTU"):
            self._enter_hongtu_layer("forward", l)
        self._topology(pid)
        gather_b = self.g_rows[pid] * din * bpv
        out_b = self.t_rows[pid] * dout * bpv
        if kind == "GRINNDER":
            self._ensure_cached(layer, pid, din)
            led.charge("gpu_host", "read", "activation", gather_b)
            self._store("write", "activation", out_b)
            led.grow("storage", ("act", l), out_b)
            self._refresh_written(l, pid)
        elif kind == "NAIVE":
            charged, pages = self._page_charge(pid, din * bpv)
            led.page_reads += pages
            if charged:
                led.read_key(("act", layer))
                led.charge("gpu_storage", "read", "activation", charged)
            led.charge("gpu_storage", "write", "snapshot", gather_b)
            led.grow("storage", ("snap", l), gather_b)
            inter_b = 2 * self.t_rows[pid] * din * bpv
            led.charge("gpu_storage", "write", "intermediate", inter_b)
            led.grow("storage", ("int", l), inter_b)
            led.charge("gpu_storage", "write", "activation", out_b)
            led.grow("storage", ("act", l), out_b)
        else:
            led.charge("gpu_host", "read", "activation", gather_b)
            if kind == "HONGTU_SWAP":
                led.charge("gpu_host", "write", "snapshot", gather_b)
                up = gather_b + out_b
            else:
                keep_b = self.t_rows[pid] * din * bpv
                led.charge("gpu_host", "write", "intermediate", keep_b)
                up = keep_b + out_b
            led.charge("gpu_host", "write", "activation", out_b)
            self._flow_down += gather_b
            self._flow_up += up
        led.note_gpu((self.g_rows[pid] * din + self.t_rows[pid] * dout
                      + din * dout) * bpv + self.topo_bytes[pid])
        led.note_flops(2 * self.t_rows[pid] * din * dout + 2 * self.e_cnt[pid] * din)

    def end_forward_layer(self, layer: int) -> None:
        l = layer + 1
        led = self.ledger
        led.begin_stage("forward", l, -1)
        kind = self.policy.kind
        if kind.startswith("HONGTU"):
            self._charge_spill(self._flow_down, self._flow_up)
            if kind == "HONGTU_SWAP":
                self._host_alloc(("snap", l), self._flow_down)
            else:
                self._host_alloc(("int", l), self.layer_bytes[layer])
            self._host_alloc(("ret_act", l), self.layer_bytes[l])
            self._host_free(("work", "forward", l))
            self._open_layer = None

    def loss_stage(self) -> None:
        L = self.num_layers
        n = self.plan.num_vertices
        bpv = self.config.bytes_per_value
        d_last = self.layer_bytes[L]
        led = self.ledger
        led.begin_stage("loss", L, -1)
        kind = self.policy.kind
        if kind == "GRINNDER":
            led.read_key(("act", L))
            self._store("read", "activation", d_last)
            led.charge("gpu_host", "write", "gradient", d_last)
            self._set_reserved(self.layer_bytes[L - 1] if L > 1 else 0)
            led.charge("host_storage", "write", "gradient", d_last)
            led.alloc("storage", ("grad", L), d_last)
            led.free("storage", ("act", L))
        elif kind == "NAIVE":
            led.read_key(("act", L))
            led.charge("gpu_storage", "read", "activation", d_last)
            led.alloc("storage", ("loss_scratch",), d_last)
            led.charge("gpu_storage", "write", "gradient", d_last)
            led.alloc("storage", ("grad", L), d_last)
            led.free("storage", ("loss_scratch",))
        else:
            self._host_alloc(("grad", L), d_last)
            self._host_alloc(("work", "loss"), d_last)
            led.charge("gpu_host", "read", "activation", d_last)
            led.charge("gpu_host", "write", "gradient", d_last)
            self._charge_spill(d_last, d_last)
            self._host_free(("work", "loss"))
        led.note_gpu(2 * n * self.dims[L] * bpv)
        led.note_flops(2 * n * self.dims[L])

    def backward_partition(self, layer: int, pid: int) -> None:
        l = layer + 1
        L = self.num_layers
        din, dl = self.dims[layer], self.dims[l]
        bpv = self.config.bytes_per_value
        led = self.ledger
        led.begin_stage("backward", l, pid)
        kind = self.policy.kind
        if kind.startswith("HONGTU"):
            self._enter_hongtu_layer("backward", l)
        self._topology(pid)
        gather_b = self.g_rows[pid] * din * bpv
        slice_b = self.t_rows[pid] * dl * bpv
        mask_b = slice_b if l < L else 0
        if kind == "GRINNDER":
            self._ensure_cached(layer, pid, din)
            led.charge("gpu_host", "read", "activation", gather_b)
            if mask_b:
                led.read_key(("act", l))
                self._store("read", "activation", mask_b)
            led.read_key(("grad", l))
            self._store("read", "gradient", slice_b)
            if l > 1:
                led.charge("gpu_host", "write", "gradient", gather_b)
        elif kind == "NAIVE":
            led.read_key(("snap", l))
            led.charge("gpu_storage", "read", "snapshot", gather_b)
            led.read_key(("int", l))
            led.charge("gpu_storage", "read", "intermediate",
                       self.t_rows[pid] * din * bpv)
            led.read_key(("grad", l))
            led.charge("gpu_storage", "read", "gradient", slice_b)
            if mask_b:
                led.read_key(("act", l))
                led.charge("gpu_storage", "read", "activation", mask_b)
        else:
            if kind == "HONGTU_SWAP":
                led.charge("gpu_host", "read", "snapshot", gather_b)
                down = gather_b + slice_b + mask_b
            else:
                keep_b = self.t_rows[pid] * din * bpv
                led.charge("gpu_host", "read", "intermediate", keep_b)
                down = keep_b + slice_b + mask_b
            led.charge("gpu_host", "read", "gradient", slice_b)
            if mask_b:
                led.charge("gpu_host", "read", "activation", mask_b)
            up = gather_b if l > 1 else 0
            if up:
                led.charge("gpu_host", "write", "gradient", up)
            self._flow_down += down
            self._flow_up += up
        led.note_gpu(2 * (self.g_rows[pid] * din + self.t_rows[pid] * dl
                          + din * dl) * bpv + self.topo_bytes[pid])
        led.note_flops(6 * self.t_rows[pid] * din * dl + 4 * self.e_cnt[pid] * din)

    def end_backward_layer(self, layer: int) -> None:
        l = layer + 1
        led = self.ledger
        led.begin_stage("backward", l, -1)
        kind = self.policy.kind
        prev_b = self.layer_bytes[layer]  # the accumulated downstream gradient
        if kind == "GRINNDER":
            if l > 1:
                led.charge("host_storage", "write", "gradient", prev_b)
                led.alloc("storage", ("grad", l - 1), prev_b)
            led.free("storage", ("grad", l))
            led.free_if_live("storage", ("act", l))
            nxt = l - 1
            self._set_reserved(self.layer_bytes[nxt - 1] if nxt > 1 else 0)
        elif kind == "NAIVE":
            if l > 1:
                led.charge("gpu_storage", "write", "gradient", prev_b)
                led.alloc("storage", ("grad", l - 1), prev_b)
            led.free("storage", ("grad", l))
            led.free("storage", ("snap", l))
            led.free("storage", ("int", l))
            led.free_if_live("storage", ("act", l))
        else:
            self._charge_spill(self._flow_down, self._flow_up)
            self._host_free(("work", "backward", l))
            self._host_free(("grad", l))
            if l > 1:
                self._host_alloc(("grad", l - 1), prev_b)
            self._host_free(("snap", l) if kind == "HONGTU_SWAP" else ("int", l))
            self._host_free(("ret_act", l))
            self._open_layer = None
