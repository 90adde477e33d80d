"""Epoch simulation, closed-form traffic predictions, and ledger reports.

:func:`simulate_epoch` drives a :class:`~grinder.hierarchy.TierSession`
through the exact stage sequence the trainer uses, so a simulated ledger is
byte-identical to one recorded during real training on the same plan.  The
``predicted_*`` functions compute the same quantities in closed form, which
pins the simulator against hand-derivable numbers, and the ``crossover_*``
helpers compare the regathering policy against the snapshot-retaining one
as the host:storage bandwidth ratio varies.
"""

from __future__ import annotations

from fractions import Fraction
import math

import numpy as np

from .hierarchy import (
    HierarchyConfig,
    PolicySpec,
    TierSession,
    schedule_partitions,
)
from .plan import PartitionPlan

__all__ = [
    "crossover_sweep",
    "crossover_threshold",
    "ledger_csv",
    "ledger_summary",
    "modeled_time",
    "parse_ratio_range",
    "per_partition_traffic",
    "predicted_peak_memory",
    "predicted_traffic",
    "read_amplification_report",
    "schedule_partitions",
    "simulate_epoch",
]

_PHASE_RANK = {"forward": 0, "loss": 1, "backward": 2}


def simulate_epoch(plan: PartitionPlan, dims, policy, config: HierarchyConfig,
                   epochs: int = 1, aggregation_mode: str = "mean_self_loop"):
    """Run the stage sequence of ``epochs`` training epochs, bytes only.

    No tensors move; only the ledger is produced.  The hook order matches
    the trainer exactly: forward layers ascending (each partition, then the
    layer boundary), the loss stage, then backward layers descending.
    """
    epochs = int(epochs)
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    session = TierSession(plan, dims, policy, config, aggregation_mode)
    num_layers = session.num_layers
    for _ in range(epochs):
        session.begin_epoch()
        for layer in range(num_layers):
            for pid in session.partition_order(layer, "forward"):
                session.forward_partition(layer, pid)
            session.end_forward_layer(layer)
        session.loss_stage()
        for layer in reversed(range(num_layers)):
            for pid in session.partition_order(layer, "backward"):
                session.backward_partition(layer, pid)
            session.end_backward_layer(layer)
        session.end_epoch()
    return session.ledger


# ---------------------------------------------------------------------------
# time model


def modeled_time(ledger, config: HierarchyConfig | None = None) -> float:
    """Sum of per-stage times; each stage overlaps compute with both links."""
    cfg = config if config is not None else ledger.config
    total = 0.0
    for stage in ledger.stages:
        compute = (0.0 if math.isinf(cfg.compute_rate)
                   else stage["flops"] / cfg.compute_rate)
        total += max(compute,
                     stage["gpu_host_bytes"] / cfg.host_gpu_bandwidth,
                     stage["storage_bytes"] / cfg.storage_bandwidth)
    return total


# ---------------------------------------------------------------------------
# ledger reports


def ledger_summary(ledger) -> dict:
    """Plain-type digest of a ledger, stable under canonical JSON."""
    links = {}
    for link, sides in ledger.link_bytes.items():
        links[link] = {"read": sides["read"], "write": sides["write"],
                       "total": sides["read"] + sides["write"]}
    lookups = ledger.cache_hits + ledger.cache_misses
    return {
        "policy": ledger.policy.kind,
        "epochs": ledger.epoch,
        "links": links,
        "topology_bytes": dict(ledger.topology_bytes),
        "cache": {
            "hits": ledger.cache_hits,
            "misses": ledger.cache_misses,
            "hit_rate": (ledger.cache_hits / lookups) if lookups else None,
            "request_bytes": ledger.gather_request_bytes,
        },
        "peak_residency": dict(ledger.peak_residency),
        "staging_bytes": ledger.staging_bytes,
        "page_reads": ledger.page_reads,
        "swap_spill_bytes": dict(ledger.swap_spill_bytes),
        "flags": dict(ledger.flags),
        "modeled_time": modeled_time(ledger),
    }


def ledger_csv(ledger) -> str:
    """Payload bytes per (phase, layer, partition, link), as CSV text.

    Topology bytes are excluded (they have their own counters); directions,
    kinds, and epochs are folded together.
    """
    rows: dict[tuple, int] = {}
    for _ep, phase, layer, part, link, _direction, kind, nbytes in ledger.events:
        if kind == "topology":
            continue
        key = (phase, layer, part, link)
        rows[key] = rows.get(key, 0) + nbytes
    lines = ["phase,layer,partition,link,bytes"]
    for key in sorted(rows, key=lambda k: (_PHASE_RANK[k[0]], k[1], k[2], k[3])):
        phase, layer, part, link = key
        lines.append(f"{phase},{layer},{part},{link},{rows[key]}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# closed-form predictions


def _stage_row(gh=0, gs=0, hs_r=0, hs_w=0) -> dict:
    return {
        "gpu_host": gh,
        "gpu_storage": gs,
        "host_storage_reads": hs_r,
        "host_storage_writes": hs_w,
    }


def _host_flow_row(down: int, up: int, host_capacity: int) -> dict:
    """Host-routed stage: flow beyond capacity swaps 1:1 to storage.

    The spilled share is attributed to reads up to the stage's down-flow
    and to writes for the rest.
    """
    flow = down + up
    spill = max(0, flow - host_capacity)
    reads = min(spill, down)
    return _stage_row(gh=flow, hs_r=reads, hs_w=spill - reads)


def _integral_bytes(alpha, layer_bytes: int) -> int:
    gathered = Fraction(alpha) * layer_bytes
    if gathered.denominator != 1:
        raise ValueError(
            f"alpha * layer_bytes must be a whole number of bytes, "
            f"got {gathered}")
    return int(gathered)


def predicted_traffic(policy, alpha, layer_bytes: int, num_layers: int,
                      host_capacity: int | None = None) -> dict:
    """Exact per-stage byte table for one epoch, layers of uniform width.

    ``alpha`` is the gather expansion (gathered rows per vertex); the
    gathered bytes per layer must come out integral.  Matches
    :func:`simulate_epoch` stage for stage on any plan with the same alpha
    and uniform layer widths.
    """
    policy = PolicySpec.normalize(policy)
    d = int(layer_bytes)
    L = int(num_layers)
    ga = _integral_bytes(alpha, d)
    kind = policy.kind
    if kind == "GRINNDER":
        cap = 2 * d if host_capacity is None else int(host_capacity)
        hot_last = cap >= 2 * d  # both final inputs fit: layer-L regather hits
        forward = [_stage_row(gh=ga, gs=d, hs_r=d) for _ in range(L)]
        loss = _stage_row(gh=d, gs=d, hs_w=d)
        backward = []
        for layer in range(L, 0, -1):
            mask = d if layer < L else 0
            scatter = ga if layer > 1 else 0
            flush = d if layer > 1 else 0
            read = 0 if (layer == L and hot_last) else d
            backward.append(_stage_row(gh=ga + scatter, gs=mask + d,
                                       hs_r=read, hs_w=flush))
        return {"forward": forward, "loss": loss, "backward": backward}
    if kind == "NAIVE":
        forward = [_stage_row(gs=2 * ga + 3 * d) for _ in range(L)]
        loss = _stage_row(gs=2 * d)
        backward = []
        for layer in range(L, 0, -1):
            reads = ga + 2 * d + (d if layer < L else 0)
            writes = d if layer > 1 else 0
            backward.append(_stage_row(gs=reads + writes))
        return {"forward": forward, "loss": loss, "backward": backward}
    # Host-routed snapshot policies: the retained tensor is the gathered
    # input (swap variant) or the aggregated intermediate (one layer).
    cap = 0 if host_capacity is None else int(host_capacity)
    keep = ga if kind == "HONGTU_SWAP" else d
    forward = [_host_flow_row(ga, keep + d, cap) for _ in range(L)]
    loss = _host_flow_row(d, d, cap)
    backward = []
    for layer in range(L, 0, -1):
        down = keep + d + (d if layer < L else 0)
        up = ga if layer > 1 else 0
        backward.append(_host_flow_row(down, up, cap))
    return {"forward": forward, "loss": loss, "backward": backward}


def predicted_peak_memory(policy, alpha, layer_bytes: int, num_layers: int,
                          host_capacity: int | None = None) -> dict:
    """Peak host and storage residency for one epoch, uniform layer widths."""
    policy = PolicySpec.normalize(policy)
    d = int(layer_bytes)
    L = int(num_layers)
    ga = _integral_bytes(alpha, d)
    kind = policy.kind
    if kind == "GRINNDER":
        cap = 2 * d if host_capacity is None else int(host_capacity)
        # All input layers plus the write-back reservation, clipped by the
        # cache budget; storage holds every produced layer plus one gradient.
        demand = d * L + (d if L > 1 else 0)
        return {"host": min(cap, demand), "storage": d * L + d}
    if kind == "NAIVE":
        return {"host": 0, "storage": (ga + 3 * d) * L + 2 * d}
    if kind == "HONGTU_SWAP":
        host = (ga + d) * L + 2 * d
    else:
        host = 2 * d * L + 2 * d
    cap = 0 if host_capacity is None else int(host_capacity)
    return {"host": host, "storage": max(0, host - cap)}


def per_partition_traffic(alpha_p, hidden: int, targets: int,
                          bytes_per_value: int = 8) -> int:
    """Gathered bytes one partition moves per layer; must come out whole."""
    total = Fraction(alpha_p) * int(targets) * int(hidden) * int(bytes_per_value)
    if total.denominator != 1:
        raise ValueError(
            f"per-partition gather traffic must be a whole number of bytes, "
            f"got {total}")
    return int(total)


# ---------------------------------------------------------------------------
# regather / snapshot crossover


def crossover_threshold(alpha) -> Fraction:
    """Host:storage bandwidth ratio above which regathering wins: 2(a+1)/(a+3)."""
    a = Fraction(alpha)
    return Fraction(2) * (a + 1) / (a + 3)


def crossover_sweep(alpha, ratios, layer_bytes=1, storage_bandwidth=1) -> list[dict]:
    """Backward-layer stage times across host:storage bandwidth ratios.

    Regathering moves (2a + 2) layers over the host link and 2 layers over
    storage; the snapshot variant moves (a + 3) layers over storage.  Exact
    rational arithmetic throughout, so a tie is a true tie and goes to the
    regatherer (it holds no snapshot memory).
    """
    a = Fraction(alpha)
    d = Fraction(layer_bytes)
    storage_bw = Fraction(storage_bandwidth)
    rows = []
    for ratio in ratios:
        r = Fraction(ratio)
        if r <= 0:
            raise ValueError(f"bandwidth ratio must be positive, got {r}")
        regather = max((2 * a + 2) * d / (r * storage_bw), 2 * d / storage_bw)
        snapshot = (a + 3) * d / storage_bw
        rows.append({
            "ratio": r,
            "regather_time": regather,
            "snapshot_time": snapshot,
            "winner": "GRINNDER" if regather <= snapshot else "HONGTU_INTERMEDIATE",
        })
    return rows


def parse_ratio_range(text: str) -> list[Fraction]:
    """Parse ``start:stop:step`` into an inclusive list of exact ratios."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"expected start:stop:step, got {text!r}")
    try:
        start, stop, step = (Fraction(part) for part in parts)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"bad ratio range {text!r}: {exc}") from None
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if stop < start:
        raise ValueError(f"stop must be >= start in {text!r}")
    ratios = []
    value = start
    while value <= stop:
        ratios.append(value)
        value += step
    return ratios


# ---------------------------------------------------------------------------
# read amplification


def read_amplification_report(plan: PartitionPlan, page_size: int,
                              record_bytes: int, granularity: str | None = None
                              ) -> dict:
    """Charged vs useful bytes for serving every partition's gather set.

    ``vertex`` granularity charges whole pages per contiguous id run (rows
    scattered across partitions each drag in a full page); ``partition``
    granularity charges whole source-partition slabs exactly.  With no
    ``granularity`` both are reported.
    """
    page = int(page_size)
    record = int(record_bytes)
    if page <= 0 or record <= 0:
        raise ValueError("page_size and record_bytes must be positive")
    wanted = ("vertex", "partition") if granularity is None else (granularity,)
    labels = np.asarray(plan.labels)
    part_rows = np.bincount(labels, minlength=plan.num_partitions)
    useful = int(plan.gather_rows_total()) * record
    report = {}
    for gran in wanted:
        if gran == "vertex":
            charged = 0
            for topo in plan.topologies:
                ids = np.sort(topo.gather_map)
                if not ids.size:
                    continue
                breaks = np.flatnonzero(np.diff(ids) != 1) + 1
                starts = np.concatenate([[0], breaks])
                ends = np.concatenate([breaks, [ids.size]])
                for s, e in zip(starts.tolist(), ends.tolist()):
                    first = (int(ids[s]) * record) // page
                    last = ((int(ids[s]) + (e - s)) * record - 1) // page
                    charged += (last - first + 1) * page
        elif gran == "partition":
            charged = 0
            for topo in plan.topologies:
                if not topo.gather_map.size:
                    continue
                sources = np.unique(labels[topo.gather_map])
                charged += int(part_rows[sources].sum()) * record
        else:
            raise ValueError(f"unknown granularity {gran!r}")
        report[gran] = {
            "charged_bytes": int(charged),
            "useful_bytes": useful,
            "ratio": (charged / useful) if useful else 1.0,
        }
    return report
