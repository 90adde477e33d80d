"""Partition execution plans: per-partition topologies and gather maps.

A plan fixes, for every partition, the vertices it owns (targets), the
global vertices whose activations it must gather (targets plus all their
in-neighbors, ordered by owning partition then id), and a local edge layout
for aggregation.  Every edge of the graph lands in exactly one partition:
the one owning its destination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import CsrGraph

__all__ = ["PartitionPlan", "PartitionTopology", "build_partition_plan"]


@dataclass
class PartitionTopology:
    """Local 1-hop topology of one partition.

    Edges are grouped by local target: ``src_pos[tgt_ptr[t]:tgt_ptr[t+1]]``
    lists gather-map positions of target t's in-neighbors, ascending.
    ``self_pos[t]`` locates the target's own row in the gather map for the
    implicit self-loop.  ``target_indeg`` and ``gather_indeg`` carry global
    in-degrees for normalization.
    """

    partition_id: int
    targets: np.ndarray
    gather_map: np.ndarray
    tgt_ptr: np.ndarray
    src_pos: np.ndarray
    edge_local_target: np.ndarray
    self_pos: np.ndarray
    target_indeg: np.ndarray
    gather_indeg: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.src_pos.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.targets.size == 0


@dataclass
class PartitionPlan:
    """All per-partition topologies for one labeling of one graph."""

    labels: np.ndarray
    num_partitions: int
    num_vertices: int
    topologies: list[PartitionTopology]
    in_degrees: np.ndarray
    empty_partitions: list[int]

    @property
    def gather_maps(self) -> list[np.ndarray]:
        return [t.gather_map for t in self.topologies]

    @property
    def target_ranges(self) -> list[np.ndarray]:
        return [t.targets for t in self.topologies]

    def gather_rows_total(self) -> int:
        """Sum of gather-map sizes; alpha times |V| in row units."""
        return sum(t.gather_map.size for t in self.topologies)


def build_partition_plan(graph: CsrGraph, labels: np.ndarray,
                         num_partitions: int | None = None) -> PartitionPlan:
    """Build gather maps and local topologies for every partition.

    Each partition's gather map is its targets united with all their
    in-neighbors, sorted by (owning partition, vertex id).  Edge lists are
    re-grouped per local target with source positions ascending, which fixes
    the aggregation order deterministically.
    """
    n = graph.num_vertices
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    p = int(num_partitions) if num_partitions is not None else int(labels.max()) + 1
    if labels.size and (labels.min() < 0 or labels.max() >= p):
        raise ValueError("labels out of range for num_partitions")

    edge_src = graph.edge_sources()
    edge_dst = graph.dst_idx.astype(np.int64)
    in_degrees = np.bincount(edge_dst, minlength=n)
    dst_owner = labels[edge_dst]
    labels64 = labels.astype(np.int64)

    position = np.full(n, -1, dtype=np.int64)
    topologies = []
    empty = []
    for q in range(p):
        targets = np.flatnonzero(labels64 == q)
        mask = dst_owner == q
        e_src = edge_src[mask]
        e_dst = edge_dst[mask]
        members = np.unique(np.concatenate([targets, e_src]))
        order = np.lexsort((members, labels64[members]))
        gather_map = members[order]
        position[gather_map] = np.arange(gather_map.size, dtype=np.int64)
        src_pos = position[e_src]
        local_t = np.searchsorted(targets, e_dst)
        edge_order = np.lexsort((src_pos, local_t))
        src_pos = src_pos[edge_order]
        local_t = local_t[edge_order]
        counts = np.bincount(local_t, minlength=targets.size)
        tgt_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        topologies.append(PartitionTopology(
            partition_id=q,
            targets=targets,
            gather_map=gather_map,
            tgt_ptr=tgt_ptr,
            src_pos=src_pos,
            edge_local_target=local_t,
            self_pos=position[targets],
            target_indeg=in_degrees[targets],
            gather_indeg=in_degrees[gather_map],
        ))
        if targets.size == 0:
            empty.append(q)
        position[gather_map] = -1
    return PartitionPlan(labels=np.asarray(labels, dtype=np.int32),
                         num_partitions=p,
                         num_vertices=n,
                         topologies=topologies,
                         in_degrees=in_degrees,
                         empty_partitions=empty)
