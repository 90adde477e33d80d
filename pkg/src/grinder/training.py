"""Exact full-graph training in monolithic and partitioned execution modes.

Both modes run the same layer arithmetic: aggregate over in-neighbors plus
an implicit self-loop, normalize, multiply by the layer weight, optionally
L2-normalize rows, and apply ReLU on every layer but the last.  The
monolithic path treats the whole graph as one topology; the partitioned path
gathers each partition's required activation rows, executes per partition,
and re-gathers those rows from the retained layer activations during the
backward pass instead of storing input snapshots.  Gradient accumulation
across partitions always runs in ascending partition id, so any partition
processing order yields bitwise-identical results.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import LabeledDataset
from .graph import CsrGraph
from .model import ModelState, copy_model, softmax_cross_entropy_loss, train_accuracy
from .plan import PartitionPlan, PartitionTopology, build_partition_plan

__all__ = [
    "compute_gradients",
    "finite_difference_check",
    "layer_forward",
    "partitioned_train",
    "reference_train",
    "regather_backward",
    "scatter_accumulate",
    "trace_to_csv",
    "write_trace_csv",
]


def _segment_rows_sum(values: np.ndarray, seg_ptr: np.ndarray,
                      num_segments: int) -> np.ndarray:
    """Row-wise sums over contiguous segments, zeros for empty segments."""
    out = np.zeros((num_segments, values.shape[1]), dtype=np.float64)
    nonempty = np.flatnonzero(np.diff(seg_ptr) > 0)
    if nonempty.size:
        out[nonempty] = np.add.reduceat(values, seg_ptr[nonempty], axis=0)
    return out


def _aggregate(ga: np.ndarray, topo: PartitionTopology, mode: str) -> np.ndarray:
    """Sum each target's gathered neighbor rows plus its own row."""
    if mode == "mean_self_loop":
        contrib = ga[topo.src_pos]
        self_rows = ga[topo.self_pos]
    else:
        du = topo.gather_indeg[topo.src_pos] + 1.0
        dv = topo.target_indeg[topo.edge_local_target] + 1.0
        contrib = ga[topo.src_pos] * (1.0 / np.sqrt(du * dv))[:, None]
        self_rows = ga[topo.self_pos] * (1.0 / (topo.target_indeg + 1.0))[:, None]
    return _segment_rows_sum(contrib, topo.tgt_ptr, topo.targets.size) + self_rows


def _normalize(aggregated: np.ndarray, topo: PartitionTopology, mode: str) -> np.ndarray:
    """Degree-normalize the aggregate (a no-op for pre-weighted modes)."""
    if mode == "mean_self_loop":
        return aggregated / (topo.target_indeg + 1.0)[:, None]
    return aggregated


def _row_norms(matrix: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(matrix * matrix, axis=1, keepdims=True))


def _layer_apply(layer: int, ga: np.ndarray, topo: PartitionTopology,
                 model: ModelState) -> tuple[np.ndarray, np.ndarray]:
    """Run one layer on gathered input rows; returns (output, pre-activation)."""
    pre = _normalize(_aggregate(ga, topo, model.aggregation_mode),
                     topo, model.aggregation_mode) @ model.weights[layer]
    out = pre
    if model.row_normalize:
        norms = _row_norms(pre)
        out = np.divide(pre, norms, out=np.zeros_like(pre), where=norms > 0)
    if layer < model.num_layers - 1:
        out = np.maximum(out, 0.0)
    return out, pre


def layer_forward(layer: int, input_rows: np.ndarray, topology: PartitionTopology,
                  model: ModelState) -> np.ndarray:
    """One layer over one partition: rows over the gather map in, rows over
    the owned targets out.  The last layer skips the nonlinearity."""
    weight = model.weights[layer]
    if input_rows.ndim != 2 or input_rows.shape[0] != topology.gather_map.size:
        raise ValueError(
            f"input has {input_rows.shape[0]} rows, gather map needs "
            f"{topology.gather_map.size}")
    if input_rows.shape[1] != weight.shape[0]:
        raise ValueError(
            f"input width {input_rows.shape[1]} != layer {layer} input dim "
            f"{weight.shape[0]}")
    out, _ = _layer_apply(layer, input_rows, topology, model)
    return out


def _layer_backward_from_ga(layer: int, ga: np.ndarray, a_out: np.ndarray,
                            grad_out: np.ndarray, topo: PartitionTopology,
                            model: ModelState) -> tuple[np.ndarray, np.ndarray]:
    """Backward through one layer given the gathered (or regathered) input.

    Recomputes the aggregate and its normalization in forward order, derives
    the ReLU mask from the stored layer output, and returns the gradient
    over the gather map plus this partition's weight-gradient contribution.
    """
    mode = model.aggregation_mode
    aggregated = _aggregate(ga, topo, mode)
    normalized = _normalize(aggregated, topo, mode)
    if layer < model.num_layers - 1:
        grad_y = grad_out * (a_out > 0)
    else:
        grad_y = grad_out
    if model.row_normalize:
        pre = normalized @ model.weights[layer]
        norms = _row_norms(pre)
        unit = np.divide(pre, norms, out=np.zeros_like(pre), where=norms > 0)
        inner = np.sum(unit * grad_y, axis=1, keepdims=True)
        grad_pre = np.divide(grad_y - unit * inner, norms,
                             out=np.zeros_like(grad_y), where=norms > 0)
    else:
        grad_pre = grad_y
    grad_weight = normalized.T @ grad_pre
    grad_norm = grad_pre @ model.weights[layer].T
    if mode == "mean_self_loop":
        grad_agg = grad_norm / (topo.target_indeg + 1.0)[:, None]
        edge_vals = grad_agg[topo.edge_local_target]
        self_vals = grad_agg
    else:
        grad_agg = grad_norm
        du = topo.gather_indeg[topo.src_pos] + 1.0
        dv = topo.target_indeg[topo.edge_local_target] + 1.0
        edge_vals = grad_agg[topo.edge_local_target] * (1.0 / np.sqrt(du * dv))[:, None]
        self_vals = grad_agg * (1.0 / (topo.target_indeg + 1.0))[:, None]
    grad_ga = np.zeros_like(ga)
    np.add.at(grad_ga, topo.src_pos, edge_vals)
    grad_ga[topo.self_pos] += self_vals
    return grad_ga, grad_weight


def regather_backward(layer: int, partition: int, A_out: np.ndarray,
                      grad_out: np.ndarray, cached_A_in: np.ndarray,
                      plan: PartitionPlan, model: ModelState
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Backward for one (layer, partition) from re-gathered inputs.

    The layer input is reconstructed by indexing ``cached_A_in`` with the
    partition's gather map; no stored snapshot is consulted.
    """
    topo = plan.topologies[partition]
    if cached_A_in is None or cached_A_in.shape[0] < plan.num_vertices:
        raise ValueError(
            f"partition {partition} input activations are not resident; the "
            f"hierarchy must load them before backward")
    ga = cached_A_in[topo.gather_map]
    if A_out.shape[0] != topo.targets.size or grad_out.shape != A_out.shape:
        raise ValueError("output rows must match the partition's target count")
    return _layer_backward_from_ga(layer, ga, A_out, grad_out, topo, model)


def scatter_accumulate(grad_GA: np.ndarray, gather_map: np.ndarray,
                       global_grad: np.ndarray) -> np.ndarray:
    """Add local gradient rows into the global gradient at their vertices.

    Gather maps are duplicate-free, so a vectorized indexed add is exact;
    callers invoke this in ascending partition id for a fixed accumulation
    order.
    """
    global_grad[gather_map] += grad_GA
    return global_grad


def _dropout_mask(model: ModelState, epoch: int, layer: int,
                  shape: tuple[int, int]) -> np.ndarray | None:
    if model.dropout_rate == 0.0:
        return None
    seq = np.random.SeedSequence(model.dropout_seed, spawn_key=(epoch, layer))
    rng = np.random.Generator(np.random.PCG64(seq))
    keep = 1.0 - model.dropout_rate
    return (rng.random(shape) < keep) / keep


def _whole_graph_topology(graph: CsrGraph) -> PartitionTopology:
    labels = np.zeros(graph.num_vertices, dtype=np.int32)
    return build_partition_plan(graph, labels, 1).topologies[0]


def _forward_monolithic(dataset: LabeledDataset, model: ModelState,
                        topo: PartitionTopology, epoch: int,
                        want_preacts: bool = False):
    acts = [dataset.features]
    preacts = []
    for layer in range(model.num_layers):
        x = acts[layer]
        mask = _dropout_mask(model, epoch, layer, x.shape)
        if mask is not None:
            x = x * mask
        out, pre = _layer_apply(layer, x, topo, model)
        acts.append(out)
        if want_preacts:
            preacts.append(pre)
    return acts, preacts


def _check_finite_loss(loss: float, epoch: int) -> None:
    if not np.isfinite(loss):
        raise ValueError(f"non-finite loss {loss} at epoch {epoch}; "
                         f"reduce the learning rate or check the inputs")


def _epoch_monolithic(dataset: LabeledDataset, model: ModelState,
                      topo: PartitionTopology, epoch: int):
    acts, _ = _forward_monolithic(dataset, model, topo, epoch)
    loss, grad_logits = softmax_cross_entropy_loss(acts[-1], dataset.labels,
                                                   dataset.train_mask)
    _check_finite_loss(loss, epoch)
    acc = train_accuracy(acts[-1], dataset.labels, dataset.train_mask)
    grads: list[np.ndarray] = [np.empty(0)] * model.num_layers
    grad_cur = grad_logits
    for layer in reversed(range(model.num_layers)):
        x = acts[layer]
        mask = _dropout_mask(model, epoch, layer, x.shape)
        if mask is not None:
            x = x * mask
        grad_ga, grads[layer] = _layer_backward_from_ga(
            layer, x, acts[layer + 1], grad_cur, topo, model)
        if layer > 0:
            grad_cur = grad_ga if mask is None else grad_ga * mask
    return loss, acc, grads


def compute_gradients(dataset: LabeledDataset, model: ModelState
                      ) -> tuple[float, float, list[np.ndarray]]:
    """Monolithic loss, train accuracy, and per-layer weight gradients."""
    topo = _whole_graph_topology(dataset.graph)
    return _epoch_monolithic(dataset, model, topo, 0)


def reference_train(dataset: LabeledDataset, model: ModelState, epochs: int,
                    lr: float) -> tuple[ModelState, list[tuple[int, float, float]]]:
    """Whole-graph gradient-descent training; the equivalence oracle."""
    model = copy_model(model)
    topo = _whole_graph_topology(dataset.graph)
    trace = []
    for epoch in range(epochs):
        loss, acc, grads = _epoch_monolithic(dataset, model, topo, epoch)
        trace.append((epoch, loss, acc))
        for w, g in zip(model.weights, grads):
            w -= lr * g
        model.weight_grads = grads
    return model, trace


def partitioned_train(dataset: LabeledDataset, plan: PartitionPlan,
                      model: ModelState, epochs: int, lr: float,
                      hierarchy=None, use_snapshots: bool = False,
                      grad_probe=None, partition_order=None
                      ) -> tuple[ModelState, list[tuple[int, float, float]], object]:
    """Partition-wise training with on-demand input regathering.

    Forward layers run ascending, backward layers descending; partitions
    follow ``partition_order`` (or the hierarchy session's order) but all
    cross-partition accumulation is replayed in ascending partition id.
    ``hierarchy`` may be a tier session whose stage hooks are invoked at
    every (layer, partition) step; its ledger is returned as the third
    element.  ``use_snapshots`` switches the gradient engine to stored
    forward inputs, which must be numerically indistinguishable from
    regathering.  ``grad_probe(epoch, layer, partition, grad_GA, grad_W)``
    observes every backward contribution.
    """
    if plan.num_vertices != dataset.graph.num_vertices:
        raise ValueError("plan was built for a different graph")
    model = copy_model(model)
    n = plan.num_vertices
    num_layers = model.num_layers
    dims = model.dims

    def order_of(layer: int, phase: str) -> list[int]:
        if partition_order is not None:
            return list(partition_order(layer, phase))
        if hierarchy is not None:
            return list(hierarchy.partition_order(layer, phase))
        return list(range(plan.num_partitions))

    trace = []
    for epoch in range(epochs):
        if hierarchy is not None:
            hierarchy.begin_epoch()
        snapshots: dict[tuple[int, int], np.ndarray] = {}
        acts = [dataset.features]
        for layer in range(num_layers):
            mask = _dropout_mask(model, epoch, layer, (n, dims[layer]))
            out = np.zeros((n, dims[layer + 1]), dtype=np.float64)
            for pid in order_of(layer, "forward"):
                topo = plan.topologies[pid]
                ga = acts[layer][topo.gather_map]
                if mask is not None:
                    ga = ga * mask[topo.gather_map]
                out[topo.targets] = layer_forward(layer, ga, topo, model)
                if use_snapshots:
                    snapshots[(layer, pid)] = ga
                if hierarchy is not None:
                    hierarchy.forward_partition(layer, pid)
            acts.append(out)
            if hierarchy is not None:
                hierarchy.end_forward_layer(layer)
        loss, grad_logits = softmax_cross_entropy_loss(acts[-1], dataset.labels,
                                                       dataset.train_mask)
        _check_finite_loss(loss, epoch)
        acc = train_accuracy(acts[-1], dataset.labels, dataset.train_mask)
        trace.append((epoch, loss, acc))
        if hierarchy is not None:
            hierarchy.loss_stage()

        grads = [np.zeros_like(w) for w in model.weights]
        grad_cur = grad_logits
        for layer in reversed(range(num_layers)):
            mask = _dropout_mask(model, epoch, layer, (n, dims[layer]))
            results = {}
            for pid in order_of(layer, "backward"):
                topo = plan.topologies[pid]
                if use_snapshots:
                    ga = snapshots.pop((layer, pid))
                else:
                    ga = acts[layer][topo.gather_map]
                    if mask is not None:
                        ga = ga * mask[topo.gather_map]
                results[pid] = _layer_backward_from_ga(
                    layer, ga, acts[layer + 1][topo.targets],
                    grad_cur[topo.targets], topo, model)
                if hierarchy is not None:
                    hierarchy.backward_partition(layer, pid)
            grad_prev = np.zeros((n, dims[layer]), dtype=np.float64) if layer > 0 else None
            for pid in range(plan.num_partitions):
                grad_ga, grad_w = results[pid]
                if grad_probe is not None:
                    grad_probe(epoch, layer, pid, grad_ga, grad_w)
                grads[layer] += grad_w
                if layer > 0:
                    scatter_accumulate(grad_ga, plan.topologies[pid].gather_map,
                                       grad_prev)
            if layer > 0 and mask is not None:
                grad_prev *= mask
            if hierarchy is not None:
                hierarchy.end_backward_layer(layer)
            grad_cur = grad_prev
        for w, g in zip(model.weights, grads):
            w -= lr * g
        model.weight_grads = grads
        if hierarchy is not None:
            hierarchy.end_epoch()
    ledger = getattr(hierarchy, "ledger", None)
    return model, trace, ledger


def finite_difference_check(dataset: LabeledDataset, model: ModelState,
                            epsilon_fd: float = 1e-4, sample_count: int = 50,
                            seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples weight coordinates with a seeded generator.  A coordinate is
    skipped when its two perturbed passes straddle a ReLU kink: some
    pre-activation entry that differs between the passes flips sign or has
    magnitude below 10 * epsilon_fd.  The relative error divides by
    max(|analytic|, 1e-6).
    """
    model = copy_model(model)
    topo = _whole_graph_topology(dataset.graph)
    _, _, grads = _epoch_monolithic(dataset, model, topo, 0)

    def forward_loss():
        acts, preacts = _forward_monolithic(dataset, model, topo, 0,
                                            want_preacts=True)
        loss, _ = softmax_cross_entropy_loss(acts[-1], dataset.labels,
                                             dataset.train_mask)
        return loss, preacts[:-1]

    sizes = [w.size for w in model.weights]
    offsets = np.cumsum([0] + sizes)
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.choice(offsets[-1], size=min(sample_count, offsets[-1]),
                        replace=False)
    max_rel = 0.0
    for flat in sorted(int(c) for c in chosen):
        layer = int(np.searchsorted(offsets, flat, side="right")) - 1
        i, j = divmod(flat - offsets[layer], model.weights[layer].shape[1])
        weight = model.weights[layer]
        orig = weight[i, j]
        weight[i, j] = orig + epsilon_fd
        loss_hi, pre_hi = forward_loss()
        weight[i, j] = orig - epsilon_fd
        loss_lo, pre_lo = forward_loss()
        weight[i, j] = orig
        kink = False
        for zh, zl in zip(pre_hi, pre_lo):
            changed = zh != zl
            if not changed.any():
                continue
            flips = (zh > 0) != (zl > 0)
            small = (np.abs(zh) < 10 * epsilon_fd) | (np.abs(zl) < 10 * epsilon_fd)
            if np.any(changed & (flips | small)):
                kink = True
                break
        if kink:
            continue
        numeric = (loss_hi - loss_lo) / (2.0 * epsilon_fd)
        analytic = grads[layer][i, j]
        rel = abs(analytic - numeric) / max(abs(analytic), 1e-6)
        max_rel = max(max_rel, rel)
    return max_rel


def trace_to_csv(trace: list[tuple[int, float, float]]) -> str:
    """Render a training trace as ``epoch,loss,train_acc`` CSV text."""
    lines = ["epoch,loss,train_acc"]
    for epoch, loss, acc in trace:
        lines.append(f"{epoch},{loss!r},{acc!r}")
    return "\n".join(lines) + "\n"


def write_trace_csv(path: str | Path, trace: list[tuple[int, float, float]]) -> None:
    Path(path).write_text(trace_to_csv(trace))
