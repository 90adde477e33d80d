from __future__ import annotations

import numpy as np
import pytest

import oracles
from grinder.dataset import LabeledDataset, make_random_dataset
from grinder.graph import build_csr, generate_kronecker
from grinder.model import ModelState, create_model, softmax_cross_entropy_loss
from grinder.partition import random_partition
from grinder.plan import build_partition_plan
from grinder.training import (
    compute_gradients,
    finite_difference_check,
    layer_forward,
    partitioned_train,
    reference_train,
    regather_backward,
    scatter_accumulate,
    trace_to_csv,
)


def _undirected(pairs, n):
    return build_csr(list(pairs) + [(b, a) for a, b in pairs], n)


def _path3():
    return _undirected([(0, 1), (1, 2)], 3)


def _single_partition_plan(graph):
    return build_partition_plan(graph, np.zeros(graph.num_vertices, dtype=np.int32), 1)


def _model_from_weights(weights, **kwargs):
    mat = [np.asarray(w, dtype=np.float64) for w in weights]
    model = ModelState(weights=mat,
                       weight_grads=[np.zeros_like(w) for w in mat],
                       aggregation_mode=kwargs.get("aggregation_mode", "mean_self_loop"),
                       row_normalize=kwargs.get("row_normalize", False))
    return model


def test_plan_gather_covers_dependencies():
    # Partition 0 owns {0, 1}; in-edges arrive from 4, 6, and 7, which live
    # in partitions 2 and 3, so the gather map has 5 vertices from 3
    # partitions.
    edges = [(4, 0), (6, 1), (7, 1), (0, 1), (1, 0), (2, 3), (3, 2), (5, 4)]
    g = build_csr(edges, 8)
    labels = np.array([0, 0, 1, 1, 2, 2, 3, 3], dtype=np.int32)
    plan = build_partition_plan(g, labels, 4)
    assert list(plan.gather_maps[0]) == [0, 1, 4, 6, 7]
    assert list(plan.target_ranges[0]) == [0, 1]
    touched = {int(labels[v]) for v in plan.gather_maps[0]}
    assert len(touched) == 3


def test_plan_single_partition_is_whole_graph():
    g = generate_kronecker(6, 6, seed=3)
    plan = _single_partition_plan(g)
    assert np.array_equal(plan.gather_maps[0], np.arange(g.num_vertices))
    assert plan.topologies[0].num_edges == g.num_edges


def test_plan_edge_coverage_and_alpha():
    from grinder.partition import expansion_ratio

    g = generate_kronecker(9, 8, seed=17)
    labels = random_partition(g.num_vertices, 6, seed=4)
    plan = build_partition_plan(g, labels, 6)
    assert sum(t.num_edges for t in plan.topologies) == g.num_edges
    quality = expansion_ratio(g, labels, 6)
    for p, topo in enumerate(plan.topologies):
        if topo.targets.size:
            alpha = topo.gather_map.size / topo.targets.size
            assert alpha == pytest.approx(quality.per_partition_alpha[p], rel=1e-12)


def test_plan_gather_map_sorted_by_owner_then_id():
    g = generate_kronecker(8, 6, seed=5)
    labels = random_partition(g.num_vertices, 4, seed=1)
    plan = build_partition_plan(g, labels, 4)
    for topo in plan.topologies:
        gm = topo.gather_map
        assert len(np.unique(gm)) == len(gm)
        keys = [(int(labels[v]), int(v)) for v in gm]
        assert keys == sorted(keys)


def test_plan_flags_empty_partition():
    g = build_csr([(0, 1), (1, 0)], 2)
    labels = np.zeros(2, dtype=np.int32)
    plan = build_partition_plan(g, labels, 3)
    assert plan.empty_partitions == [1, 2]
    assert plan.topologies[1].num_edges == 0


def test_layer_forward_isolated_vertex_relu():
    g = build_csr([], 1)
    plan = _single_partition_plan(g)
    model = _model_from_weights([np.eye(2), np.eye(2)])
    out = layer_forward(0, np.array([[-1.0, 2.0]]), plan.topologies[0], model)
    assert np.array_equal(out, [[0.0, 2.0]])


def test_layer_forward_mean_includes_self():
    # Vertex 0 aggregates from incoming neighbors {1, 2} and itself:
    # (1 + 2 + 4) / 3.
    g = build_csr([(1, 0), (2, 0)], 3)
    plan = _single_partition_plan(g)
    model = _model_from_weights([np.array([[1.0]])])
    out = layer_forward(0, np.array([[1.0], [2.0], [4.0]]), plan.topologies[0], model)
    assert out[0, 0] == pytest.approx(7.0 / 3.0, rel=1e-15)
    # Final layer of a one-layer model: no nonlinearity on negatives.
    out_neg = layer_forward(0, np.array([[-9.0], [0.0], [0.0]]), plan.topologies[0], model)
    assert out_neg[0, 0] == pytest.approx(-3.0, rel=1e-15)


def test_layer_forward_zero_weight_zero_output():
    g = _path3()
    plan = _single_partition_plan(g)
    model = _model_from_weights([np.zeros((2, 2))])
    rng = np.random.default_rng(0)
    out = layer_forward(0, rng.normal(size=(3, 2)), plan.topologies[0], model)
    assert np.array_equal(out, np.zeros((3, 2)))


def test_layer_forward_rejects_shape_mismatch():
    g = _path3()
    plan = _single_partition_plan(g)
    model = _model_from_weights([np.eye(2)])
    with pytest.raises(ValueError):
        layer_forward(0, np.zeros((2, 2)), plan.topologies[0], model)
    with pytest.raises(ValueError):
        layer_forward(0, np.zeros((3, 5)), plan.topologies[0], model)


def test_layer_forward_matches_mean_oracle():
    g = generate_kronecker(7, 5, seed=8)
    n = g.num_vertices
    plan = _single_partition_plan(g)
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(n, 4))
    model = _model_from_weights([np.eye(4)])
    out = layer_forward(0, feats, plan.topologies[0], model)
    adj = oracles.csr_to_adjacency(g.src_ptr, g.dst_idx)
    want = oracles.mean_aggregate(adj, feats)
    np.testing.assert_allclose(out, want, rtol=1e-12, atol=1e-14)


def test_backward_matches_hand_chain_rule():
    g = _path3()
    plan = _single_partition_plan(g)
    x = np.array([[1.0, 2.0], [3.0, 5.0], [0.5, -1.0]])
    w = np.array([[1.0, 0.5], [-0.25, 2.0]])
    dz = np.array([[0.1, -0.2], [0.3, 0.7], [-1.0, 0.4]])
    model = _model_from_weights([w])
    a_out = layer_forward(0, x, plan.topologies[0], model)
    grad_ga, grad_w = regather_backward(0, 0, a_out, dz, x, plan, model)
    global_grad = np.zeros((3, 2))
    scatter_accumulate(grad_ga, plan.gather_maps[0], global_grad)
    want_gx, want_gw = oracles.path3_linear_backward(x, w, dz)
    np.testing.assert_allclose(global_grad, want_gx, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(grad_w, want_gw, rtol=1e-12, atol=1e-14)


def test_backward_zero_upstream_gradient():
    g = _path3()
    plan = _single_partition_plan(g)
    x = np.arange(6, dtype=np.float64).reshape(3, 2)
    model = _model_from_weights([np.eye(2)])
    a_out = layer_forward(0, x, plan.topologies[0], model)
    grad_ga, grad_w = regather_backward(0, 0, a_out, np.zeros((3, 2)), x, plan, model)
    assert np.array_equal(grad_ga, np.zeros((3, 2)))
    assert np.array_equal(grad_w, np.zeros((2, 2)))


def test_scatter_accumulate_sums_shared_vertices():
    global_grad = np.zeros((3, 2))
    scatter_accumulate(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0, 1]), global_grad)
    scatter_accumulate(np.array([[10.0, 20.0], [30.0, 40.0]]), np.array([1, 2]), global_grad)
    assert np.array_equal(global_grad, [[1.0, 2.0], [13.0, 24.0], [30.0, 40.0]])


def test_scatter_single_partition_is_permutation():
    global_grad = np.zeros((3, 1))
    grads = np.array([[5.0], [6.0], [7.0]])
    scatter_accumulate(grads, np.array([2, 0, 1]), global_grad)
    assert np.array_equal(global_grad, [[6.0], [7.0], [5.0]])


def _separable_dataset():
    g = _undirected([(0, 1), (2, 3)], 4)
    feats = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
    labels = np.array([0, 0, 1, 1])
    mask = np.ones(4, dtype=bool)
    return LabeledDataset(graph=g, features=feats, labels=labels, train_mask=mask)


def test_reference_train_lr_zero_keeps_weights():
    ds = _separable_dataset()
    model = create_model(2, 2, num_layers=2, hidden_dim=4, seed=3)
    before = [w.copy() for w in model.weights]
    trained, trace = reference_train(ds, model, epochs=5, lr=0.0)
    assert len(trace) == 5
    assert all(np.array_equal(a, b) for a, b in zip(trained.weights, before))


def test_reference_train_separable_reaches_full_accuracy():
    ds = _separable_dataset()
    model = create_model(2, 2, num_layers=2, hidden_dim=4, seed=0)
    trained, trace = reference_train(ds, model, epochs=200, lr=0.01)
    assert trace[-1][2] == 1.0
    assert trace[-1][1] < trace[0][1]


def test_reference_train_aborts_on_nonfinite_loss():
    ds = _separable_dataset()
    model = create_model(2, 2, num_layers=2, hidden_dim=4, seed=3)
    model.weights[0][:] = 1e308
    model.weights[1][:] = 1e308
    with pytest.raises(ValueError):
        reference_train(ds, model, epochs=1, lr=0.01)


def test_loss_matches_oracle():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(6, 3))
    labels = rng.integers(0, 3, size=6)
    mask = np.array([True, False, True, True, False, True])
    loss, grad = softmax_cross_entropy_loss(logits, labels, mask)
    want_loss, want_grad = oracles.softmax_cross_entropy(logits, labels, mask)
    assert loss == pytest.approx(want_loss, rel=1e-12)
    np.testing.assert_allclose(grad, want_grad, rtol=1e-12, atol=1e-15)


def _kron_dataset(scale=8, deg=8, feature_dim=6, classes=3, seed=0):
    g = generate_kronecker(scale, deg, seed=seed)
    return make_random_dataset(g, feature_dim=feature_dim, num_classes=classes,
                               seed=seed + 1, train_fraction=0.5)


@pytest.mark.parametrize("aggregation_mode", ["mean_self_loop", "symmetric_norm"])
def test_single_partition_train_is_bitwise_reference(aggregation_mode):
    ds = _kron_dataset()
    model = create_model(ds.feature_dim, ds.num_classes, num_layers=3, hidden_dim=8,
                         seed=7, aggregation_mode=aggregation_mode)
    plan = _single_partition_plan(ds.graph)
    ref_model, ref_trace = reference_train(ds, model, epochs=4, lr=0.01)
    part_model, part_trace, _ = partitioned_train(ds, plan, model, epochs=4, lr=0.01)
    assert part_trace == ref_trace
    assert all(np.array_equal(a, b) for a, b in zip(part_model.weights, ref_model.weights))


@pytest.mark.parametrize("aggregation_mode", ["mean_self_loop", "symmetric_norm"])
def test_partitioned_train_matches_reference(aggregation_mode):
    ds = _kron_dataset(scale=9, deg=8)
    labels = random_partition(ds.graph.num_vertices, 8, seed=2)
    plan = build_partition_plan(ds.graph, labels, 8)
    model = create_model(ds.feature_dim, ds.num_classes, num_layers=3, hidden_dim=8,
                         seed=5, aggregation_mode=aggregation_mode)
    ref_model, ref_trace = reference_train(ds, model, epochs=10, lr=0.01)
    part_model, part_trace, _ = partitioned_train(ds, plan, model, epochs=10, lr=0.01)
    for (_, rl, ra), (_, pl, pa) in zip(ref_trace, part_trace):
        assert abs(rl - pl) < 1e-5
        assert ra == pa
    for a, b in zip(ref_model.weights, part_model.weights):
        assert np.max(np.abs(a - b)) < 1e-5


def test_partitioned_train_row_normalize_equivalence():
    ds = _kron_dataset(scale=8, deg=6)
    labels = random_partition(ds.graph.num_vertices, 4, seed=3)
    plan = build_partition_plan(ds.graph, labels, 4)
    model = create_model(ds.feature_dim, ds.num_classes, num_layers=2, hidden_dim=6,
                         seed=9, row_normalize=True)
    ref_model, ref_trace = reference_train(ds, model, epochs=5, lr=0.01)
    part_model, part_trace, _ = partitioned_train(ds, plan, model, epochs=5, lr=0.01)
    for (_, rl, _), (_, pl, _) in zip(ref_trace, part_trace):
        assert abs(rl - pl) < 1e-5
    for a, b in zip(ref_model.weights, part_model.weights):
        assert np.max(np.abs(a - b)) < 1e-5


def test_partitioned_train_dropout_single_partition_bitwise():
    ds = _kron_dataset()
    model = create_model(ds.feature_dim, ds.num_classes, num_layers=2, hidden_dim=6,
                         seed=1, dropout_rate=0.3)
    plan = _single_partition_plan(ds.graph)
    _, ref_trace = reference_train(ds, model, epochs=3, lr=0.01)
    _, part_trace, _ = partitioned_train(ds, plan, model, epochs=3, lr=0.01)
    assert part_trace == ref_trace


def test_gradient_conservation_across_partitions():
    ds = _kron_dataset(scale=8, deg=8)
    labels = random_partition(ds.graph.num_vertices, 5, seed=6)
    plan = build_partition_plan(ds.graph, labels, 5)
    model = create_model(ds.feature_dim, ds.num_classes, num_layers=3, hidden_dim=8, seed=2)
    per_layer_sums = {}

    def probe(epoch, layer, partition, grad_ga, grad_w):
        acc = per_layer_sums.setdefault(layer, np.zeros_like(grad_w))
        acc += grad_w

    partitioned_train(ds, plan, model, epochs=1, lr=0.01, grad_probe=probe)
    _, _, grads = compute_gradients(ds, model)
    for layer, total in per_layer_sums.items():
        assert np.max(np.abs(total - grads[layer])) < 1e-10


def test_shuffled_schedule_is_bitwise_identical():
    ds = _kron_dataset(scale=8, deg=8)
    labels = random_partition(ds.graph.num_vertices, 6, seed=8)
    plan = build_partition_plan(ds.graph, labels, 6)
    model = create_model(ds.feature_dim, ds.num_classes, num_layers=3, hidden_dim=8, seed=4)
    rng = np.random.default_rng(19)

    def shuffled(layer, phase):
        return list(rng.permutation(6))

    m_a, t_a, _ = partitioned_train(ds, plan, model, epochs=3, lr=0.01)
    m_b, t_b, _ = partitioned_train(ds, plan, model, epochs=3, lr=0.01,
                                    partition_order=shuffled)
    assert t_a == t_b
    assert all(np.array_equal(a, b) for a, b in zip(m_a.weights, m_b.weights))


def test_regather_equals_snapshot_bitwise():
    ds = _kron_dataset(scale=8, deg=6)
    labels = random_partition(ds.graph.num_vertices, 4, seed=5)
    plan = build_partition_plan(ds.graph, labels, 4)
    model = create_model(ds.feature_dim, ds.num_classes, num_layers=3, hidden_dim=8, seed=6)

    def run(use_snapshots):
        seen = {}

        def probe(epoch, layer, partition, grad_ga, grad_w):
            seen[(epoch, layer, partition)] = grad_ga.copy()

        partitioned_train(ds, plan, model, epochs=2, lr=0.01, grad_probe=probe,
                          use_snapshots=use_snapshots)
        return seen

    regathered = run(False)
    snapshotted = run(True)
    assert regathered.keys() == snapshotted.keys()
    for key in regathered:
        assert np.array_equal(regathered[key], snapshotted[key])


def test_epochs_zero_returns_initial_model():
    ds = _separable_dataset()
    model = create_model(2, 2, num_layers=2, hidden_dim=4, seed=3)
    trained, trace = reference_train(ds, model, epochs=0, lr=0.01)
    assert trace == []
    assert all(np.array_equal(a, b) for a, b in zip(trained.weights, model.weights))


def test_finite_difference_linear_model():
    ds = _kron_dataset(scale=6, deg=4, feature_dim=4, classes=3)
    model = create_model(4, 3, num_layers=1, hidden_dim=4, seed=1)
    err = finite_difference_check(ds, model, epsilon_fd=1e-5, sample_count=30)
    assert err < 1e-7


def test_finite_difference_relu_model():
    g = generate_kronecker(6, 5, seed=14)
    ds = make_random_dataset(g, feature_dim=5, num_classes=3, seed=3)
    model = create_model(5, 3, num_layers=3, hidden_dim=6, seed=8)
    err = finite_difference_check(ds, model, epsilon_fd=1e-4, sample_count=60)
    assert err < 1e-4


def test_finite_difference_zero_features():
    ds = _kron_dataset(scale=6, deg=4, feature_dim=4, classes=3)
    ds.features[:] = 0.0
    model = create_model(4, 3, num_layers=3, hidden_dim=5, seed=2)
    _, _, grads = compute_gradients(ds, model)
    assert all(np.array_equal(gw, np.zeros_like(gw)) for gw in grads)
    err = finite_difference_check(ds, model, epsilon_fd=1e-4, sample_count=20)
    assert err < 1e-12


def test_trace_csv_format():
    text = trace_to_csv([(0, 0.5, 0.25), (1, 0.125, 1.0)])
    lines = text.splitlines()
    assert lines[0] == "epoch,loss,train_acc"
    assert lines[1] == "0,0.5,0.25"
    assert lines[2] == "1,0.125,1.0"
