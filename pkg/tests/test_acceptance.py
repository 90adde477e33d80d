"""Acceptance suite: one numbered test per shipping criterion.

Run with ``pytest tests/test_acceptance.py -v`` to get one pass/fail line
per criterion.
"""

import hashlib
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from grinder.cli import main
from grinder.dataset import make_random_dataset
from grinder.graph import build_csr, generate_kronecker, generate_watts_strogatz
from grinder.hierarchy import HierarchyConfig, PolicySpec
from grinder.model import create_model
from grinder.partition import (
    PartitionerParams,
    expansion_ratio,
    partitioner_memory_report,
    random_partition,
    switching_aware_partition,
)
from grinder.plan import build_partition_plan
from grinder.simulate import (
    crossover_sweep,
    crossover_threshold,
    parse_ratio_range,
    predicted_peak_memory,
    predicted_traffic,
    read_amplification_report,
    simulate_epoch,
)
from grinder.training import (
    finite_difference_check,
    partitioned_train,
    reference_train,
)

HIDDEN = 4
BPV = 8
LAYERS = 3
DIMS = [HIDDEN] * (LAYERS + 1)


def _sim_config(host_capacity: int) -> HierarchyConfig:
    return HierarchyConfig(host_capacity=host_capacity,
                           page_size=HIDDEN * BPV)


@pytest.fixture(scope="module")
def plan_pool():
    """Ten deterministic plans with measured expansion ratio in [1.5, 10]."""
    plans = []
    attempt = 0
    degrees = (2, 3, 4, 6, 8, 10, 12)
    parts = (2, 4, 8)
    while len(plans) < 10:
        deg = degrees[attempt % len(degrees)]
        p = parts[attempt % len(parts)]
        graph = generate_kronecker(6, deg, seed=attempt)
        labels = random_partition(graph.num_vertices, p, seed=attempt)
        plan = build_partition_plan(graph, labels, p)
        alpha = Fraction(plan.gather_rows_total(), plan.num_vertices)
        if Fraction(3, 2) <= alpha <= 10:
            plans.append((plan, alpha))
        attempt += 1
        assert attempt < 200, "plan pool generation stalled"
    return plans


@pytest.fixture(scope="module")
def large_partition_runs():
    """The two large partitioner instances, with their total wall time."""
    start = time.monotonic()
    kron = generate_kronecker(17, 10, seed=7)
    runs = [("kronecker_131072_p32", kron, 32,
             switching_aware_partition(kron, 32, PartitionerParams(seed=7)))]
    ws = generate_watts_strogatz(10000, 16, 0.1, seed=7)
    runs.append(("watts_strogatz_10000_p8", ws, 8,
                 switching_aware_partition(ws, 8, PartitionerParams(seed=7))))
    return runs, time.monotonic() - start


def test_criterion_01_partitioned_training_matches_whole_graph():
    start = time.monotonic()
    for gseed in range(5):
        graph = generate_kronecker(10, 10, seed=gseed)
        n = graph.num_vertices
        assert n == 1024
        dataset = make_random_dataset(graph, feature_dim=16, num_classes=8,
                                      seed=gseed)
        for layers in (3, 5):
            model = create_model(16, 8, layers, 16, seed=gseed)
            reference, ref_trace = reference_train(dataset, model, 10, 0.1)
            for p in (1, 4, 8):
                if p == 1:
                    labels = np.zeros(n, dtype=np.int32)
                else:
                    labels = random_partition(n, p, seed=gseed + 17 * p)
                plan = build_partition_plan(graph, labels, p)
                trained, trace, _ = partitioned_train(dataset, plan, model,
                                                      10, 0.1)
                assert len(trace) == len(ref_trace) == 10
                for (_, loss, _), (_, ref_loss, _) in zip(trace, ref_trace):
                    assert abs(loss - ref_loss) <= 1e-5
                for got, want in zip(trained.weights, reference.weights):
                    assert float(np.max(np.abs(got - want))) <= 1e-5
    assert time.monotonic() - start < 120.0


def test_criterion_02_finite_difference_gradient_check():
    start = time.monotonic()
    rng = np.random.Generator(np.random.PCG64(5))
    n = 50
    edges = []
    seen = set()
    while len(edges) < 200:
        src, dst = int(rng.integers(n)), int(rng.integers(n))
        if src != dst and (src, dst) not in seen:
            seen.add((src, dst))
            edges.append((src, dst))
    graph = build_csr(edges, n)
    dataset = make_random_dataset(graph, feature_dim=8, num_classes=4, seed=5)
    model = create_model(8, 4, 3, 8, seed=5)
    error = finite_difference_check(dataset, model, sample_count=200, seed=1)
    assert error < 1e-4
    assert time.monotonic() - start < 30.0


def test_criterion_03_regathering_matches_snapshots_bitwise():
    for scale, deg, p in ((6, 4, 4), (7, 4, 4), (8, 6, 8)):
        graph = generate_kronecker(scale, deg, seed=scale)
        n = graph.num_vertices
        assert n <= 256
        dataset = make_random_dataset(graph, feature_dim=8, num_classes=4,
                                      seed=scale)
        plan = build_partition_plan(graph, random_partition(n, p, seed=scale), p)
        model = create_model(8, 4, 3, 8, seed=scale)

        def collect(use_snapshots):
            grads = []

            def probe(epoch, layer, pid, grad_ga, grad_w):
                grads.append((epoch, layer, pid, grad_ga.copy(), grad_w.copy()))

            _, trace, _ = partitioned_train(dataset, plan, model, 2, 0.1,
                                            use_snapshots=use_snapshots,
                                            grad_probe=probe)
            return grads, trace

        regathered, trace_a = collect(False)
        snapshotted, trace_b = collect(True)
        assert trace_a == trace_b
        assert len(regathered) == len(snapshotted) > 0
        for got, want in zip(regathered, snapshotted):
            assert got[:3] == want[:3]
            assert np.array_equal(got[3], want[3])
            assert np.array_equal(got[4], want[4])


def _policy_runs(d: int):
    return (("GRINNDER", 2 * d), ("HONGTU_SWAP", 0), ("HONGTU_SWAP", d // 2),
            ("HONGTU_SWAP", d), ("NAIVE", 0))


def test_criterion_04_link_traffic_matches_formulas_exactly(plan_pool):
    for plan, alpha in plan_pool:
        d = plan.num_vertices * HIDDEN * BPV
        for kind, cap in _policy_runs(d):
            ledger = simulate_epoch(plan, DIMS, PolicySpec.normalize(kind),
                                    _sim_config(cap))
            expected = predicted_traffic(kind, alpha, d, LAYERS,
                                         host_capacity=cap)
            assert ledger.stage_table(1) == expected, (kind, cap, alpha)


def test_criterion_05_peak_residency_matches_formulas_exactly(plan_pool):
    for plan, alpha in plan_pool:
        d = plan.num_vertices * HIDDEN * BPV
        for kind, cap in _policy_runs(d):
            ledger = simulate_epoch(plan, DIMS, PolicySpec.normalize(kind),
                                    _sim_config(cap))
            expected = predicted_peak_memory(kind, alpha, d, LAYERS,
                                             host_capacity=cap)
            for tier in ("host", "storage"):
                assert ledger.peak_residency[tier] == expected[tier], \
                    (kind, cap, alpha, tier)
            if kind == "GRINNDER":
                assert ledger.peak_residency["host"] == 2 * d
                assert ledger.peak_residency["storage"] == d * LAYERS + d
            if kind == "HONGTU_SWAP":
                assert ledger.peak_residency["host"] == (alpha + 1) * d * LAYERS + 2 * d


def test_criterion_06_crossover_flips_at_predicted_ratios():
    ratios = parse_ratio_range("1.0:4.0:0.05")
    targets = {2: Fraction(6, 5), 4: Fraction(10, 7), 8: Fraction(18, 11)}
    for alpha, want in targets.items():
        assert crossover_threshold(Fraction(alpha)) == want
        rows = crossover_sweep(Fraction(alpha), ratios)
        flips = [row["ratio"] for row in rows if row["winner"] == "GRINNDER"]
        assert flips, f"regathering never won at alpha={alpha}"
        flip = min(flips)
        assert abs(flip - want) <= Fraction(1, 20)
        for row in rows:
            expect = "GRINNDER" if row["ratio"] >= flip else "HONGTU_INTERMEDIATE"
            assert row["winner"] == expect


def test_criterion_07_partitioner_converges_and_stays_balanced(large_partition_runs):
    runs, elapsed = large_partition_runs
    for name, graph, p, result in runs:
        assert result.converged, name
        assert result.iterations <= 50, name
        cap = math.ceil(1.1 * graph.num_vertices / p)
        assert result.max_size_per_iteration, name
        assert all(size <= cap for size in result.max_size_per_iteration), name
    assert elapsed < 60.0


def test_criterion_08_refined_partitions_beat_random(large_partition_runs):
    runs, _ = large_partition_runs
    for name, graph, p, result in runs:
        refined = expansion_ratio(graph, result.labels, p).mean_alpha
        baseline = expansion_ratio(
            graph, random_partition(graph.num_vertices, p, seed=11), p).mean_alpha
        assert refined < baseline, name


def test_criterion_09_partitioner_memory_within_word_bound(large_partition_runs):
    runs, _ = large_partition_runs
    instances = [(name, graph, p) for name, graph, p, _ in runs]
    instances.append(("kronecker_1024_p8", generate_kronecker(10, 10, seed=0), 8))
    for name, graph, p in instances:
        report = partitioner_memory_report(graph, p)
        assert report["within_bound"], name
        assert report["aux_words"] <= 2 * graph.num_vertices + 2 * graph.num_edges
        assert report["partition_state_words"] <= 8 * p


def test_criterion_10_read_amplification_isolated_vs_partition():
    n = 512
    edges = [((i + 2) % n, i) for i in range(n)]
    graph = build_csr(edges, n)
    plan = build_partition_plan(graph, np.arange(n, dtype=np.int32), n)
    report = read_amplification_report(plan, page_size=16384, record_bytes=64)
    assert report["vertex"]["ratio"] == 256.0
    assert report["vertex"]["charged_bytes"] == 256 * report["vertex"]["useful_bytes"]
    assert report["partition"]["ratio"] == 1.0
    assert report["partition"]["charged_bytes"] == report["partition"]["useful_bytes"]


def test_criterion_11_forward_reads_exactly_one_layer_when_host_fits(plan_pool):
    plan, _ = plan_pool[0]
    d = plan.num_vertices * HIDDEN * BPV
    for cap in (d, 2 * d, 4 * d):
        ledger = simulate_epoch(plan, DIMS, PolicySpec.normalize("GRINNDER"),
                                _sim_config(cap))
        for row in ledger.stage_table(1)["forward"]:
            assert row["host_storage_reads"] == d, cap


def test_criterion_12_commands_rerun_byte_identical(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "seed": 3,
        "graph": {"generator": "kronecker", "scale": 6, "avg_degree": 4},
        "partitioner": {"num_partitions": 4},
        "model": {"layers": 3, "hidden": 8, "feature_dim": 8,
                  "num_classes": 4, "epochs": 3},
    }))
    out = tmp_path / "out"

    def hash_tree():
        return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                for p in out.iterdir() if p.is_file()}

    def run_all():
        for args in (["partition"], ["train"], ["simulate"], ["report"]):
            assert main(args + ["--config", str(cfg), "--out", str(out)]) == 0
        return hash_tree()

    first = run_all()
    assert run_all() == first
    monkeypatch.setenv("GRINDER_THREADS", "1")
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    single = hash_tree()
    monkeypatch.setenv("GRINDER_THREADS", "4")
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert hash_tree() == single
