"""Batch command-line front end: partition, train, simulate, report.

Every command reads one JSON config document (flags override individual
fields), derives all randomness from the named seed, echoes the effective
config into the output directory, and writes deterministic artifacts:
reruns with an identical config produce byte-identical files.

Exit codes: 0 on success, 1 when a semantic check fails (training
verification deviation, ledger/formula mismatch), 2 for input errors
(missing files, malformed config or flags).
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset, load_dataset, make_random_dataset
from .formats import (
    canonical_json,
    read_partition_text,
    write_checkpoint,
    write_json,
    write_partition_text,
)
from .graph import CsrGraph, generate_kronecker, generate_watts_strogatz
from .hierarchy import HierarchyConfig, PolicySpec, TierSession
from .partition import (
    PartitionerParams,
    expansion_ratio,
    partitioner_memory_report,
    switching_aware_partition,
)
from .plan import build_partition_plan
from .model import create_model
from .report import build_report, render_figures
from .simulate import (
    crossover_sweep,
    crossover_threshold,
    ledger_csv,
    ledger_summary,
    parse_ratio_range,
    predicted_peak_memory,
    predicted_traffic,
    simulate_epoch,
)
from .training import partitioned_train, reference_train, write_trace_csv

__all__ = ["DEFAULT_CONFIG", "console_main", "main"]

LOSS_TOLERANCE = 1e-5

DEFAULT_CONFIG = {
    "seed": 0,
    "out": "grinder-out",
    "graph": {
        "generator": "kronecker",
        "scale": 8,
        "avg_degree": 8,
    },
    "partitioner": {
        "num_partitions": 4,
        "alpha_balance": 1.1,
        "beta": 1.1,
        "epsilon": 0.001,
        "patience": 5,
        "group_depth": 2,
        "max_iters": 50,
        "labels_file": None,
    },
    "model": {
        "layers": 2,
        "hidden": 16,
        "feature_dim": 16,
        "num_classes": 4,
        "aggregation_mode": "mean_self_loop",
        "lr": 0.1,
        "epochs": 5,
        "train_fraction": 0.5,
    },
    "hierarchy": {
        "gpu_capacity": 1 << 40,
        "host_capacity": None,
        "storage_capacity": 1 << 50,
        "host_gpu_bandwidth": 1.0,
        "storage_bandwidth": 1.0,
        "page_size": None,
        "compute_rate": None,
        "bytes_per_value": 8,
    },
    "policies": ["GRINNDER", "HONGTU_SWAP", "NAIVE"],
    "alpha": 8,
}


class InputError(Exception):
    """Bad or missing inputs: config files, flag values, referenced paths."""


class CheckFailure(Exception):
    """A semantic check failed on otherwise valid inputs."""


# ---------------------------------------------------------------------------
# config plumbing


def _deep_update(base: dict, overlay: dict) -> dict:
    for key, value in overlay.items():
        if (isinstance(value, dict) and isinstance(base.get(key), dict)):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then individual flag overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise InputError(f"config file {path} must hold a JSON object")
        _deep_update(cfg, loaded)
    if getattr(args, "out", None) is not None:
        cfg["out"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "p", None) is not None:
        cfg["partitioner"]["num_partitions"] = args.p
    if getattr(args, "layers", None) is not None:
        cfg["model"]["layers"] = args.layers
    if getattr(args, "hidden", None) is not None:
        cfg["model"]["hidden"] = args.hidden
    if getattr(args, "epochs", None) is not None:
        cfg["model"]["epochs"] = args.epochs
    if getattr(args, "policy", None) is not None:
        names = [name for name in args.policy.split(",") if name]
        if not names:
            raise InputError("--policy requires at least one policy name")
        cfg["policies"] = names
    if getattr(args, "alpha", None) is not None:
        cfg["alpha"] = args.alpha
    return cfg


def _echo_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(canonical_json(cfg))


def _build_graph(cfg: dict) -> CsrGraph:
    spec = cfg["graph"]
    if spec.get("dataset_dir"):
        return _load_dataset_dir(spec["dataset_dir"]).graph
    if spec.get("edge_list"):
        path = Path(spec["edge_list"])
        if not path.is_file():
            raise InputError(f"edge list not found: {path}")
        from .formats import load_edge_list_text
        graph, _ = load_edge_list_text(path, symmetrize=bool(spec.get("symmetrize")))
        return graph
    generator = spec.get("generator", "kronecker")
    seed = int(cfg["seed"])
    if generator == "kronecker":
        return generate_kronecker(int(spec["scale"]), int(spec["avg_degree"]), seed)
    if generator == "watts_strogatz":
        return generate_watts_strogatz(int(spec["num_vertices"]),
                                       int(spec["mean_degree"]),
                                       float(spec.get("rewire_prob", 0.1)), seed)
    raise InputError(f"unknown graph generator {generator!r}")


def _load_dataset_dir(directory: str) -> LabeledDataset:
    path = Path(directory)
    if not path.is_dir():
        raise InputError(f"dataset directory not found: {path}")
    return load_dataset(path)


def _build_dataset(cfg: dict, graph: CsrGraph) -> LabeledDataset:
    spec = cfg["graph"]
    if spec.get("dataset_dir"):
        return _load_dataset_dir(spec["dataset_dir"])
    m = cfg["model"]
    return make_random_dataset(graph, feature_dim=int(m["feature_dim"]),
                               num_classes=int(m["num_classes"]),
                               seed=int(cfg["seed"]) + 1,
                               train_fraction=float(m["train_fraction"]))


def _partitioner_params(cfg: dict) -> PartitionerParams:
    p = cfg["partitioner"]
    return PartitionerParams(alpha_balance=float(p["alpha_balance"]),
                             beta=float(p["beta"]),
                             epsilon=float(p["epsilon"]),
                             patience=int(p["patience"]),
                             group_depth=int(p["group_depth"]),
                             max_iters=int(p["max_iters"]),
                             seed=int(cfg["seed"]) + 2)


def _resolve_labels(cfg: dict, graph: CsrGraph) -> np.ndarray:
    spec = cfg["partitioner"]
    if spec.get("labels_file"):
        path = Path(spec["labels_file"])
        if not path.is_file():
            raise InputError(f"labels file not found: {path}")
        labels = read_partition_text(path)
        if labels.shape[0] != graph.num_vertices:
            raise InputError(
                f"labels file holds {labels.shape[0]} entries for a graph of "
                f"{graph.num_vertices} vertices")
        return labels
    result = switching_aware_partition(graph, int(spec["num_partitions"]),
                                       _partitioner_params(cfg))
    return result.labels


def _hierarchy_config(cfg: dict, host_capacity=None, page_size=None
                      ) -> HierarchyConfig:
    """Resolve config nulls: unlimited host, 4 KiB pages, infinite compute."""
    h = cfg["hierarchy"]
    if host_capacity is None:
        host_capacity = h["host_capacity"]
        if host_capacity is None:
            host_capacity = 1 << 40
    if page_size is None:
        page_size = h["page_size"]
        if page_size is None:
            page_size = 4096
    compute = h["compute_rate"]
    return HierarchyConfig(
        gpu_capacity=int(h["gpu_capacity"]),
        host_capacity=int(host_capacity),
        storage_capacity=int(h["storage_capacity"]),
        host_gpu_bandwidth=float(h["host_gpu_bandwidth"]),
        storage_bandwidth=float(h["storage_bandwidth"]),
        page_size=int(page_size),
        compute_rate=math.inf if compute is None else float(compute),
        bytes_per_value=int(h["bytes_per_value"]))


# ---------------------------------------------------------------------------
# commands


def cmd_partition(cfg: dict) -> int:
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    graph = _build_graph(cfg)
    p = int(cfg["partitioner"]["num_partitions"])
    params = _partitioner_params(cfg)
    result = switching_aware_partition(graph, p, params)
    quality = expansion_ratio(graph, result.labels, p, params.alpha_balance)
    write_partition_text(out / "labels.txt", result.labels)
    write_json(out / "quality.json", {
        "num_partitions": p,
        "mean_alpha": quality.mean_alpha,
        "per_partition_alpha": quality.per_partition_alpha,
        "max_balance": quality.max_balance,
        "objective": quality.objective,
        "converged": result.converged,
        "iterations": result.iterations,
        "max_size_per_iteration": result.max_size_per_iteration,
        "memory": partitioner_memory_report(graph, p, params.group_depth),
    })
    lines = ["iteration,objective", f"0,{result.initial_objective!r}"]
    for it, obj in enumerate(result.objective_trace, start=1):
        lines.append(f"{it},{obj!r}")
    (out / "objective.csv").write_text("\n".join(lines) + "\n")
    status = "converged" if result.converged else "did not converge"
    print(f"partition: p={p} mean_alpha={quality.mean_alpha:.4f} "
          f"{status} after {result.iterations} iterations -> {out}")
    return 0


def cmd_train(cfg: dict, verify: bool) -> int:
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    graph = _build_graph(cfg)
    dataset = _build_dataset(cfg, graph)
    labels = _resolve_labels(cfg, graph)
    p = int(labels.max()) + 1 if labels.size else 1
    plan = build_partition_plan(graph, labels, p)
    m = cfg["model"]
    model = create_model(dataset.feature_dim, dataset.num_classes,
                         int(m["layers"]), int(m["hidden"]),
                         seed=int(cfg["seed"]) + 3,
                         aggregation_mode=m["aggregation_mode"])
    policy = PolicySpec.normalize(cfg["policies"][0])
    session = TierSession(plan, model.dims, policy, _hierarchy_config(cfg),
                          aggregation_mode=m["aggregation_mode"])
    epochs = int(m["epochs"])
    lr = float(m["lr"])
    trained, trace, ledger = partitioned_train(dataset, plan, model, epochs,
                                               lr, hierarchy=session)
    write_checkpoint(out / "checkpoint.bin", trained.weights)
    write_trace_csv(out / "trace.csv", trace)
    (out / "ledger.csv").write_text(ledger_csv(ledger))
    write_json(out / "summary_train.json", ledger_summary(ledger))
    if not verify:
        print(f"train: policy={policy.kind} epochs={epochs} -> {out}")
        return 0
    reference, ref_trace = reference_train(dataset, model, epochs, lr)
    loss_dev = max((abs(a[1] - b[1]) for a, b in zip(trace, ref_trace)),
                   default=0.0)
    weight_dev = max((float(np.max(np.abs(w - r))) for w, r in
                      zip(trained.weights, reference.weights)), default=0.0)
    passed = loss_dev <= LOSS_TOLERANCE and weight_dev <= LOSS_TOLERANCE
    write_json(out / "verify.json", {
        "max_loss_deviation": loss_dev,
        "max_weight_deviation": weight_dev,
        "tolerance": LOSS_TOLERANCE,
        "passed": passed,
    })
    if not passed:
        write_json(out / "verify_diff.json", {
            "partitioned_loss": [loss for _, loss, _ in trace],
            "reference_loss": [loss for _, loss, _ in ref_trace],
        })
        raise CheckFailure(
            f"verification failed: max loss deviation {loss_dev:.3e}, "
            f"max weight deviation {weight_dev:.3e} "
            f"(tolerance {LOSS_TOLERANCE:.0e}); see {out / 'verify_diff.json'}")
    print(f"train: policy={policy.kind} epochs={epochs} verified "
          f"(loss dev {loss_dev:.3e}, weight dev {weight_dev:.3e}) -> {out}")
    return 0


def _canonical_capacity(kind: str, layer_bytes: int) -> int:
    """Host budget at which each policy's closed-form table is derived."""
    if kind == "GRINNDER":
        return 2 * layer_bytes
    if kind == "NAIVE":
        return 0
    return layer_bytes


def _worker_count(num_jobs: int) -> int:
    env = os.environ.get("GRINDER_THREADS", "")
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise InputError(f"GRINDER_THREADS must be an integer, got {env!r}")
        if cap < 1:
            raise InputError(f"GRINDER_THREADS must be >= 1, got {cap}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, num_jobs))


def cmd_simulate(cfg: dict, sweep_spec: str | None) -> int:
    out = Path(cfg["out"])
    _echo_config(cfg, out)
    policies = [PolicySpec.normalize(name) for name in cfg["policies"]]
    if not policies:
        raise InputError("simulate requires at least one policy")
    graph = _build_graph(cfg)
    labels = _resolve_labels(cfg, graph)
    p = int(labels.max()) + 1 if labels.size else 1
    plan = build_partition_plan(graph, labels, p)
    m = cfg["model"]
    layers = int(m["layers"])
    hidden = int(m["hidden"])
    bpv = int(cfg["hierarchy"]["bytes_per_value"])
    dims = [hidden] * (layers + 1)
    n = plan.num_vertices
    d = n * hidden * bpv
    alpha = Fraction(plan.gather_rows_total(), n)
    record = hidden * bpv
    aligned_page = record if record & (record - 1) == 0 else None
    explicit_host = cfg["hierarchy"]["host_capacity"]

    def replay(policy: PolicySpec):
        cap = (explicit_host if explicit_host is not None
               else _canonical_capacity(policy.kind, d))
        config = _hierarchy_config(cfg, host_capacity=cap,
                                   page_size=aligned_page)
        ledger = simulate_epoch(plan, dims, policy, config,
                                aggregation_mode=m["aggregation_mode"])
        return cap, ledger

    workers = _worker_count(len(policies))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(replay, policy) for policy in policies]
        results = [future.result() for future in futures]

    mismatches = []
    checks = []
    for policy, (cap, ledger) in zip(policies, results):
        kind = policy.kind
        (out / f"ledger_{kind}.csv").write_text(ledger_csv(ledger))
        write_json(out / f"summary_{kind}.json", ledger_summary(ledger))
        expected = predicted_traffic(kind, alpha, d, layers, host_capacity=cap)
        actual = ledger.stage_table(1)
        mismatches.extend(_table_deltas(kind, actual, expected))
        peaks = predicted_peak_memory(kind, alpha, d, layers, host_capacity=cap)
        for tier in ("host", "storage"):
            if ledger.peak_residency[tier] != peaks[tier]:
                mismatches.append({
                    "policy": kind, "phase": "peak", "layer": 0, "link": tier,
                    "simulated": ledger.peak_residency[tier],
                    "predicted": peaks[tier]})
        checks.append({"policy": kind, "host_capacity": cap})
    write_json(out / "oracle_check.json", {
        "alpha": str(alpha),
        "alpha_float": float(alpha),
        "layer_bytes": d,
        "page_size": aligned_page,
        "policies": checks,
        "mismatches": mismatches,
        "passed": not mismatches,
    })
    if sweep_spec is not None:
        ratios = parse_ratio_range(sweep_spec)
        sweep_alpha = Fraction(str(cfg["alpha"]))
        rows = crossover_sweep(sweep_alpha, ratios)
        lines = ["ratio,regather_time,snapshot_time,winner"]
        for row in rows:
            lines.append(f"{float(row['ratio'])!r},{float(row['regather_time'])!r},"
                         f"{float(row['snapshot_time'])!r},{row['winner']}")
        (out / "sweep.csv").write_text("\n".join(lines) + "\n")
        threshold = crossover_threshold(sweep_alpha)
        print(f"simulate: sweep alpha={sweep_alpha} crossover at "
              f"{float(threshold):.4f} ({threshold})")
    if mismatches:
        first = mismatches[0]
        raise CheckFailure(
            f"ledger disagrees with the closed form for policy "
            f"{first['policy']} at {first['phase']} layer {first['layer']} "
            f"link {first['link']}: simulated {first['simulated']} != "
            f"predicted {first['predicted']} "
            f"({len(mismatches)} mismatched cells; see "
            f"{out / 'oracle_check.json'})")
    print(f"simulate: {len(policies)} policies, alpha={float(alpha):.3f}, "
          f"all ledger cells match the closed forms -> {out}")
    return 0


def _table_deltas(kind: str, actual: dict, expected: dict) -> list[dict]:
    deltas = []

    def compare(phase: str, layer: int, got: dict, want: dict) -> None:
        for link in ("gpu_host", "gpu_storage", "host_storage_reads",
                     "host_storage_writes"):
            if got[link] != want[link]:
                deltas.append({"policy": kind, "phase": phase, "layer": layer,
                               "link": link, "simulated": got[link],
                               "predicted": want[link]})

    num_layers = len(actual["forward"])
    for i in range(num_layers):
        compare("forward", i + 1, actual["forward"][i], expected["forward"][i])
    compare("loss", num_layers, actual["loss"], expected["loss"])
    for i in range(num_layers):
        compare("backward", num_layers - i, actual["backward"][i],
                expected["backward"][i])
    return deltas


def cmd_report(cfg: dict) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    doc, text = build_report(out)
    (out / "report.json").write_text(canonical_json(doc))
    (out / "report.txt").write_text(text)
    figures = render_figures(doc, out)
    missing = doc["missing"]
    note = f" (missing: {', '.join(missing)})" if missing else ""
    print(f"report: {len(doc['rows'])} rows, {len(figures)} figures{note} "
          f"-> {out / 'report.txt'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--p", type=int, help="number of partitions")
    parser.add_argument("--layers", type=int, help="model layer count")
    parser.add_argument("--hidden", type=int, help="hidden width")
    parser.add_argument("--epochs", type=int, help="training epochs")
    parser.add_argument("--policy",
                        help="comma-separated policy names "
                             "(GRINNDER, HONGTU_SWAP, HONGTU_INTERMEDIATE, NAIVE)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grinder",
        description="Partition-wise GNN training with a byte-exact "
                    "storage-tier simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    part = sub.add_parser("partition", help="partition a graph and report quality")
    _add_common_flags(part)
    train = sub.add_parser("train", help="train a model partition-wise")
    _add_common_flags(train)
    train.add_argument("--verify", action="store_true",
                       help="also run whole-graph training and compare traces")
    sim = sub.add_parser("simulate", help="replay policies and check the ledgers")
    _add_common_flags(sim)
    sim.add_argument("--sweep-bandwidth", metavar="A:B:STEP",
                     help="bandwidth-ratio sweep for the policy crossover")
    sim.add_argument("--alpha", help="expansion ratio for the sweep")
    rep = sub.add_parser("report", help="merge prior outputs into one report")
    _add_common_flags(rep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "partition":
            return cmd_partition(cfg)
        if args.command == "train":
            return cmd_train(cfg, verify=args.verify)
        if args.command == "simulate":
            return cmd_simulate(cfg, sweep_spec=args.sweep_bandwidth)
        return cmd_report(cfg)
    except CheckFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
