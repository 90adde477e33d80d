"""Merge artifacts from prior runs into one comparison report.

Reads whatever the output directory holds (partition quality, training
trace, per-policy ledger summaries), lists what is absent, and renders a
JSON document, a fixed-width text table, and bar charts. All output is
deterministic for a given set of inputs.
"""

from __future__ import annotations

import json
from pathlib import Path

__all__ = ["build_report", "render_figures"]

_LINKS = ("gpu_host", "gpu_storage", "host_storage")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None


def _read_trace(path: Path):
    if not path.is_file():
        return None
    rows = []
    lines = path.read_text().splitlines()
    for line in lines[1:]:
        epoch, loss, acc = line.split(",")
        rows.append({"epoch": int(epoch), "loss": float(loss),
                     "train_acc": float(acc)})
    return rows


def build_report(out_dir: Path) -> tuple[dict, str]:
    """Collect artifacts under out_dir into (json document, text table)."""
    out_dir = Path(out_dir)
    missing = []
    quality = _read_json(out_dir / "quality.json")
    if quality is None:
        missing.append("quality.json")
    trace = _read_trace(out_dir / "trace.csv")
    if trace is None:
        missing.append("trace.csv")
    oracle = _read_json(out_dir / "oracle_check.json")
    if oracle is None:
        missing.append("oracle_check.json")

    rows = []
    for path in sorted(out_dir.glob("summary_*.json")):
        summary = _read_json(path)
        if summary is None:
            continue
        label = path.stem[len("summary_"):]
        links = {link: summary["links"][link]["total"] for link in _LINKS}
        rows.append({
            "label": label,
            "policy": summary["policy"],
            "links": links,
            "peak_host": summary["peak_residency"]["host"],
            "peak_storage": summary["peak_residency"]["storage"],
            "hit_rate": summary["cache"]["hit_rate"],
            "modeled_time": summary["modeled_time"],
        })
    if not rows:
        missing.append("summary_*.json")

    doc = {
        "rows": rows,
        "partition": quality,
        "trace": trace,
        "oracle_check": None if oracle is None else {
            "passed": oracle.get("passed"),
            "mismatches": len(oracle.get("mismatches", [])),
        },
        "comparisons": _comparisons(rows),
        "missing": missing,
    }
    return doc, _render_text(doc)


def _comparisons(rows: list[dict]) -> dict:
    if len(rows) < 2:
        return {}
    storage = {row["label"]: row["links"]["gpu_storage"]
               + row["links"]["host_storage"] for row in rows}
    times = {row["label"]: row["modeled_time"] for row in rows}
    return {
        "storage_bytes": storage,
        "least_storage": min(sorted(storage), key=storage.get),
        "modeled_time": times,
        "fastest": min(sorted(times), key=times.get),
    }


def _render_text(doc: dict) -> str:
    lines = []
    header = ["policy", "gpu_host", "gpu_storage", "host_storage",
              "peak_host", "peak_storage", "hit_rate", "modeled_time"]
    table = [header]
    for row in doc["rows"]:
        hit = "-" if row["hit_rate"] is None else f"{row['hit_rate']:.4f}"
        table.append([
            row["label"],
            str(row["links"]["gpu_host"]),
            str(row["links"]["gpu_storage"]),
            str(row["links"]["host_storage"]),
            str(row["peak_host"]),
            str(row["peak_storage"]),
            hit,
            f"{row['modeled_time']:.6g}",
        ])
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    for i, line in enumerate(table):
        cells = [line[0].ljust(widths[0])]
        cells += [cell.rjust(width) for cell, width in zip(line[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * width for width in widths))
    if not doc["rows"]:
        lines.append("(no policy summaries)")

    part = doc["partition"]
    if part is not None:
        lines.append("")
        lines.append(f"partition: p={part['num_partitions']} "
                     f"mean_alpha={part['mean_alpha']:.4f} "
                     f"max_balance={part['max_balance']:.4f} "
                     f"converged={part['converged']}")
    if doc["trace"]:
        last = doc["trace"][-1]
        lines.append("")
        lines.append(f"training: {len(doc['trace'])} epochs, final loss "
                     f"{last['loss']:.6f}, train accuracy {last['train_acc']:.4f}")
    if doc["oracle_check"] is not None:
        lines.append("")
        state = "passed" if doc["oracle_check"]["passed"] else (
            f"FAILED ({doc['oracle_check']['mismatches']} mismatches)")
        lines.append(f"ledger check: {state}")
    comp = doc["comparisons"]
    if comp:
        lines.append("")
        lines.append(f"least storage traffic: {comp['least_storage']}; "
                     f"fastest modeled time: {comp['fastest']}")
    if doc["missing"]:
        lines.append("")
        lines.append("missing inputs: " + ", ".join(doc["missing"]))
    return "\n".join(lines) + "\n"


def render_figures(doc: dict, out_dir: Path) -> list[Path]:
    """Render bar charts for link traffic and residency peaks as PNG files."""
    if not doc["rows"]:
        return []
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    labels = [row["label"] for row in doc["rows"]]
    written = []

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    base = list(range(len(labels)))
    width = 0.25
    for offset, link in enumerate(_LINKS):
        values = [row["links"][link] for row in doc["rows"]]
        ax.bar([x + (offset - 1) * width for x in base], values, width,
               label=link)
    ax.set_xticks(base)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("bytes per epoch")
    ax.set_title("link traffic by policy")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "report_links.png"
    fig.savefig(path, metadata={"Software": "grinder"})
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for offset, tier in enumerate(("peak_host", "peak_storage")):
        values = [row[tier] for row in doc["rows"]]
        ax.bar([x + (offset - 0.5) * width for x in base], values, width,
               label=tier)
    ax.set_xticks(base)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("bytes")
    ax.set_title("peak residency by policy")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "report_peaks.png"
    fig.savefig(path, metadata={"Software": "grinder"})
    plt.close(fig)
    written.append(path)
    return written
