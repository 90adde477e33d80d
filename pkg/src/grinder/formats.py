"""Binary and text file formats for graphs, features, labels, and checkpoints.

All binary layouts are little-endian and fully specified by the writer
functions here, so artifacts are byte-identical across platforms and reruns.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .graph import CsrGraph, build_csr

__all__ = [
    "CSR_MAGIC",
    "CSR_VERSION",
    "canonical_json",
    "load_edge_list_text",
    "read_checkpoint",
    "read_csr_binary",
    "read_features",
    "read_partition_text",
    "read_u32_array",
    "write_checkpoint",
    "write_csr_binary",
    "write_edge_list_text",
    "write_features",
    "write_json",
    "write_partition_text",
    "write_u32_array",
]

CSR_MAGIC = b"GRIN"
CSR_VERSION = 1


def write_csr_binary(graph: CsrGraph, path: str | Path) -> None:
    """Write a graph as magic, u32 version, u64 counts, u64 offsets, u32 targets."""
    with open(path, "wb") as fh:
        fh.write(CSR_MAGIC)
        fh.write(struct.pack("<IQQ", CSR_VERSION, graph.num_vertices, graph.num_edges))
        fh.write(graph.src_ptr.astype("<u8").tobytes())
        fh.write(graph.dst_idx.astype("<u4").tobytes())


def read_csr_binary(path: str | Path) -> CsrGraph:
    """Read a graph written by :func:`write_csr_binary`."""
    raw = Path(path).read_bytes()
    if raw[:4] != CSR_MAGIC:
        raise ValueError(f"not a CSR graph file: {path}")
    version, num_vertices, num_edges = struct.unpack_from("<IQQ", raw, 4)
    if version != CSR_VERSION:
        raise ValueError(f"unsupported CSR version {version}")
    offset = 4 + struct.calcsize("<IQQ")
    expected = offset + 8 * (num_vertices + 1) + 4 * num_edges
    if len(raw) != expected:
        raise ValueError(f"truncated CSR file: expected {expected} bytes, found {len(raw)}")
    src_ptr = np.frombuffer(raw, dtype="<u8", count=num_vertices + 1, offset=offset)
    dst_idx = np.frombuffer(raw, dtype="<u4", count=num_edges, offset=offset + 8 * (num_vertices + 1))
    graph = CsrGraph(
        num_vertices=int(num_vertices),
        num_edges=int(num_edges),
        src_ptr=src_ptr.astype(np.int64),
        dst_idx=dst_idx.astype(np.int32),
    )
    graph.validate()
    return graph


def write_edge_list_text(graph: CsrGraph, path: str | Path) -> None:
    """Write one ``src dst`` pair per line, preserving adjacency order."""
    lines = [f"{int(s)} {int(d)}" for s, d in zip(graph.edge_sources(), graph.dst_idx)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_edge_list_text(
    path: str | Path, symmetrize: bool = False
) -> tuple[CsrGraph, np.ndarray]:
    """Parse a ``src dst`` text file into a graph plus an id mapping.

    Lines that are empty or start with ``#`` are skipped.  Vertex ids may be
    arbitrary non-negative integers; they are remapped to a dense range by
    ascending original id, and the returned array gives the original id for
    each dense id.  With ``symmetrize`` every edge is mirrored (duplicates are
    dropped, first occurrence wins).
    """
    pairs: list[tuple[int, int]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'src dst', found {text!r}")
        try:
            src, dst = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-integer vertex id in {text!r}") from exc
        if src < 0 or dst < 0:
            raise ValueError(f"{path}:{lineno}: negative vertex id in {text!r}")
        pairs.append((src, dst))
    if pairs:
        arr = np.asarray(pairs, dtype=np.int64)
        id_map, dense = np.unique(arr, return_inverse=True)
        dense = dense.reshape(arr.shape)
    else:
        id_map = np.empty(0, dtype=np.int64)
        dense = np.empty((0, 2), dtype=np.int64)
    edges = [(int(s), int(d)) for s, d in dense]
    if symmetrize:
        edges = edges + [(d, s) for s, d in edges]
    graph = build_csr(edges, len(id_map))
    return graph, id_map


def write_features(path: str | Path, matrix: np.ndarray) -> None:
    """Write a row-major f32 matrix with a u64 (rows, cols) header."""
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    if mat.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", mat.shape[0], mat.shape[1]))
        fh.write(mat.tobytes())


def read_features(path: str | Path) -> np.ndarray:
    """Read a matrix written by :func:`write_features`, upcast to f64."""
    raw = Path(path).read_bytes()
    rows, cols = struct.unpack_from("<QQ", raw, 0)
    expected = 16 + 4 * rows * cols
    if len(raw) != expected:
        raise ValueError(f"truncated feature file: expected {expected} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=16)
    return flat.astype(np.float64).reshape(rows, cols)


def write_u32_array(path: str | Path, values: np.ndarray) -> None:
    """Write an integer array as u32 with a u64 length header."""
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D array, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint32).max):
        raise ValueError("values out of u32 range")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", arr.size))
        fh.write(arr.astype("<u4").tobytes())


def read_u32_array(path: str | Path) -> np.ndarray:
    """Read an array written by :func:`write_u32_array` as int64."""
    raw = Path(path).read_bytes()
    count = struct.unpack_from("<Q", raw, 0)[0]
    expected = 8 + 4 * count
    if len(raw) != expected:
        raise ValueError(f"truncated u32 array file: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<u4", count=count, offset=8).astype(np.int64)


def write_partition_text(path: str | Path, labels: np.ndarray) -> None:
    """Write one ``vertex<TAB>partition`` line per vertex."""
    lines = [f"{v}\t{int(p)}" for v, p in enumerate(labels)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_partition_text(path: str | Path) -> np.ndarray:
    """Read labels written by :func:`write_partition_text`."""
    labels: dict[int, int] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'vertex<TAB>partition'")
        labels[int(parts[0])] = int(parts[1])
    if sorted(labels) != list(range(len(labels))):
        raise ValueError(f"{path}: vertex ids must be dense 0..{len(labels) - 1}")
    return np.array([labels[v] for v in range(len(labels))], dtype=np.int32)


def write_checkpoint(path: str | Path, weights: list[np.ndarray]) -> None:
    """Write layer count, u64 dims per layer boundary, then f64 matrices."""
    if not weights:
        raise ValueError("checkpoint requires at least one weight matrix")
    dims = [weights[0].shape[0]]
    for idx, mat in enumerate(weights):
        if mat.ndim != 2:
            raise ValueError(f"weight {idx} must be 2-D, got shape {mat.shape}")
        if mat.shape[0] != dims[-1]:
            raise ValueError(f"weight {idx} input dim {mat.shape[0]} != previous output {dims[-1]}")
        dims.append(mat.shape[1])
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(weights)))
        fh.write(struct.pack(f"<{len(dims)}Q", *dims))
        for mat in weights:
            fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def read_checkpoint(path: str | Path) -> list[np.ndarray]:
    """Read weight matrices written by :func:`write_checkpoint`."""
    raw = Path(path).read_bytes()
    num_layers = struct.unpack_from("<Q", raw, 0)[0]
    dims = struct.unpack_from(f"<{num_layers + 1}Q", raw, 8)
    offset = 8 + 8 * (num_layers + 1)
    weights = []
    for layer in range(num_layers):
        rows, cols = dims[layer], dims[layer + 1]
        flat = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=offset)
        weights.append(flat.reshape(rows, cols).copy())
        offset += 8 * rows * cols
    if offset != len(raw):
        raise ValueError(f"trailing bytes in checkpoint: expected {offset}, found {len(raw)}")
    return weights


def canonical_json(obj) -> str:
    """Serialize to JSON with sorted keys and a trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj) -> None:
    """Write canonical JSON to ``path``."""
    Path(path).write_text(canonical_json(obj))
