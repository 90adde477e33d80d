"""Labeled node-classification datasets: graph, features, labels, train mask."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import (
    read_csr_binary,
    read_features,
    read_u32_array,
    write_csr_binary,
    write_features,
    write_u32_array,
)
from .graph import CsrGraph

__all__ = ["LabeledDataset", "load_dataset", "make_random_dataset"]


@dataclass
class LabeledDataset:
    """A graph with per-vertex features, class labels, and a training mask."""

    graph: CsrGraph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        n = self.graph.num_vertices
        if self.features.shape[0] != n:
            raise ValueError(f"features have {self.features.shape[0]} rows for {n} vertices")
        if self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} != ({n},)")
        if self.train_mask.shape != (n,) or self.train_mask.dtype != np.bool_:
            raise ValueError("train_mask must be a boolean array with one entry per vertex")
        if not self.train_mask.any():
            raise ValueError("train_mask selects no vertices")

    def save(self, directory: str | Path) -> None:
        """Write the dataset as four binary files under ``directory``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        write_csr_binary(self.graph, out / "graph.csr")
        write_features(out / "features.bin", self.features)
        write_u32_array(out / "labels.bin", self.labels)
        write_u32_array(out / "train_idx.bin", np.flatnonzero(self.train_mask))


def load_dataset(directory: str | Path) -> LabeledDataset:
    """Read a dataset written by :meth:`LabeledDataset.save`."""
    src = Path(directory)
    graph = read_csr_binary(src / "graph.csr")
    features = read_features(src / "features.bin")
    labels = read_u32_array(src / "labels.bin")
    train_idx = read_u32_array(src / "train_idx.bin")
    mask = np.zeros(graph.num_vertices, dtype=bool)
    mask[train_idx] = True
    ds = LabeledDataset(graph=graph, features=features, labels=labels, train_mask=mask)
    ds.validate()
    return ds


def make_random_dataset(
    graph: CsrGraph,
    feature_dim: int = 128,
    num_classes: int = 10,
    seed: int = 0,
    train_fraction: float = 0.5,
) -> LabeledDataset:
    """Attach random features, labels, and a train mask to ``graph``.

    Feature values are drawn as f32 so they survive the on-disk f32 format
    without rounding; the engine still computes in f64.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must be in (0, 1], got {train_fraction}")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = graph.num_vertices
    features = rng.random((n, feature_dim), dtype=np.float32).astype(np.float64) - 0.5
    labels = rng.integers(0, num_classes, size=n, dtype=np.int64)
    order = rng.permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[order[: max(1, int(round(train_fraction * n)))]] = True
    ds = LabeledDataset(graph=graph, features=features, labels=labels, train_mask=mask)
    ds.validate()
    return ds
