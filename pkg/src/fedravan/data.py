"""Synthetic Gaussian-cluster datasets and federated (IID / Dirichlet) partitioning."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .linalg import RngStream, make_stream

MAX_REDRAWS = 100
_CENTER_CANDIDATES = 64


@dataclass
class Dataset:
    features: np.ndarray  # (d, n)
    labels: np.ndarray  # (n,) int
    n_classes: int
    centers: Optional[np.ndarray] = None  # (d, n_classes), when synthetic

    def __post_init__(self):
        if self.features.shape[1] != self.labels.shape[0] or self.labels.shape[0] == 0:
            raise ValueError("features and labels disagree on n, or n == 0")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[:, idx], self.labels[idx], self.n_classes, self.centers)


def spread_unit_vectors(n: int, d: int, stream: RngStream) -> np.ndarray:
    """Greedy max-min-angle directions: each new vector is the candidate whose
    largest |cosine| with the ones already chosen is smallest."""
    chosen = np.zeros((d, 0))
    for _ in range(n):
        cand = stream.standard_normal((d, _CENTER_CANDIDATES))
        cand /= np.linalg.norm(cand, axis=0, keepdims=True)
        if chosen.shape[1] == 0:
            pick = cand[:, :1]
        else:
            worst = np.abs(chosen.T @ cand).max(axis=0)
            pick = cand[:, [int(np.argmin(worst))]]
        chosen = np.hstack([chosen, pick])
    return chosen


def draw_from_centers(centers: np.ndarray, n_per_class: int, stream: RngStream) -> Dataset:
    """Unit-covariance Gaussian samples around each column of ``centers``, shuffled."""
    d, n_classes = centers.shape
    labels = np.repeat(np.arange(n_classes), n_per_class)
    feats = centers[:, labels] + stream.standard_normal((d, labels.size))
    order = stream.permutation(labels.size)
    return Dataset(feats[:, order], labels[order], n_classes, centers)


def make_synthetic(n_classes: int, d: int, n_per_class: int, class_sep: float,
                   stream: RngStream) -> Dataset:
    if min(n_classes, d, n_per_class) <= 0 or class_sep <= 0:
        raise ValueError("all arguments must be positive")
    centers = class_sep * spread_unit_vectors(n_classes, d, stream)
    return draw_from_centers(centers, n_per_class, stream)


@dataclass
class ShiftedTask:
    """Source task for pretraining plus a target task whose class centers moved."""

    source: Dataset
    train: Dataset
    test: Dataset


def make_shifted_task(n_classes: int, d: int, n_per_class: int, n_test_per_class: int,
                      class_sep: float, shift: float, stream: RngStream) -> ShiftedTask:
    """Target center k = source center k + ``shift`` times a fresh spread direction.

    ``shift=0`` makes source and target share their centers.
    """
    source = make_synthetic(n_classes, d, n_per_class, class_sep, stream)
    centers = source.centers
    if shift:
        centers = centers + shift * spread_unit_vectors(n_classes, d, stream)
    train = draw_from_centers(centers, n_per_class, stream)
    test = draw_from_centers(centers, n_test_per_class, stream)
    return ShiftedTask(source, train, test)


def load_csv(path) -> Dataset:
    """Tabular loader: header row, integer ``label`` column, every other column a feature."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if "label" not in header:
            raise ValueError(f"{path}: no 'label' column in header")
        li = header.index("label")
        rows = [row for row in reader if row]
    labels = np.array([int(row[li]) for row in rows])
    feats = np.array([[float(v) for j, v in enumerate(row) if j != li] for row in rows]).T
    return Dataset(feats, labels, int(labels.max()) + 1)


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    mode: str = "dirichlet"  # "iid" | "dirichlet"
    alpha: float = 0.3
    seed: int = 0
    min_size: int = 1

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if self.mode not in ("iid", "dirichlet"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def partition(ds: Dataset, spec: PartitionSpec) -> List[np.ndarray]:
    """Disjoint, exhaustive client index sets (each sorted)."""
    if spec.n_clients > ds.n:
        raise ValueError(f"{spec.n_clients} clients but only {ds.n} samples")
    stream = make_stream(spec.seed, "partition")
    if spec.mode == "iid":
        perm = stream.permutation(ds.n)
        return [np.sort(s) for s in np.array_split(perm, spec.n_clients)]

    by_class = [np.flatnonzero(ds.labels == c) for c in range(ds.n_classes)]
    for _ in range(MAX_REDRAWS):
        shards: List[list] = [[] for _ in range(spec.n_clients)]
        for idx in by_class:
            if idx.size == 0:
                continue
            idx = stream.permutation(idx)
            props = stream.dirichlet(np.full(spec.n_clients, spec.alpha))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(int)
            for client, part in enumerate(np.split(idx, cuts)):
                shards[client].append(part)
        out = [np.sort(np.concatenate(s)) if s else np.array([], dtype=int) for s in shards]
        if min(len(s) for s in out) >= spec.min_size:
            return out
    raise ValueError(f"no Dirichlet draw gave every client >= {spec.min_size} samples "
                     f"in {MAX_REDRAWS} attempts")


def label_distributions(ds: Dataset, shards) -> np.ndarray:
    """Row c is client c's empirical class distribution."""
    out = np.zeros((len(shards), ds.n_classes))
    for c, idx in enumerate(shards):
        counts = np.bincount(ds.labels[idx], minlength=ds.n_classes)
        out[c] = counts / max(counts.sum(), 1)
    return out


def mean_label_entropy(ds: Dataset, shards) -> float:
    dist = label_distributions(ds, shards)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(dist > 0, -dist * np.log(dist), 0.0)
    return float(terms.sum(axis=1).mean())


def mean_tv_distance(ds: Dataset, shards) -> float:
    """Average total-variation distance from client label mixes to the global one."""
    dist = label_distributions(ds, shards)
    glob = np.bincount(ds.labels, minlength=ds.n_classes) / ds.n
    return float((0.5 * np.abs(dist - glob).sum(axis=1)).mean())
