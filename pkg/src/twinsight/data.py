"""Synthetic data, CSV I/O, Dirichlet partitioning and label-deficiency scenarios."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

UNLABELED = -1

FULLY_LABELED = "fully_labeled"
FULLY_UNLABELED = "fully_unlabeled"
PARTIALLY_LABELED = "partially_labeled"


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError(f"features must be a non-empty n x d matrix, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label slot per row is required")
        present = self.labels[self.labels != UNLABELED]
        if present.size and (present.min() < 0 or present.max() >= self.num_classes):
            raise ValueError(f"labels must be {UNLABELED} or lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNLABELED

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        lab = self.labels[self.labeled_mask]
        return np.bincount(lab, minlength=self.num_classes)


def designation_of(labels) -> str:
    mask = np.asarray(labels) != UNLABELED
    if mask.all():
        return FULLY_LABELED
    if not mask.any():
        return FULLY_UNLABELED
    return PARTIALLY_LABELED


@dataclass
class ClientShard:
    client_id: int
    dataset: Dataset
    # row indices into the dataset this shard was cut from
    source_index: np.ndarray | None = None

    @property
    def designation(self) -> str:
        return designation_of(self.dataset.labels)

    def __len__(self):
        return len(self.dataset)


@dataclass(frozen=True)
class AugmentPolicy:
    noise_std: float = 0.1
    dropout: float = 0.1
    jitter: tuple = (0.8, 1.2)

    def __post_init__(self):
        lo, hi = self.jitter
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not (0 < lo <= 1 <= hi):
            raise ValueError("jitter range must satisfy 0 < lo <= 1 <= hi")
        object.__setattr__(self, "jitter", (float(lo), float(hi)))


def augment(x, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Scale jitter, then additive Gaussian noise, then feature dropout.

    Works on a single row or on a batch (one jitter factor per row).
    """
    x = np.asarray(x, dtype=np.float64)
    rows = np.atleast_2d(x)
    lo, hi = policy.jitter
    scale = rng.uniform(lo, hi, size=(rows.shape[0], 1))
    out = rows * scale + rng.normal(0.0, 1.0, size=rows.shape) * policy.noise_std
    keep = rng.random(rows.shape) >= policy.dropout
    out = np.where(keep, out, 0.0)
    return out.reshape(x.shape)


def generate_blobs(n: int, classes: int, dim: int, spread: float, seed) -> Dataset:
    """Isotropic Gaussian blobs around class means on the unit sphere."""
    if classes < 2 or dim < 2 or n < 1:
        raise ValueError("need n >= 1, classes >= 2 and dim >= 2")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % classes)
    x = means[labels] + spread * rng.normal(size=(n, dim))
    return Dataset(x, labels, classes)


def blobs_split(n_train: int, n_test: int, classes: int, dim: int, spread: float, seed):
    """Train/test sets that share class means."""
    full = generate_blobs(n_train + n_test, classes, dim, spread, seed)
    return full.subset(slice(0, n_train)), full.subset(slice(n_train, None))


def save_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(dataset.dim)])
        for lab, row in zip(dataset.labels, dataset.features):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read ``label,f0,...`` rows; label -1 marks an unlabeled sample.

    When ``num_classes`` is omitted it is inferred as max label + 1.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataFormatError(f"{path}: empty file")
        if header[0] != "label" or len(header) < 2:
            raise DataFormatError(f"{path}:1: header must be 'label,f0,...'")
        dim = len(header) - 1
        labels, feats = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise DataFormatError(f"{path}:{lineno}: expected {dim + 1} columns, got {len(row)}")
            try:
                lab = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if lab < UNLABELED:
                raise DataFormatError(f"{path}:{lineno}: invalid label {lab}")
            if num_classes is not None and lab >= num_classes:
                raise DataFormatError(f"{path}:{lineno}: label {lab} >= class count {num_classes}")
            labels.append(lab)
            feats.append(vals)
    if not labels:
        raise DataFormatError(f"{path}: no data rows")
    if num_classes is None:
        num_classes = max(max(labels) + 1, 1)
    return Dataset(np.array(feats), np.array(labels), num_classes)


def _largest_remainder(p, total):
    raw = np.asarray(p) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        # stable order keeps ties deterministic
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(dataset: Dataset, K: int, gamma: float, seed) -> list[ClientShard]:
    """Label-skewed split: each class is spread over clients by a Dirichlet(gamma) draw.

    Empty clients are repaired by moving one sample from the largest client.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if K < 1:
        raise ValueError("K must be >= 1")
    if not dataset.labeled_mask.all():
        raise ValueError("dirichlet_partition needs a fully labeled dataset")
    n = len(dataset)
    if K > n:
        raise ValueError(f"K={K} exceeds sample count {n}")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(K)]
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        p = rng.dirichlet(np.full(K, gamma))
        if not np.all(np.isfinite(p)) or p.sum() <= 0:
            # tiny gamma can underflow every component
            p = np.zeros(K)
            p[rng.integers(K)] = 1.0
        counts = _largest_remainder(p / p.sum(), idx.size)
        for k, part in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            buckets[k].extend(part.tolist())
    for k in range(K):
        if not buckets[k]:
            donor = max(range(K), key=lambda j: (len(buckets[j]), -j))
            buckets[k].append(buckets[donor].pop())
    shards = []
    for k, b in enumerate(buckets):
        idx = np.sort(np.array(b, dtype=np.int64))
        shards.append(ClientShard(k, dataset.subset(idx), idx))
    return shards


def build_scenario(shards, *, alpha: float | None = None, labeled_ratio: float | None = None,
                   seed=0) -> list[ClientShard]:
    """Hide labels either per client (``alpha``) or per sample (``labeled_ratio``).

    ``alpha`` is the fraction of fully-unlabeled clients and must make
    alpha * K an integer. ``labeled_ratio`` keeps ceil(ratio * n_k) labels in
    every client.
    """
    if (alpha is None) == (labeled_ratio is None):
        raise ValueError("give exactly one of alpha or labeled_ratio")
    rng = np.random.default_rng(seed)
    K = len(shards)
    out = []
    if alpha is not None:
        t = alpha * K
        T = int(round(t))
        if not 0 <= alpha <= 1 or abs(t - T) > 1e-9:
            raise ValueError(f"alpha={alpha} with K={K} gives non-integral T={t}")
        hidden = set(rng.choice(K, size=T, replace=False).tolist()) if T else set()
        for s in shards:
            labels = s.dataset.labels.copy()
            if s.client_id in hidden:
                labels[:] = UNLABELED
            out.append(replace(s, dataset=Dataset(s.dataset.features, labels, s.dataset.num_classes)))
    else:
        if not 0 < labeled_ratio <= 1:
            raise ValueError("labeled_ratio must lie in (0, 1]")
        for s in shards:
            n_k = len(s)
            keep = math.ceil(labeled_ratio * n_k - 1e-9)
            chosen = rng.choice(n_k, size=keep, replace=False)
            labels = np.full(n_k, UNLABELED, dtype=np.int64)
            labels[chosen] = s.dataset.labels[chosen]
            out.append(replace(s, dataset=Dataset(s.dataset.features, labels, s.dataset.num_classes)))
    if not any(s.dataset.labeled_mask.any() for s in out):
        raise ValueError("scenario leaves no labeled samples")
    return out
