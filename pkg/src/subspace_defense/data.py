"""Datasets: seeded synthetic low-rank clusters and CSV ingestion."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matcore import RngStream, ValidationError, as_mat, svd

TEST_FRACTION = 0.2
MIN_TRAIN_ROWS = 8


class ParseError(ValueError):
    """Malformed dataset file; the message names the offending line."""


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    classes: int
    provenance: dict = field(default_factory=dict)
    label_names: list[str] | None = None

    def __post_init__(self):
        self.x = as_mat(self.x, "dataset features")
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.y.shape != (self.x.shape[0],):
            raise ValidationError("one label per row required")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.classes):
            raise ValidationError(f"labels must lie in [0, {self.classes})")
        both = np.concatenate([self.train_idx, self.test_idx])
        if both.size != self.n or np.unique(both).size != self.n:
            raise ValidationError("train/test split must be disjoint and cover every row")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def x_train(self) -> np.ndarray:
        return self.x[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.y[self.train_idx]

    @property
    def x_test(self) -> np.ndarray:
        return self.x[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.y[self.test_idx]

    def require_trainable(self) -> None:
        if self.n < MIN_TRAIN_ROWS:
            raise ValidationError(f"need at least {MIN_TRAIN_ROWS} rows to train, dataset has {self.n}")
        if self.train_idx.size == 0 or self.test_idx.size == 0:
            raise ValidationError("both train and test splits must be non-empty")

    def centroid_distance(self) -> float:
        """Median pairwise distance between the class centroids of the training split."""
        xt, yt = self.x_train, self.y_train
        cents = np.array([xt[yt == c].mean(axis=0) for c in range(self.classes) if np.any(yt == c)])
        iu = np.triu_indices(len(cents), k=1)
        d = np.linalg.norm(cents[:, None, :] - cents[None, :, :], axis=-1)[iu]
        return float(np.median(d)) if d.size else 0.0


def split_indices(n: int, seed: int, test_fraction: float = TEST_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    perm = RngStream(seed, "split").permutation(n)
    n_test = int(round(test_fraction * n))
    if n >= 2:
        n_test = min(max(n_test, 1), n - 1)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 4
    input_dim: int = 20
    signal_rank: int = 3
    separation: float = 4.0
    noise: float = 0.5
    ambient_noise: float = 0.02
    perturb_rank: int = 2
    perturb_scale: float = 1.0
    perturb_overlap: float = 0.0
    n_per_class: int = 200
    seed: int = 0

    def validate(self) -> None:
        if self.classes < 2:
            raise ValidationError("need at least two classes")
        if self.signal_rank < 1 or self.perturb_rank < 0:
            raise ValidationError("ranks must be positive")
        if self.signal_rank + self.perturb_rank > self.input_dim:
            raise ValidationError("signal_rank + perturb_rank must not exceed input_dim")
        if not self.separation > 0:
            raise ValidationError("separation must be positive")
        if self.noise < 0 or self.ambient_noise < 0 or self.perturb_scale < 0:
            raise ValidationError("noise scales must be non-negative")
        if not 0.0 <= self.perturb_overlap <= 1.0:
            raise ValidationError("perturb_overlap must lie in [0, 1]")
        if self.classes * self.n_per_class < MIN_TRAIN_ROWS:
            raise ValidationError(f"synthetic dataset needs at least {MIN_TRAIN_ROWS} rows")

    def replace(self, **changes) -> "SynthSpec":
        return dataclasses.replace(self, **changes)


def _orthonormal(rng: RngStream, n: int) -> np.ndarray:
    return svd(rng.normal_matrix(n, n)).u


def _class_directions(rng: RngStream, classes: int, rank: int) -> np.ndarray:
    """Unit class-mean directions in signal coordinates (classes x rank)."""
    rot = _orthonormal(rng.child("rotation"), rank)
    if classes <= rank:
        return rot[:, :classes].T.copy()
    if classes - 1 <= rank:
        # Regular simplex: centered one-hot vertices expressed in their (C-1)-dim span.
        vert = np.eye(classes) - 1.0 / classes
        basis = svd(vert).v[:, : classes - 1]
        coords = vert @ basis
        coords /= np.linalg.norm(coords, axis=1, keepdims=True)
        return coords @ rot[:, : classes - 1].T
    dirs = rng.child("directions").normal_matrix(classes, rank)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def synthetic_bases(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Signal basis (d x r_true) and perturbation basis (d x q) of a synthetic spec."""
    spec.validate()
    rng = RngStream(spec.seed, "synthetic")
    q = _orthonormal(rng.child("basis"), spec.input_dim)
    signal = q[:, : spec.signal_rank]
    off = q[:, spec.signal_rank: spec.signal_rank + spec.perturb_rank]
    o = spec.perturb_overlap
    if o == 0.0 or spec.perturb_rank == 0:
        return signal, off
    tied = signal[:, np.arange(spec.perturb_rank) % spec.signal_rank]
    mixed = math.sqrt(1.0 - o * o) * off + o * tied
    return signal, svd(mixed).u


def gen_synthetic(spec: SynthSpec) -> Dataset:
    """Classes centred at ``separation * unit directions`` inside a rank-``signal_rank`` subspace.

    Within-class noise lives in the same subspace; a small isotropic ambient
    term is added on top. Rows are emitted in class blocks.
    """
    spec.validate()
    rng = RngStream(spec.seed, "synthetic")
    signal, _ = synthetic_bases(spec)
    dirs = _class_directions(rng.child("means"), spec.classes, spec.signal_rank)
    n = spec.classes * spec.n_per_class
    y = np.repeat(np.arange(spec.classes), spec.n_per_class)
    coords = spec.separation * dirs[y] + spec.noise * rng.child("noise").normal_matrix(n, spec.signal_rank)
    x = coords @ signal.T + spec.ambient_noise * rng.child("ambient").normal_matrix(n, spec.input_dim)
    train_idx, test_idx = split_indices(n, spec.seed)
    return Dataset(x=x, y=y, train_idx=train_idx, test_idx=test_idx, classes=spec.classes,
                   provenance={"synthetic": dataclasses.asdict(spec)},
                   label_names=[str(c) for c in range(spec.classes)])


def synthetic_perturbations(spec: SynthSpec, n: int, label: str = "perturb") -> np.ndarray:
    """``n`` rows of perturbation confined to the spec's rank-q perturbation subspace."""
    _, basis = synthetic_bases(spec)
    coeff = RngStream(spec.seed, "synthetic").child(label).normal_matrix(n, basis.shape[1])
    return spec.perturb_scale * coeff @ basis.T


def load_csv(path: str | Path, label_column: str, seed: int = 0) -> Dataset:
    """Read a headed numeric CSV; every non-label column is a feature."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: line 1: missing header row") from None
        if label_column not in header:
            raise ParseError(f"{path}: line 1: label column {label_column!r} not in header {header}")
        li = header.index(label_column)
        rows, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(c) for i, c in enumerate(row) if i != li])
            except ValueError as exc:
                raise ParseError(f"{path}: line {line}: non-numeric cell ({exc})") from None
            labels.append(row[li].strip())
    if not rows:
        raise ParseError(f"{path}: no data rows")
    names: list[str] = []
    index: dict[str, int] = {}
    for lab in labels:
        if lab not in index:
            index[lab] = len(names)
            names.append(lab)
    x = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParseError(f"{path}: non-finite feature values")
    y = np.array([index[lab] for lab in labels], dtype=np.int64)
    train_idx, test_idx = split_indices(len(y), seed)
    return Dataset(x=x, y=y, train_idx=train_idx, test_idx=test_idx, classes=max(len(names), 1),
                   provenance={"file": str(path), "label_column": label_column, "seed": seed},
                   label_names=names)


def dataset_csv(ds: Dataset, label_column: str = "label") -> str:
    names = ds.label_names or [str(c) for c in range(ds.classes)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(ds.input_dim)] + [label_column])
    for row, lab in zip(ds.x, ds.y):
        w.writerow([repr(float(v)) for v in row] + [names[lab]])
    return buf.getvalue()
