"""Singular-spectrum analysis and clean-subspace projection of feature matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matcore import DimensionError, ValidationError, as_mat, svd


@dataclass(frozen=True)
class FeatureMatrix:
    """N x d features. ``mean`` is the column mean removed from ``mat`` when ``centered``."""

    mat: np.ndarray
    mean: np.ndarray
    centered: bool = False

    @classmethod
    def raw(cls, features) -> "FeatureMatrix":
        m = as_mat(features, "features")
        if m.shape[0] < 1:
            raise ValidationError("a feature matrix needs at least one row")
        return cls(mat=m, mean=np.zeros(m.shape[1]), centered=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mat.shape

    def uncentered(self) -> np.ndarray:
        return self.mat + self.mean if self.centered else self.mat


@dataclass(frozen=True)
class SingularSpectrum:
    values: np.ndarray
    energy: np.ndarray  # cumulative share of sum(sigma^2)

    def rank_for_energy(self, threshold: float = 0.99) -> int:
        """Smallest number of leading components whose energy share reaches ``threshold``."""
        hits = np.flatnonzero(self.energy >= threshold)
        return int(hits[0]) + 1 if hits.size else len(self.values)

    def rows(self) -> list[tuple[int, float, float]]:
        return [(i + 1, float(s), float(e)) for i, (s, e) in enumerate(zip(self.values, self.energy))]


@dataclass(frozen=True)
class SubspaceProjector:
    basis: np.ndarray  # d x p, orthonormal columns
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dim", int(self.basis.shape[1]))

    @property
    def ambient_dim(self) -> int:
        return int(self.basis.shape[0])

    @property
    def matrix(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @property
    def complement(self) -> np.ndarray:
        return np.eye(self.ambient_dim) - self.matrix


@dataclass(frozen=True)
class OverlapReport:
    cosines: np.ndarray
    mean_sq_cosine: float


def _as_features(x) -> np.ndarray:
    return x.uncentered() if isinstance(x, FeatureMatrix) else as_mat(x, "features")


def center_rows(raw: FeatureMatrix) -> FeatureMatrix:
    """Subtract column means; the removed mean is kept so other rows can share the frame."""
    if raw.centered:
        return raw
    m = raw.mat
    mean = m.mean(axis=0)
    return FeatureMatrix(mat=m - mean, mean=mean, centered=True)


def in_frame(reference: FeatureMatrix, features) -> np.ndarray:
    """Express ``features`` in the centered frame of ``reference`` (its mean, not their own)."""
    x = _as_features(features)
    if x.shape[1] != reference.mat.shape[1]:
        raise DimensionError(f"features have dim {x.shape[1]}, reference has {reference.mat.shape[1]}")
    return x - reference.mean


def singular_spectrum(h: FeatureMatrix) -> SingularSpectrum:
    if not h.centered:
        raise ValidationError("singular_spectrum expects a centered FeatureMatrix")
    s = svd(h.mat).s
    sq = s * s
    total = sq.sum()
    if total > 0:
        energy = np.cumsum(sq) / total
        energy[-1] = 1.0
    else:
        energy = np.ones_like(s)
    return SingularSpectrum(values=s, energy=energy)


def top_right_basis(h: FeatureMatrix, p: int) -> SubspaceProjector:
    n, d = h.shape
    if not 1 <= p <= min(n, d):
        raise ValidationError(f"p={p} outside [1, {min(n, d)}]")
    if not h.centered:
        raise ValidationError("top_right_basis expects a centered FeatureMatrix")
    v = svd(h.mat).v
    return SubspaceProjector(basis=np.ascontiguousarray(v[:, :p]))


def project_features(proj: SubspaceProjector, x):
    """Orthogonal projection ``V_p V_p^T x`` of a vector or of every row of a matrix."""
    was_fm = isinstance(x, FeatureMatrix)
    arr = x.mat if was_fm else np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != proj.ambient_dim:
        raise DimensionError(f"feature dim {arr.shape[-1]} != projector dim {proj.ambient_dim}")
    out = (arr @ proj.basis) @ proj.basis.T
    if was_fm:
        return FeatureMatrix(mat=out, mean=x.mean, centered=x.centered)
    return out


def project_in_frame(proj: SubspaceProjector, reference: FeatureMatrix, features) -> np.ndarray:
    """Project raw features around the reference mean and shift back: mean + P (x - mean)."""
    return reference.mean + project_features(proj, in_frame(reference, features))


def subspace_overlap(a: SubspaceProjector, b: SubspaceProjector) -> OverlapReport:
    """Cosines of the principal angles between two subspaces."""
    if a.ambient_dim != b.ambient_dim:
        raise DimensionError(f"ambient dims differ: {a.ambient_dim} vs {b.ambient_dim}")
    cos = svd(a.basis.T @ b.basis).s
    cos = np.clip(cos, 0.0, 1.0)
    return OverlapReport(cosines=cos, mean_sq_cosine=float(np.mean(cos * cos)))


def perturbation_matrix(clean, adv) -> FeatureMatrix:
    """Centered rowwise difference clean - adversarial."""
    c = _as_features(clean)
    a = _as_features(adv)
    if c.shape != a.shape:
        raise DimensionError(f"clean {c.shape} and adversarial {a.shape} features differ in shape")
    return center_rows(FeatureMatrix.raw(c - a))


def magnitude_profile(h) -> np.ndarray:
    """Per-dimension mean absolute value of the uncentered features."""
    return np.mean(np.abs(_as_features(h)), axis=0)


def select_dim(spectrum: SingularSpectrum, threshold: float = 0.99) -> int:
    return spectrum.rank_for_energy(threshold)
