"""Dense float64 matrix helpers, a one-sided Jacobi SVD and seeded random streams.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
add the shape and finiteness checks the rest of the package relies on.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SVD_TOL = 1e-14
SVD_MAX_SWEEPS = 60


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ValidationError(ValueError):
    """An argument violates a documented precondition."""


def as_mat(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array (a copy is made only if needed)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError(f"{name} contains non-finite entries")
    return m


def _shape(a) -> str:
    return "x".join(str(s) for s in np.shape(a))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {_shape(a)} by {_shape(b)}")
    return a @ b


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a).T)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"cannot add {_shape(a)} and {_shape(b)}")
    return a + b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) * float(c)


def row_sums(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).sum(axis=1)


def col_sums(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).sum(axis=0)


def frobenius(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # (rows, k)
    s: np.ndarray  # (k,), non-increasing
    v: np.ndarray  # (cols, k)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def _complete_orthonormal(cols: np.ndarray, filled: np.ndarray) -> None:
    """Replace unfilled columns of ``cols`` (m x k) by unit vectors orthogonal to the rest."""
    m = cols.shape[0]
    e = 0
    for j in np.flatnonzero(~filled):
        while e < m:
            cand = np.zeros(m)
            cand[e] = 1.0
            e += 1
            basis = cols[:, filled]
            for _ in range(2):  # re-orthogonalize once for stability
                cand -= basis @ (basis.T @ cand)
            nrm = np.linalg.norm(cand)
            if nrm > 1e-8:
                cols[:, j] = cand / nrm
                filled[j] = True
                break


def _jacobi_tall(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Columns are stored as rows of `w` and `vt` for contiguous access.
    m, n = a.shape
    w = np.array(a.T, order="C", copy=True)
    vt = np.eye(n)
    for _ in range(SVD_MAX_SWEEPS):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                wi, wj = w[i], w[j]
                alpha = wi @ wi
                beta = wj @ wj
                gamma = wi @ wj
                if gamma == 0.0 or abs(gamma) <= SVD_TOL * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                w[i], w[j] = c * wi - s * wj, s * wi + c * wj
                vi, vj = vt[i], vt[j]
                vt[i], vt[j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    sv = np.sqrt(np.einsum("ij,ij->i", w, w))
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    w = w[order]
    vt = vt[order]
    u = np.zeros((m, n))
    nonzero = sv > 0.0
    u[:, nonzero] = (w[nonzero] / sv[nonzero, None]).T
    if not np.all(nonzero):
        _complete_orthonormal(u, nonzero.copy())
    return u, sv, np.ascontiguousarray(vt.T)


def svd(a) -> SvdResult:
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Returns ``k = min(rows, cols)`` factors with singular values sorted in
    descending order. Each right singular vector is flipped so that its first
    nonzero component is positive, which makes the output deterministic.
    """
    m = as_mat(a)
    rows, cols = m.shape
    if rows == 0 or cols == 0:
        raise ValidationError("svd requires at least one row and one column")
    if rows >= cols:
        u, s, v = _jacobi_tall(m)
    else:
        v, s, u = _jacobi_tall(m.T)
    for j in range(v.shape[1]):
        nz = np.flatnonzero(v[:, j])
        if nz.size and v[nz[0], j] < 0:
            v[:, j] = -v[:, j]
            u[:, j] = -u[:, j]
    return SvdResult(u=u, s=s, v=v)


# Random streams ------------------------------------------------------------


def _derive_key(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


class RngStream:
    """Reproducible random stream keyed by ``(seed, label)``.

    Backed by the counter-based Philox generator; gaussians use Box-Muller on
    pairs of uniforms so the sequence does not depend on numpy's sampler
    internals. ``child(label)`` derives an independent substream.
    """

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = label
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(self.seed, label)))

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{label}")

    def uniform(self, n: int) -> np.ndarray:
        """``n`` draws from [0, 1)."""
        return self._gen.random(int(n))

    def gaussian(self, n: int) -> np.ndarray:
        n = int(n)
        half = (n + 1) // 2
        u = self._gen.random(2 * half)
        u1 = 1.0 - u[:half]  # (0, 1], keeps log finite
        u2 = u[half:]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * half)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.gaussian(rows * cols).reshape(rows, cols)

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by our own uniforms.
        perm = np.arange(int(n))
        u = self.uniform(max(int(n) - 1, 0))
        for k, i in enumerate(range(int(n) - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


# Text fixtures --------------------------------------------------------------


def format_mat(a: np.ndarray) -> str:
    a = as_mat(a)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in a)
    return "\n".join(lines) + "\n"


def parse_mat(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValidationError("empty matrix text")
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise ValidationError(f"bad matrix header {lines[0]!r}") from exc
    if len(lines) - 1 != rows:
        raise ValidationError(f"expected {rows} rows, found {len(lines) - 1}")
    out = np.empty((rows, cols))
    for i, ln in enumerate(lines[1:]):
        vals = ln.split()
        if len(vals) != cols:
            raise ValidationError(f"row {i + 1}: expected {cols} values, found {len(vals)}")
        out[i] = [float(v) for v in vals]
    return as_mat(out)


def read_mat(path: str | Path) -> np.ndarray:
    return parse_mat(Path(path).read_text())


def write_mat(path: str | Path, a: np.ndarray) -> None:
    Path(path).write_text(format_mat(a))
