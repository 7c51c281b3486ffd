"""Unbiased HSIC with RBF kernels and its gradient with respect to the samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matcore import DimensionError, ValidationError, as_mat

MIN_SAMPLES = 4


@dataclass(frozen=True)
class KernelMatrix:
    k: np.ndarray
    bandwidth: float
    diagonal_zeroed: bool

    @property
    def n(self) -> int:
        return self.k.shape[0]


@dataclass(frozen=True)
class HsicBatch:
    u_samples: np.ndarray
    v_samples: np.ndarray
    value: float
    grad_u: np.ndarray
    grad_v: np.ndarray
    sigma_u: float
    sigma_v: float


def pairwise_sq_dists(x) -> np.ndarray:
    # Direct differences rather than |a|^2 + |b|^2 - 2ab: exact zeros and symmetry.
    x = as_mat(x)
    diff = x[:, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_bandwidth(x) -> float:
    """Median pairwise Euclidean distance (upper triangle), or 1.0 if that median is 0."""
    x = as_mat(x)
    n = x.shape[0]
    if n < 2:
        raise ValidationError("median bandwidth needs at least two samples")
    iu = np.triu_indices(n, k=1)
    d = np.sort(np.sqrt(pairwise_sq_dists(x)[iu]))
    m = d.size
    med = d[m // 2] if m % 2 else 0.5 * (d[m // 2 - 1] + d[m // 2])
    return float(med) if med > 0 else 1.0


def rbf_kernel(x, sigma: float, zero_diagonal: bool = True) -> KernelMatrix:
    if not sigma > 0:
        raise ValidationError(f"bandwidth must be positive, got {sigma}")
    k = np.exp(-pairwise_sq_dists(x) / (2.0 * sigma * sigma))
    if zero_diagonal:
        np.fill_diagonal(k, 0.0)
    return KernelMatrix(k=k, bandwidth=float(sigma), diagonal_zeroed=zero_diagonal)


def _check_pair(ku: KernelMatrix, kv: KernelMatrix) -> int:
    if not (ku.diagonal_zeroed and kv.diagonal_zeroed):
        raise ValidationError("unbiased HSIC needs kernels with zeroed diagonals")
    if ku.n != kv.n:
        raise DimensionError(f"kernel sizes differ: {ku.n} vs {kv.n}")
    if ku.n < MIN_SAMPLES:
        raise ValidationError(f"unbiased HSIC needs n >= {MIN_SAMPLES}, got {ku.n}")
    return ku.n


def hsic_unbiased(ku: KernelMatrix, kv: KernelMatrix) -> float:
    """Unbiased finite-sample HSIC; can be slightly negative."""
    n = _check_pair(ku, kv)
    a, b = ku.k, kv.k
    # Terms scaled by (n-1)(n-2) so the constant-kernel case cancels exactly.
    trace_term = (n - 1) * (n - 2) * np.sum(a * b)
    sum_term = a.sum() * b.sum()
    cross_term = 2.0 * (n - 1) * (a.sum(axis=0) @ b.sum(axis=0))
    return float((trace_term + sum_term - cross_term) / (n * (n - 1) * (n - 2) * (n - 3)))


def _dvalue_dkernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """d HSIC / d a_ij for the off-diagonal entries of the first kernel (b held fixed)."""
    n = a.shape[0]
    g = (n - 1) * (n - 2) * b + b.sum() - 2.0 * (n - 1) * b.sum(axis=0)[None, :]
    g = g / (n * (n - 1) * (n - 2) * (n - 3))
    np.fill_diagonal(g, 0.0)
    return g


def _sample_grad(x: np.ndarray, k: np.ndarray, g: np.ndarray, sigma: float) -> np.ndarray:
    # k_ij = exp(-|x_i - x_j|^2 / 2s^2) so d k_ij / d x_i = k_ij (x_j - x_i) / s^2,
    # and x_i enters both k_ij and k_ji.
    w = (g + g.T) * k
    return (w @ x - w.sum(axis=1)[:, None] * x) / (sigma * sigma)


def hsic_gradient(u, v, sigma_u: float | None = None, sigma_v: float | None = None) -> HsicBatch:
    """HSIC(u, v) and its exact gradient w.r.t. every sample entry.

    Bandwidths default to the median heuristic and are treated as constants.
    """
    u = as_mat(u, "u")
    v = as_mat(v, "v")
    if u.shape[0] != v.shape[0]:
        raise DimensionError(f"u has {u.shape[0]} samples, v has {v.shape[0]}")
    su = median_bandwidth(u) if sigma_u is None else float(sigma_u)
    sv = median_bandwidth(v) if sigma_v is None else float(sigma_v)
    ku = rbf_kernel(u, su)
    kv = rbf_kernel(v, sv)
    value = hsic_unbiased(ku, kv)
    grad_u = _sample_grad(u, ku.k, _dvalue_dkernel(ku.k, kv.k), su)
    grad_v = _sample_grad(v, kv.k, _dvalue_dkernel(kv.k, ku.k), sv)
    return HsicBatch(u_samples=u, v_samples=v, value=value, grad_u=grad_u, grad_v=grad_v, sigma_u=su, sigma_v=sv)
