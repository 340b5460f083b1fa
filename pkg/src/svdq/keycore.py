"""Key-matrix centering, SVD factorization, latent projection and reconstruction.

A key matrix is a plain 2-D float array with one row per token and one column
per channel. All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError


@dataclass(frozen=True)
class CenteredSVD:
    """Thin SVD of a column-centered key matrix, ``K - mean = left @ diag(singulars) @ basis.T``."""

    mean: np.ndarray
    left: np.ndarray
    singulars: np.ndarray
    basis: np.ndarray


def as_key_matrix(k, name: str = "key matrix") -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] < 1 or k.shape[1] < 1:
        raise DataError(f"{name} must be a non-empty 2-D matrix, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise DataError(f"{name} contains non-finite values")
    return k


def center(k):
    """Subtract per-channel means. Returns ``(mean, centered)``."""
    k = as_key_matrix(k)
    mean = k.mean(axis=0)
    return mean, k - mean


def svd(centered, mean=None) -> CenteredSVD:
    """Thin SVD with a deterministic sign convention.

    Each basis column is flipped so its largest-magnitude entry is positive,
    and the matching left column is flipped with it. An all-zero input gives
    zero singular values and the identity basis.
    """
    a = as_key_matrix(centered, "centered matrix")
    s, d = a.shape
    if s < d:
        raise DataError(f"need at least as many tokens as channels, got {s} x {d}")
    if mean is None:
        mean = np.zeros(d)
    if not np.any(a):
        return CenteredSVD(
            mean=np.asarray(mean, dtype=np.float64),
            left=np.eye(s, d),
            singulars=np.zeros(d),
            basis=np.eye(d),
        )
    try:
        u, sv, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(sv)) and np.all(np.isfinite(vt))):
        raise NumericError("SVD produced non-finite factors")
    v = vt.T
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.where(v[pivot, np.arange(d)] < 0, -1.0, 1.0)
    return CenteredSVD(
        mean=np.asarray(mean, dtype=np.float64),
        left=u * signs,
        singulars=sv,
        basis=v * signs,
    )


def factorize(k) -> CenteredSVD:
    """Center ``k`` and factor it."""
    mean, centered = center(k)
    return svd(centered, mean)


def project(centered, basis) -> np.ndarray:
    """Latent representation ``centered @ basis``; columns are the latent channels."""
    a = as_key_matrix(centered, "centered matrix")
    v = np.asarray(basis, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != a.shape[1]:
        raise DataError(f"basis shape {v.shape} does not match {a.shape[1]} channels")
    return a @ v


def reconstruct(latent, basis, mean) -> np.ndarray:
    """Map latent channels back to key space and add the mean.

    ``latent`` may hold only the leading ``d_kept`` channels; the rest are
    taken as zero (the latent mean).
    """
    p = np.asarray(latent, dtype=np.float64)
    v = np.asarray(basis, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if p.ndim != 2 or v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise DataError(f"bad shapes: latent {p.shape}, basis {v.shape}")
    d = v.shape[0]
    if p.shape[1] > d or mean.shape != (d,):
        raise DataError(f"latent {p.shape} / mean {mean.shape} do not fit a {d}-channel basis")
    return p @ v[:, : p.shape[1]].T + mean
