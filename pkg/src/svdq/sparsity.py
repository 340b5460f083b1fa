"""Chunk-landmark attention sparsity.

Tokens are grouped into fixed-size chunks; each chunk's mean key is its
landmark. A query scores chunks by dot product with the landmarks, keeps the
top-k, and always keeps outlier chunks whose tokens stray from their landmark.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .keycore import as_key_matrix

DEFAULT_TAU = 0.7


@dataclass(frozen=True)
class SparsityIndex:
    chunk_size: int
    landmarks: np.ndarray
    min_cosine: np.ndarray
    outlier_flags: np.ndarray
    s: int
    tau: float

    @property
    def chunk_count(self) -> int:
        return self.landmarks.shape[0]

    def chunk_bounds(self, g: int) -> tuple[int, int]:
        start = g * self.chunk_size
        return start, min(start + self.chunk_size, self.s)


def _cosine(rows, ref):
    """Row-wise cosine against ``ref`` rows; zero vectors match only zero vectors."""
    num = np.einsum("ij,ij->i", rows, ref)
    den = np.linalg.norm(rows, axis=1) * np.linalg.norm(ref, axis=1)
    both_zero = ~rows.any(axis=1) & ~ref.any(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return np.where(both_zero, 1.0, cos)


def build_index(k, chunk_size: int = 8, tau: float = DEFAULT_TAU) -> SparsityIndex:
    """Landmarks and outlier flags; a trailing partial chunk is kept as its own chunk."""
    if chunk_size < 1:
        raise ConfigError(f"chunk_size must be >= 1, got {chunk_size}")
    k = as_key_matrix(k)
    s, d = k.shape
    n_full, tail = divmod(s, chunk_size)
    full = k[: n_full * chunk_size].reshape(n_full, chunk_size, d)
    landmarks = full.mean(axis=1)
    owner = np.repeat(np.arange(n_full), chunk_size)
    if tail:
        landmarks = np.vstack([landmarks, k[n_full * chunk_size:].mean(axis=0)])
        owner = np.concatenate([owner, np.full(tail, n_full)])
    cos = _cosine(k, landmarks[owner])
    min_cos = np.minimum.reduceat(cos, np.arange(0, s, chunk_size))
    return SparsityIndex(
        chunk_size=chunk_size,
        landmarks=landmarks,
        min_cosine=min_cos,
        outlier_flags=min_cos < tau,
        s=s,
        tau=float(tau),
    )


def score_chunks(query, index: SparsityIndex) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != index.landmarks.shape[1]:
        raise DataError(f"query has {q.shape[0]} dims, landmarks have {index.landmarks.shape[1]}")
    return index.landmarks @ q


def select_chunks(scores, k: int, index: SparsityIndex) -> np.ndarray:
    """Sorted chunk ids: the ``k`` best by score plus every outlier chunk.

    Ties go to the lower chunk index.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = index.chunk_count
    if scores.shape[0] != n:
        raise DataError(f"{scores.shape[0]} scores for {n} chunks")
    if not 1 <= k <= n:
        raise ConfigError(f"k must be in [1, {n}], got {k}")
    order = np.lexsort((np.arange(n), -scores))
    keep = np.zeros(n, dtype=bool)
    keep[order[:k]] = True
    keep |= index.outlier_flags
    return np.flatnonzero(keep)


def token_indices(selected, index: SparsityIndex) -> np.ndarray:
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size and (selected.min() < 0 or selected.max() >= index.chunk_count):
        raise DataError("selected chunk id out of range")
    parts = [np.arange(*index.chunk_bounds(int(g))) for g in np.unique(selected)]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def gather(k, selected, index: SparsityIndex):
    """Rows of the selected chunks in original order, plus their token indices."""
    k = np.asarray(k)
    if k.shape[0] != index.s:
        raise DataError(f"matrix has {k.shape[0]} rows, index built for {index.s}")
    idx = token_indices(selected, index)
    return k[idx], idx


def sparsity_ratio(s: int, retained: int) -> float:
    if retained < 1:
        raise DataError("no tokens retained")
    return s / retained
