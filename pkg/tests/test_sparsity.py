import math

import numpy as np
import pytest

from svdq import ConfigError, DataError, build_index, gather, score_chunks, select_chunks
from svdq import harness
from svdq.sparsity import sparsity_ratio, token_indices


def test_identical_rows_no_outliers(rng):
    k = np.tile(rng.standard_normal(16), (64, 1))
    idx = build_index(k)
    np.testing.assert_allclose(idx.min_cosine, 1.0, rtol=1e-12)
    assert not idx.outlier_flags.any()


def test_landmarks_are_chunk_means(rng):
    k = rng.standard_normal((40, 5))
    idx = build_index(k, chunk_size=8)
    np.testing.assert_allclose(idx.landmarks, k.reshape(5, 8, 5).mean(axis=1))
    np.testing.assert_array_equal(idx.outlier_flags, idx.min_cosine < 0.7)


def test_orthogonal_token_is_outlier(rng):
    k = np.tile(rng.standard_normal(4) + 5, (32, 1))
    chunk = np.zeros((8, 4))
    chunk[:7, 0] = 1.0
    chunk[7, :2] = (-1.0, math.sqrt(6))  # orthogonal to the chunk mean
    k[8:16] = chunk
    idx = build_index(k)
    assert abs(idx.min_cosine[1]) < 1e-12
    assert idx.outlier_flags.tolist() == [False, True, False, False]


def test_threshold_extremes(rng):
    # a token's own |x|**2 ~ d dominates its dot with the other seven (std sqrt(7 d)) at d = 256
    k = rng.standard_normal((256, 256))
    assert not build_index(k, tau=0.0).outlier_flags.any()
    assert build_index(k, tau=1 + 1e-9).outlier_flags.all()


def test_trailing_partial_chunk(rng):
    k = rng.standard_normal((21, 3))
    idx = build_index(k, chunk_size=8)
    assert idx.chunk_count == 3 and idx.chunk_bounds(2) == (16, 21)
    np.testing.assert_allclose(idx.landmarks[2], k[16:].mean(axis=0))


def test_zero_token_in_zero_chunk():
    idx = build_index(np.zeros((16, 4)))
    assert not idx.outlier_flags.any()


def test_bad_chunk_size(rng):
    with pytest.raises(ConfigError):
        build_index(rng.standard_normal((8, 2)), chunk_size=0)


def test_zero_query(rng):
    idx = build_index(rng.standard_normal((64, 8)))
    assert not np.any(score_chunks(np.zeros(8), idx))


def test_orthonormal_landmarks():
    q = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 6)))[0]
    k = np.repeat(q, 8, axis=0)  # chunk g is eight copies of row g
    idx = build_index(k)
    for g in range(6):
        assert np.argmax(score_chunks(q[g], idx)) == g


def test_score_dimension_mismatch(rng):
    with pytest.raises(DataError):
        score_chunks(np.ones(3), build_index(rng.standard_normal((16, 4))))


def planted(seed, s=512, d=256, beta=8.0):
    """Gaussian keys with one chunk replaced by copies of a fresh vector; query aims at it."""
    rng = np.random.default_rng(seed)
    k = rng.standard_normal((s, d))
    g = int(rng.integers(0, s // 8))
    u = rng.standard_normal(d)
    k[8 * g:8 * g + 8] = u
    q = beta * math.sqrt(d) * u / np.dot(u, u)  # logit against u is exactly beta
    return k, q, g


def chunk_mass(k, q):
    w = harness.attention_weights(q, k)[0]
    return w.reshape(-1, 8).sum(axis=1)


@pytest.mark.parametrize("seed", range(10))
def test_planted_needle(seed):
    k, q, g = planted(seed)
    mass = chunk_mass(k, q)
    assert np.argmax(mass) == g and mass[g] > 0.5  # brute-force attention confirms dominance
    idx = build_index(k, tau=0.0)
    assert np.argmax(score_chunks(q, idx)) == g
    assert select_chunks(score_chunks(q, idx), 1, idx).tolist() == [g]


def _index(n, flags=None):
    idx = build_index(np.ones((8 * n, 2)))
    if flags is not None:
        object.__setattr__(idx, "outlier_flags", np.asarray(flags))
    return idx


def test_select_all():
    idx = _index(5)
    assert select_chunks(np.arange(5.0), 5, idx).tolist() == [0, 1, 2, 3, 4]


def test_select_top3():
    idx = _index(6)
    assert select_chunks(np.arange(6.0)[::-1], 3, idx).tolist() == [0, 1, 2]


def test_outlier_kept_outside_topk():
    idx = _index(6, [False, False, False, False, False, True])
    assert select_chunks(np.arange(6.0)[::-1], 2, idx).tolist() == [0, 1, 5]


def test_ties_to_lower_index():
    idx = _index(5)
    assert select_chunks([1.0, 2.0, 2.0, 2.0, 0.0], 2, idx).tolist() == [1, 2]


def test_selection_monotone_in_k(rng):
    idx = build_index(rng.standard_normal((256, 8)), tau=0.3)
    scores = score_chunks(rng.standard_normal(8), idx)
    prev = set()
    for kk in range(1, idx.chunk_count + 1):
        cur = set(select_chunks(scores, kk, idx).tolist())
        assert prev <= cur
        prev = cur


@pytest.mark.parametrize("kk", [0, 7])
def test_select_k_range(kk):
    with pytest.raises(ConfigError):
        select_chunks(np.zeros(6), kk, _index(6))


def test_gather_all(rng):
    k = rng.standard_normal((64, 4))
    idx = build_index(k)
    rows, tok = gather(k, np.arange(8), idx)
    np.testing.assert_array_equal(rows, k)
    assert sparsity_ratio(64, len(tok)) == 1


def test_gather_one_of_32(rng):
    k = rng.standard_normal((256, 4))
    idx = build_index(k)
    rows, tok = gather(k, [5], idx)
    assert sparsity_ratio(256, len(tok)) == 32
    np.testing.assert_array_equal(rows, k[40:48])


def test_gather_first_last(rng):
    k = rng.standard_normal((64, 4))
    rows, tok = gather(k, [7, 0], build_index(k))
    assert tok.tolist() == list(range(8)) + list(range(56, 64))
    assert rows.tobytes() == k[tok].tobytes()


def test_gather_bad_ids(rng):
    k = rng.standard_normal((16, 2))
    idx = build_index(k)
    with pytest.raises(DataError):
        token_indices([2], idx)
    with pytest.raises(DataError):
        gather(k[:8], [0], idx)
