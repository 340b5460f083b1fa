"""Desk-scale synthetic evaluation of key-cache compression.

Synthetic caches have an exactly known exponential singular spectrum, so the
error model can be checked against measurements, and attention outputs are
compared with exact softmax attention over the uncompressed cache.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import lfilter

from . import _backend, errmodel, pipeline, sparsity
from .errors import ConfigError, DataError
from .quant import BitSchedule, dequantize_values, quantize_values_per_token

# name: (head dim, kv heads, concatenated dim, group size at G=8)
PRESETS = {
    "llama-3.1-8b": (128, 8, 1024, 128),
    "qwen2.5-14b": (128, 8, 1024, 128),
    "qwen2.5-7b": (128, 4, 512, 64),
    "qwen2.5-3b": (128, 2, 256, 32),
}


@dataclass(frozen=True)
class SynthSpec:
    s: int = 8192
    d: int = 256
    rho: float = 0.1
    seed: int = 0
    preset: str | None = None
    token_corr: float = 0.9  # AR(1) coefficient along tokens
    mean_scale: float = 2.0  # |mean| relative to rms row norm of the centered keys

    def __post_init__(self):
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ConfigError(f"unknown preset {self.preset!r}; have {sorted(PRESETS)}")
            object.__setattr__(self, "d", PRESETS[self.preset][2])
        if self.s < self.d or self.d < 1:
            raise ConfigError(f"need s >= d >= 1, got s={self.s}, d={self.d}")
        if not 0 <= self.token_corr < 1:
            raise ConfigError(f"token_corr must be in [0, 1), got {self.token_corr}")


@dataclass
class EvalRecord:
    method: str
    bits: float
    compression_ratio: float
    sparsity_ratio: float
    rel_frob: float
    attn_max_abs_err: float
    output_cosine: float
    wall_time: float

    def as_dict(self, timing: bool = False) -> dict:
        out = asdict(self)
        if not timing:
            del out["wall_time"]
        return out


def _orthonormal(rng, rows, cols, corr=0.0, center=False):
    a = rng.standard_normal((rows, cols))
    if corr:
        a = lfilter([math.sqrt(1 - corr * corr)], [1.0, -corr], a, axis=0)
    if center:
        a -= a.mean(axis=0)
    q, r = np.linalg.qr(a)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def spectrum(spec: SynthSpec) -> np.ndarray:
    j = np.arange(1, spec.d + 1)
    return math.sqrt(spec.s) * np.exp(-spec.rho * j)


def synth_keys(spec: SynthSpec) -> np.ndarray:
    """``U diag(sqrt(s) exp(-rho j)) V^T + mean`` with seeded random orthonormal factors.

    ``U`` has zero-mean columns, so centering recovers the constructed
    spectrum exactly.
    """
    rng = np.random.default_rng(spec.seed)
    lam = spectrum(spec)
    u = _orthonormal(rng, spec.s, spec.d, spec.token_corr, center=True)
    v = _orthonormal(rng, spec.d, spec.d)
    direction = rng.standard_normal(spec.d)
    row_rms = math.sqrt(np.sum(lam**2) / spec.s)
    mean = direction / np.linalg.norm(direction) * spec.mean_scale * row_rms
    return (u * lam) @ v.T + mean


def synth_values_queries(spec: SynthSpec, keys, m: int = 16, sharpness: float = 8.0, d_v: int | None = None):
    """Gaussian value cache and ``m`` queries aimed at random tokens.

    A query for token ``t`` is ``sharpness * sqrt(d) * kc_t / |kc_t|**2`` on
    the centered keys, so its logit against token ``t`` sits ``sharpness``
    above the mean logit.
    """
    rng = np.random.default_rng([spec.seed, 1])
    d_v = spec.d if d_v is None else d_v
    values = rng.standard_normal((spec.s, d_v))
    targets = rng.integers(0, spec.s, size=m)
    kc = keys - keys.mean(axis=0)
    rows = kc[targets]
    norms = np.sum(rows * rows, axis=1, keepdims=True)
    queries = sharpness * math.sqrt(spec.d) * rows / np.where(norms > 0, norms, 1.0)
    return values, queries


def attention_weights(queries, keys) -> np.ndarray:
    """Row-stochastic softmax weights, one query row at a time.

    Each row is computed independently so results do not depend on how
    queries are batched, which keeps dense and sparse paths bit-comparable.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    k = np.asarray(keys, dtype=np.float64)
    if q.shape[1] != k.shape[1]:
        raise DataError(f"query dim {q.shape[1]} != key dim {k.shape[1]}")
    scale = math.sqrt(k.shape[1])
    w = np.empty((q.shape[0], k.shape[0]))
    for i, qi in enumerate(q):
        logits = k @ qi / scale
        e = np.exp(logits - logits.max())
        w[i] = e / e.sum()
    return w


def exact_attention(queries, keys, values, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d)) V`` with max-subtracted logits."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != np.asarray(keys).shape[0]:
        raise DataError(f"values shape {v.shape} does not match keys")
    w = attention_weights(queries, keys)
    out = np.stack([wi @ v for wi in w])
    return (out, w) if return_weights else out


def _attend(queries, keys, values, token_sets):
    """Per-query attention over each query's token subset; weights scattered to full length."""
    m, s = len(queries), keys.shape[0]
    out = np.empty((m, values.shape[1]))
    weights = np.zeros((m, s))
    for i, idx in enumerate(token_sets):
        o, w = exact_attention(queries[i], keys[idx], values[idx], return_weights=True)
        out[i] = o[0]
        weights[i, idx] = w[0]
    return out, weights


def _cosine_rows(a, b):
    num = np.sum(a * b, axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return float(np.mean(num / np.where(den > 0, den, 1.0)))


def direct_quantize(k, bits: int) -> np.ndarray:
    """Per-channel asymmetric quantization in the original key space, round-tripped."""
    k = np.asarray(k, dtype=np.float64)
    cols = np.ascontiguousarray(k.T)
    lo, hi = cols.min(axis=1), cols.max(axis=1)
    codes = _backend.kernels.quantize(cols, lo, hi, bits)
    return _backend.kernels.dequantize(codes, lo, hi, bits).T


def run_eval(
    spec: SynthSpec,
    schedule: BitSchedule,
    sparsity_k: int | None = None,
    v_bits: int | None = None,
    chunk_size: int = 8,
    tau: float = sparsity.DEFAULT_TAU,
    queries: int = 16,
    direct_bits: int | None = None,
) -> list[EvalRecord]:
    """Default / direct / SVDq rows, plus optional sparsity and value-quantization rows.

    The direct comparator defaults to ``ceil(equivalent bits)``.
    """
    if schedule.channel_dim != spec.d:
        raise ConfigError(f"schedule is for d={schedule.channel_dim}, cache has d={spec.d}")
    keys = synth_keys(spec)
    values, q = synth_values_queries(spec, keys, m=queries)
    exact_out, exact_w = exact_attention(q, keys, values, return_weights=True)
    full = [np.arange(spec.s)] * len(q)
    bbar = schedule.equivalent_bits
    if bbar == 0:
        raise ConfigError("schedule truncates every channel; nothing to evaluate")
    if direct_bits is None:
        direct_bits = max(1, math.ceil(bbar))
    records = []

    def record(method, bits, cr, sr, k_hat, v_used, sets, t0):
        out, w = _attend(q, k_hat, v_used, sets)
        records.append(EvalRecord(
            method=method,
            bits=float(bits),
            compression_ratio=float(cr),
            sparsity_ratio=float(sr),
            rel_frob=errmodel.measure_mse(keys, k_hat)[1],
            attn_max_abs_err=float(np.max(np.abs(w - exact_w))),
            output_cosine=_cosine_rows(out, exact_out),
            wall_time=time.perf_counter() - t0,
        ))
        return out

    t0 = time.perf_counter()
    k16 = keys.astype(np.float16).astype(np.float64)
    v16 = values.astype(np.float16).astype(np.float64)
    record("Default", 16, 1.0, 1.0, k16, v16, full, t0)

    t0 = time.perf_counter()
    record("Per-channel Quant", direct_bits, pipeline.compression_ratio(direct_bits), 1.0,
           direct_quantize(keys, direct_bits), values, full, t0)

    t0 = time.perf_counter()
    k_hat = pipeline.decompress(pipeline.compress(keys, schedule))
    svdq_time = time.perf_counter() - t0
    cr = pipeline.compression_ratio(bbar)
    record("SVDq", bbar, cr, 1.0, k_hat, values, full, t0)

    sets, sr, label = full, 1.0, "SVDq"
    if sparsity_k is not None:
        t0 = time.perf_counter() - svdq_time
        index = sparsity.build_index(keys, chunk_size, tau)
        sets = [sparsity.token_indices(
            sparsity.select_chunks(sparsity.score_chunks(qi, index), sparsity_k, index), index)
            for qi in q]
        sr = spec.s * len(q) / sum(len(t) for t in sets)
        label = "SVDq+Sparsity"
        record(label, bbar, cr * sr, sr, k_hat, values, sets, t0)

    if v_bits is not None:
        t0 = time.perf_counter() - svdq_time
        v_hat = dequantize_values(quantize_values_per_token(values, v_bits))
        record(f"{label}+V{v_bits}", bbar, cr * sr, sr, k_hat, v_hat, sets, t0)
    return records
