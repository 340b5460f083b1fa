"""Key-cache compression end to end: center, factor, project, quantize."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import keycore
from .errors import ConfigError, DataError
from .quant import (
    ALLOWED_BITS,
    BitSchedule,
    QuantizedChannels,
    dequantize_latent,
    quantize_latent,
)

HEADER_BYTES = 4 + 4 + 8 + 8 + 4  # magic, version, s, d, G
TRAILER_BYTES = 4  # crc32


@dataclass(frozen=True)
class CompressedKeyCache:
    """Everything needed to rebuild a key cache.

    ``mean`` and ``basis`` are kept at float32 precision (stored as float64
    arrays) so the in-memory cache and its file image decode identically.
    """

    mean: np.ndarray
    basis: np.ndarray
    q: QuantizedChannels
    s: int
    d: int

    @property
    def schedule(self) -> BitSchedule:
        return self.q.schedule

    @property
    def equivalent_bits(self) -> float:
        return self.q.schedule.equivalent_bits

    @property
    def payload_bytes(self) -> int:
        return len(self.q.payload)

    @property
    def side_bytes(self) -> int:
        """Bytes that depend only on ``d``: header, mean, basis, ranges, checksum."""
        g = self.schedule.group_count
        retained = self.schedule.retained_channels()
        return HEADER_BYTES + g + 4 * self.d + 4 * self.d * self.d + 8 * retained + TRAILER_BYTES


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def compress(k, schedule: BitSchedule) -> CompressedKeyCache:
    k = keycore.as_key_matrix(k)
    s, d = k.shape
    if d != schedule.channel_dim:
        raise DataError(f"key matrix has {d} channels, schedule expects {schedule.channel_dim}")
    mean, centered = keycore.center(k)
    f = keycore.svd(centered, mean)
    latent = keycore.project(centered, f.basis)
    q = quantize_latent(latent, schedule)
    return CompressedKeyCache(mean=_f32(mean), basis=_f32(f.basis), q=q, s=s, d=d)


def decompress(c: CompressedKeyCache) -> np.ndarray:
    latent = dequantize_latent(c.q)
    if latent.shape != (c.s, c.d):
        raise DataError(f"decoded latent shape {latent.shape} != ({c.s}, {c.d})")
    return keycore.reconstruct(latent, c.basis, c.mean)


def compression_ratio(equivalent_bits: float, sparsity_ratio: float = 1.0) -> float:
    """Key-cache compression against 16-bit storage: ``16 / b * sparsity_ratio``."""
    if not equivalent_bits > 0:
        raise ConfigError(f"compression ratio undefined for equivalent bits {equivalent_bits}")
    if not sparsity_ratio >= 1:
        raise ConfigError(f"sparsity ratio must be >= 1, got {sparsity_ratio}")
    return 16.0 / equivalent_bits * sparsity_ratio


def parse_schedule(text: str, d: int, groups: int = 8) -> BitSchedule:
    """Parse ``"8,4,4,2,0,0,0,0"`` into a validated schedule."""
    parts = [p.strip() for p in str(text).split(",")]
    try:
        bits = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"schedule {text!r} must be comma-separated integers") from None
    if len(bits) != groups:
        raise ConfigError(f"schedule {text!r} has {len(bits)} widths, expected {groups}")
    bad = [b for b in bits if b not in ALLOWED_BITS]
    if bad:
        raise ConfigError(f"bit widths {bad} not in {ALLOWED_BITS}")
    return BitSchedule(tuple(bits), d)
