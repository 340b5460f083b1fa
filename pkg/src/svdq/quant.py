"""Per-channel asymmetric min-max quantization and bit packing.

Codes for a ``b``-bit channel live in ``[0, 2**b - 1]``. Packed streams are
channel-major: each channel's codes are contiguous, least-significant bit
first within a byte, and every channel is zero-padded to a byte boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConfigError, DataError

ALLOWED_BITS = (0, 1, 2, 3, 4, 8)


@dataclass(frozen=True)
class BitSchedule:
    """Bit widths for ``G`` equal-sized groups of latent channels.

    Widths must be non-increasing: earlier latent channels carry more energy
    and get more precision. A width of 0 truncates the group.
    """

    group_bits: tuple[int, ...]
    channel_dim: int

    def __post_init__(self):
        bits = tuple(int(b) for b in self.group_bits)
        object.__setattr__(self, "group_bits", bits)
        if not bits:
            raise ConfigError("schedule needs at least one group")
        if self.channel_dim < 1:
            raise ConfigError(f"channel_dim must be positive, got {self.channel_dim}")
        bad = [b for b in bits if b not in ALLOWED_BITS]
        if bad:
            raise ConfigError(f"bit widths {bad} not in {ALLOWED_BITS}")
        if any(a < b for a, b in zip(bits, bits[1:])):
            raise ConfigError(f"schedule {bits} must be non-increasing")
        if self.channel_dim % len(bits):
            raise ConfigError(
                f"channel_dim {self.channel_dim} not divisible by group count {len(bits)}"
            )

    @property
    def group_count(self) -> int:
        return len(self.group_bits)

    @property
    def group_size(self) -> int:
        return self.channel_dim // self.group_count

    @property
    def equivalent_bits(self) -> float:
        return equivalent_bits(self)

    def channel_bits(self) -> np.ndarray:
        """Width of every latent channel, length ``channel_dim``."""
        return np.repeat(np.array(self.group_bits, dtype=np.int64), self.group_size)

    def retained_channels(self) -> int:
        return int(np.count_nonzero(self.channel_bits()))


def equivalent_bits(schedule: BitSchedule) -> float:
    return sum(schedule.group_bits) / schedule.group_count


@dataclass(frozen=True)
class QuantizedChannels:
    """Quantized latent matrix.

    ``ch_min``/``ch_max`` hold one entry per *retained* channel (width > 0),
    in channel order; truncated channels store nothing.
    """

    payload: bytes
    ch_min: np.ndarray
    ch_max: np.ndarray
    schedule: BitSchedule
    s: int

    @property
    def payload_bits(self) -> int:
        return self.s * int(self.schedule.channel_bits().sum())


@dataclass(frozen=True)
class QuantizedValueCache:
    payload: bytes
    row_min: np.ndarray
    row_max: np.ndarray
    s: int
    d_v: int
    bits: int

    @property
    def payload_bits(self) -> int:
        return self.s * self.d_v * self.bits


def _check_bits(b, allow_zero=False):
    if b not in ALLOWED_BITS or (b == 0 and not allow_zero):
        raise ConfigError(f"bit width {b} not supported; use one of {ALLOWED_BITS[1:]}")


def _finite(x, what):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError(f"{what} contains non-finite values")
    return x


def packed_nbytes(n: int, bits: int) -> int:
    return (n * bits + 7) // 8


def quantize_channel(values, b: int):
    """Quantize one channel. Returns ``(codes, lo, hi)`` with lo/hi its min/max."""
    _check_bits(b)
    x = _finite(values, "channel").ravel()
    if x.size == 0:
        raise DataError("empty channel")
    lo, hi = float(x.min()), float(x.max())
    codes = _backend.kernels.quantize(x[None, :], [lo], [hi], b)[0]
    return codes, lo, hi


def dequantize_channel(codes, b: int, lo: float, hi: float) -> np.ndarray:
    _check_bits(b)
    c = np.asarray(codes)
    if c.size and (c.min() < 0 or c.max() > (1 << b) - 1):
        raise DataError(f"code outside [0, {(1 << b) - 1}] for {b}-bit channel")
    c = c.astype(np.uint8).ravel()
    return _backend.kernels.dequantize(c[None, :], [lo], [hi], b)[0]


def pack_codes(codes, b: int) -> bytes:
    """Pack one channel of ``b``-bit codes, LSB first, zero-padded to a byte."""
    _check_bits(b)
    c = np.asarray(codes)
    if c.size and (c.min() < 0 or c.max() > (1 << b) - 1):
        raise DataError(f"code outside [0, {(1 << b) - 1}] for {b}-bit packing")
    return _backend.kernels.pack(c.astype(np.uint8).reshape(1, -1), b).tobytes()


def unpack_codes(data: bytes, b: int, s: int) -> np.ndarray:
    _check_bits(b)
    need = packed_nbytes(s, b)
    if len(data) != need:
        raise DataError(f"packed stream has {len(data)} bytes, expected {need}")
    buf = np.frombuffer(data, dtype=np.uint8).reshape(1, need)
    _check_padding(buf, b, s)
    return _backend.kernels.unpack(buf, b, s)[0]


def _check_padding(buf, b, s):
    used = (s * b) % 8
    if used and buf.shape[1] and np.any(buf[:, -1] >> used):
        raise DataError("non-zero padding bits in packed stream")


def _round_out(lo, hi):
    """Widen ranges to float32-representable bounds so storage is lossless."""
    lo32 = lo.astype(np.float32)
    hi32 = hi.astype(np.float32)
    lo32 = np.where(lo32.astype(np.float64) > lo, np.nextafter(lo32, np.float32(-np.inf)), lo32)
    hi32 = np.where(hi32.astype(np.float64) < hi, np.nextafter(hi32, np.float32(np.inf)), hi32)
    return lo32.astype(np.float64), hi32.astype(np.float64)


def quantize_latent(latent, schedule: BitSchedule) -> QuantizedChannels:
    """Quantize latent channel ``j`` at its group's width; 0-bit groups are dropped.

    Channel ranges are widened to float32-representable values so that a
    persisted cache decodes exactly like the in-memory one.
    """
    p = _finite(latent, "latent matrix")
    if p.ndim != 2 or p.shape[1] != schedule.channel_dim:
        raise DataError(
            f"latent shape {p.shape} does not match schedule channel_dim {schedule.channel_dim}"
        )
    s = p.shape[0]
    gs = schedule.group_size
    chunks, mins, maxs = [], [], []
    for g, b in enumerate(schedule.group_bits):
        if b == 0:
            continue
        block = np.ascontiguousarray(p[:, g * gs:(g + 1) * gs].T)
        lo, hi = _round_out(block.min(axis=1), block.max(axis=1))
        if not np.all(np.isfinite(hi - lo)):
            raise DataError("latent channel range overflows")
        codes = _backend.kernels.quantize(block, lo, hi, b)
        chunks.append(_backend.kernels.pack(codes, b).tobytes())
        mins.append(lo)
        maxs.append(hi)
    empty = np.zeros(0, dtype=np.float64)
    return QuantizedChannels(
        payload=b"".join(chunks),
        ch_min=np.concatenate(mins) if mins else empty,
        ch_max=np.concatenate(maxs) if maxs else empty,
        schedule=schedule,
        s=s,
    )


def expected_payload_bytes(schedule: BitSchedule, s: int) -> int:
    return schedule.group_size * sum(packed_nbytes(s, b) for b in schedule.group_bits)


def dequantize_latent(q: QuantizedChannels) -> np.ndarray:
    """Rebuild the ``s x d`` latent matrix; truncated channels are zero."""
    schedule, s = q.schedule, q.s
    need = expected_payload_bytes(schedule, s)
    if len(q.payload) != need:
        raise DataError(f"payload has {len(q.payload)} bytes, expected {need}")
    retained = schedule.retained_channels()
    if len(q.ch_min) != retained or len(q.ch_max) != retained:
        raise DataError(f"expected {retained} channel ranges, got {len(q.ch_min)}/{len(q.ch_max)}")
    out = np.zeros((s, schedule.channel_dim), dtype=np.float64)
    buf = np.frombuffer(q.payload, dtype=np.uint8)
    gs = schedule.group_size
    offset = 0
    ch = 0
    for g, b in enumerate(schedule.group_bits):
        if b == 0:
            continue
        per = packed_nbytes(s, b)
        block = buf[offset:offset + per * gs].reshape(gs, per)
        offset += per * gs
        _check_padding(block, b, s)
        codes = _backend.kernels.unpack(block, b, s)
        vals = _backend.kernels.dequantize(codes, q.ch_min[ch:ch + gs], q.ch_max[ch:ch + gs], b)
        out[:, g * gs:(g + 1) * gs] = vals.T
        ch += gs
    return out


def quantize_values_per_token(v, b: int = 4) -> QuantizedValueCache:
    """Asymmetric quantization of a value cache along the token axis."""
    _check_bits(b)
    x = _finite(v, "value cache")
    if x.ndim != 2 or x.size == 0:
        raise DataError(f"value cache must be a non-empty 2-D matrix, got shape {x.shape}")
    x = np.ascontiguousarray(x)
    lo, hi = x.min(axis=1), x.max(axis=1)
    codes = _backend.kernels.quantize(x, lo, hi, b)
    return QuantizedValueCache(
        payload=_backend.kernels.pack(codes, b).tobytes(),
        row_min=lo,
        row_max=hi,
        s=x.shape[0],
        d_v=x.shape[1],
        bits=b,
    )


def dequantize_values(qv: QuantizedValueCache) -> np.ndarray:
    per = packed_nbytes(qv.d_v, qv.bits)
    if len(qv.payload) != per * qv.s:
        raise DataError(f"value payload has {len(qv.payload)} bytes, expected {per * qv.s}")
    buf = np.frombuffer(qv.payload, dtype=np.uint8).reshape(qv.s, per)
    _check_padding(buf, qv.bits, qv.d_v)
    codes = _backend.kernels.unpack(buf, qv.bits, qv.d_v)
    return _backend.kernels.dequantize(codes, qv.row_min, qv.row_max, qv.bits)
