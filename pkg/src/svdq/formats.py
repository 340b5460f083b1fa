"""Binary file formats for dense key matrices (KMAT) and compressed caches (SVDQ).

All integers are little-endian, floats IEEE-754 float32 little-endian. Both
formats end with a CRC-32 (zlib polynomial) of every preceding byte.

KMAT::

    "KMAT" | u32 version=1 | u64 s | u64 d | u8 dtype=0 | f32[s*d] row-major | u32 crc

SVDQ::

    "SVDQ" | u32 version=1 | u64 s | u64 d | u32 G | u8[G] group bits
    | f32[d] mean | f32[d*d] basis, column-major
    | f32[R] ch_min | f32[R] ch_max          (R = retained channels)
    | packed codes, channel-major, LSB-first, byte-padded per channel
    | u32 crc
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .pipeline import CompressedKeyCache
from .quant import BitSchedule, QuantizedChannels, expected_payload_bytes, packed_nbytes

KMAT_MAGIC = b"KMAT"
SVDQ_MAGIC = b"SVDQ"
VERSION = 1

_KMAT_HEAD = struct.Struct("<4sIQQB")
_SVDQ_HEAD = struct.Struct("<4sIQQI")
_CRC = struct.Struct("<I")


def _seal(body: bytes) -> bytes:
    return body + _CRC.pack(zlib.crc32(body))


def _unseal(data: bytes, magic: bytes, min_len: int) -> bytes:
    if len(data) < min_len + _CRC.size:
        raise FormatError(f"file too short ({len(data)} bytes)")
    if data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}")
    body, (crc,) = data[:-4], _CRC.unpack(data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch; file is corrupted")
    return body


def _floats(buf: bytes, offset: int, count: int, what: str) -> np.ndarray:
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"non-finite values in {what}")
    return arr


def encode_kmat(k) -> bytes:
    k = np.asarray(k)
    if k.ndim != 2 or k.shape[0] < 1 or k.shape[1] < 1:
        raise DataError(f"key matrix must be a non-empty 2-D array, got shape {k.shape}")
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(k, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise DataError("key matrix has values that are not finite in float32")
    s, d = payload.shape
    return _seal(_KMAT_HEAD.pack(KMAT_MAGIC, VERSION, s, d, 0) + payload.tobytes())


def decode_kmat(data: bytes) -> np.ndarray:
    body = _unseal(data, KMAT_MAGIC, _KMAT_HEAD.size)
    _, version, s, d, dtype = _KMAT_HEAD.unpack_from(body)
    if version != VERSION:
        raise FormatError(f"unsupported KMAT version {version}")
    if dtype != 0:
        raise FormatError(f"unsupported KMAT dtype {dtype}")
    if s < 1 or d < 1:
        raise FormatError(f"empty matrix {s} x {d}")
    if len(body) != _KMAT_HEAD.size + 4 * s * d:
        raise FormatError(f"payload length {len(body) - _KMAT_HEAD.size} != 4 * {s} * {d}")
    return _floats(body, _KMAT_HEAD.size, s * d, "KMAT payload").reshape(s, d)


def encode_svdq(c: CompressedKeyCache) -> bytes:
    sched = c.schedule
    parts = [
        _SVDQ_HEAD.pack(SVDQ_MAGIC, VERSION, c.s, c.d, sched.group_count),
        bytes(sched.group_bits),
        np.asarray(c.mean, dtype="<f4").tobytes(),
        np.asarray(c.basis, dtype="<f4").tobytes(order="F"),
        np.asarray(c.q.ch_min, dtype="<f4").tobytes(),
        np.asarray(c.q.ch_max, dtype="<f4").tobytes(),
        c.q.payload,
    ]
    return _seal(b"".join(parts))


def decode_svdq(data: bytes) -> CompressedKeyCache:
    body = _unseal(data, SVDQ_MAGIC, _SVDQ_HEAD.size)
    _, version, s, d, groups = _SVDQ_HEAD.unpack_from(body)
    if version != VERSION:
        raise FormatError(f"unsupported SVDQ version {version}")
    if s < 1 or d < 1 or groups < 1:
        raise FormatError(f"bad dimensions s={s}, d={d}, G={groups}")
    pos = _SVDQ_HEAD.size
    if len(body) < pos + groups:
        raise FormatError("truncated group bit table")
    bits = tuple(body[pos:pos + groups])
    pos += groups
    try:
        sched = BitSchedule(bits, d)
    except ConfigError as exc:
        raise FormatError(f"invalid stored schedule: {exc}") from None
    retained = sched.retained_channels()
    payload_len = expected_payload_bytes(sched, s)
    expect = pos + 4 * (d + d * d + 2 * retained) + payload_len
    if len(body) != expect:
        raise FormatError(f"file body is {len(body)} bytes, layout needs {expect}")
    mean = _floats(body, pos, d, "mean")
    pos += 4 * d
    basis = _floats(body, pos, d * d, "basis").reshape(d, d, order="F")
    pos += 4 * d * d
    ch_min = _floats(body, pos, retained, "ch_min")
    pos += 4 * retained
    ch_max = _floats(body, pos, retained, "ch_max")
    pos += 4 * retained
    if np.any(ch_min > ch_max):
        raise FormatError("channel range with min > max")
    payload = bytes(body[pos:])
    _check_payload_padding(payload, sched, s)
    q = QuantizedChannels(payload=payload, ch_min=ch_min, ch_max=ch_max, schedule=sched, s=s)
    return CompressedKeyCache(mean=mean, basis=basis, q=q, s=s, d=d)


def _check_payload_padding(payload: bytes, sched: BitSchedule, s: int):
    buf = np.frombuffer(payload, dtype=np.uint8)
    offset = 0
    for b in sched.group_bits:
        if b == 0:
            continue
        per = packed_nbytes(s, b)
        used = (s * b) % 8
        block = buf[offset:offset + per * sched.group_size].reshape(sched.group_size, per)
        offset += per * sched.group_size
        if used and np.any(block[:, -1] >> used):
            raise FormatError("non-zero padding bits in code stream")


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the target directory and rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def write_kmat(path, k) -> None:
    atomic_write(path, encode_kmat(k))


def read_kmat(path) -> np.ndarray:
    return decode_kmat(read_bytes(path))


def write_svdq(path, c: CompressedKeyCache) -> None:
    atomic_write(path, encode_svdq(c))


def read_svdq(path) -> CompressedKeyCache:
    return decode_svdq(read_bytes(path))
