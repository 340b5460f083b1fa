"""Pure numpy implementations of the quantization and bit-packing kernels.

These are the reference for ``_ckernels.pyx``; both must agree bit for bit.
All 2-D arguments are laid out one channel (or token) per row.
"""
import numpy as np


def quantize(values, lo, hi, bits):
    values = np.asarray(values, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)[:, None]
    hi = np.asarray(hi, dtype=np.float64)[:, None]
    levels = float((1 << bits) - 1)
    width = hi - lo
    degenerate = width == 0.0
    scale = levels / np.where(degenerate, 1.0, width)
    codes = np.rint((values - lo) * scale)
    np.clip(codes, 0.0, levels, out=codes)
    codes[np.broadcast_to(degenerate, codes.shape)] = 0.0
    return codes.astype(np.uint8)


def dequantize(codes, lo, hi, bits):
    levels = float((1 << bits) - 1)
    t = np.asarray(codes, dtype=np.float64) / levels
    lo = np.asarray(lo, dtype=np.float64)[:, None]
    hi = np.asarray(hi, dtype=np.float64)[:, None]
    # lerp form keeps both endpoints exact
    return lo * (1.0 - t) + hi * t


def pack(codes, bits):
    codes = np.asarray(codes, dtype=np.uint8)
    rows, n = codes.shape
    nbytes = (n * bits + 7) // 8
    shifts = np.arange(bits, dtype=np.uint8)
    stream = ((codes[:, :, None] >> shifts) & 1).reshape(rows, n * bits)
    padded = np.zeros((rows, nbytes * 8), dtype=np.uint8)
    padded[:, : n * bits] = stream
    return np.packbits(padded, axis=1, bitorder="little")


def unpack(packed, bits, n):
    packed = np.asarray(packed, dtype=np.uint8)
    rows = packed.shape[0]
    stream = np.unpackbits(packed, axis=1, bitorder="little")[:, : n * bits]
    weights = (1 << np.arange(bits, dtype=np.uint16)).astype(np.uint16)
    codes = stream.reshape(rows, n, bits).astype(np.uint16) @ weights
    return codes.astype(np.uint8)
