# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled quantization and bit-packing kernels.

Mirrors ``_pykernels`` operation for operation so results are bit-identical.
Build with ``-ffp-contract=off``: a fused multiply-add would change rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport rint
from libc.stdint cimport uint8_t, uint64_t

cnp.import_array()


def quantize(values, lo, hi, int bits):
    cdef const double[:, ::1] x = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[::1] lo_v = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[::1] hi_v = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], r, i
    out = np.empty((rows, n), dtype=np.uint8)
    cdef uint8_t[:, ::1] codes = out
    cdef double levels = <double>((1 << bits) - 1)
    cdef double width, scale, q, base
    with nogil:
        for r in range(rows):
            base = lo_v[r]
            width = hi_v[r] - base
            if width == 0.0:
                for i in range(n):
                    codes[r, i] = 0
                continue
            scale = levels / width
            for i in range(n):
                q = rint((x[r, i] - base) * scale)
                if q < 0.0:
                    q = 0.0
                elif q > levels:
                    q = levels
                codes[r, i] = <uint8_t>q
    return out


def dequantize(codes, lo, hi, int bits):
    cdef const uint8_t[:, ::1] c = np.ascontiguousarray(codes, dtype=np.uint8)
    cdef const double[::1] lo_v = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[::1] hi_v = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t rows = c.shape[0], n = c.shape[1], r, i
    out = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double levels = <double>((1 << bits) - 1)
    cdef double t, a, b
    with nogil:
        for r in range(rows):
            a = lo_v[r]
            b = hi_v[r]
            for i in range(n):
                t = <double>c[r, i] / levels
                y[r, i] = a * (1.0 - t) + b * t
    return out


def pack(codes, int bits):
    cdef const uint8_t[:, ::1] c = np.ascontiguousarray(codes, dtype=np.uint8)
    cdef Py_ssize_t rows = c.shape[0], n = c.shape[1], r, i, pos
    cdef Py_ssize_t nbytes = (n * bits + 7) // 8
    out = np.zeros((rows, nbytes), dtype=np.uint8)
    cdef uint8_t[:, ::1] o = out
    cdef uint64_t acc
    cdef int filled
    cdef uint64_t mask = (1 << bits) - 1
    cdef int per = 8 // bits if 8 % bits == 0 else 0
    cdef int t
    cdef uint8_t byte
    with nogil:
        if per:
            # whole codes per byte: build each byte directly
            for r in range(rows):
                for pos in range(nbytes):
                    byte = 0
                    i = pos * per
                    for t in range(per):
                        if i + t < n:
                            byte |= <uint8_t>((c[r, i + t] & mask) << (t * bits))
                    o[r, pos] = byte
        else:
            for r in range(rows):
                acc = 0
                filled = 0
                pos = 0
                for i in range(n):
                    acc |= (<uint64_t>c[r, i] & mask) << filled
                    filled += bits
                    if filled >= 8:  # bits <= 8, so at most one byte is ready
                        o[r, pos] = <uint8_t>(acc & 0xFF)
                        pos += 1
                        acc >>= 8
                        filled -= 8
                if filled > 0:
                    o[r, pos] = <uint8_t>(acc & 0xFF)
    return out


def unpack(packed, int bits, Py_ssize_t n):
    cdef const uint8_t[:, ::1] p = np.ascontiguousarray(packed, dtype=np.uint8)
    cdef Py_ssize_t rows = p.shape[0], r, i, pos
    out = np.empty((rows, n), dtype=np.uint8)
    cdef uint8_t[:, ::1] o = out
    cdef uint64_t acc
    cdef int filled
    cdef uint64_t mask = (1 << bits) - 1
    with nogil:
        for r in range(rows):
            acc = 0
            filled = 0
            pos = 0
            for i in range(n):
                if filled < bits:  # one byte always suffices for bits <= 8
                    acc |= (<uint64_t>p[r, pos]) << filled
                    pos += 1
                    filled += 8
                o[r, i] = <uint8_t>(acc & mask)
                acc >>= bits
                filled -= bits
    return out
