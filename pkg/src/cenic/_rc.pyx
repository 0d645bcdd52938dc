# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled range coder backend.

Bit-exact twin of ``_rc_py``: same 32-bit carry-aware coder, same table
format, byte-identical output. Only the inner symbol loops differ (C
integer arithmetic instead of Python objects).
"""

from libc.stdint cimport int32_t, uint8_t, uint32_t, uint64_t

import numpy as np

from .errors import DecodeError, EncodeError

cdef enum:
    TOP = 16777216          # 1 << 24
    TOTAL = 65536           # 1 << 16
    RAW_BIAS = 32768

BACKEND = "cython"


cdef class RangeEncoder:
    cdef uint64_t _low
    cdef uint32_t _range
    cdef uint32_t _cache
    cdef uint64_t _cache_size
    cdef bytearray _out
    cdef bint _done

    def __cinit__(self):
        self._low = 0
        self._range = 0xFFFFFFFF
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._done = False

    cdef inline void _shift_low(self):
        cdef uint32_t carry
        cdef uint8_t filler
        cdef uint64_t i
        if self._low < <uint64_t>0xFF000000 or self._low > <uint64_t>0xFFFFFFFF:
            carry = <uint32_t>(self._low >> 32)
            self._out.append(<uint8_t>((self._cache + carry) & 0xFF))
            filler = <uint8_t>((0xFF + carry) & 0xFF)
            for i in range(self._cache_size - 1):
                self._out.append(filler)
            self._cache = <uint32_t>((self._low >> 24) & 0xFF)
            self._cache_size = 0
        self._cache_size += 1
        self._low = (self._low << 8) & <uint64_t>0xFFFFFFFF

    cdef inline void _encode(self, uint32_t start, uint32_t freq):
        cdef uint32_t r = self._range >> 16
        self._low += <uint64_t>start * r
        self._range = r * freq
        while self._range < TOP:
            self._range <<= 8
            self._shift_low()

    def encode_indices(self, indices, cums):
        cdef int32_t[:] idx = np.ascontiguousarray(indices, dtype=np.int32)
        cdef uint32_t[:, :] c = np.ascontiguousarray(cums, dtype=np.uint32)
        cdef bint shared = c.shape[0] == 1
        cdef Py_ssize_t i, row
        cdef int32_t k
        for i in range(idx.shape[0]):
            row = 0 if shared else i
            k = idx[i]
            self._encode(c[row, k], c[row, k + 1] - c[row, k])

    def encode_values(self, values, cums, int limit):
        cdef int32_t[:] vals = np.ascontiguousarray(values, dtype=np.int32)
        cdef uint32_t[:, :] c = np.ascontiguousarray(cums, dtype=np.uint32)
        cdef bint shared = c.shape[0] == 1
        cdef int esc = 2 * limit + 1
        cdef Py_ssize_t i, row
        cdef int32_t v
        cdef int idx, raw
        for i in range(vals.shape[0]):
            row = 0 if shared else i
            v = vals[i]
            if -limit <= v <= limit:
                idx = v + limit
                self._encode(c[row, idx], c[row, idx + 1] - c[row, idx])
            else:
                if v < -RAW_BIAS or v >= RAW_BIAS:
                    raise EncodeError(
                        f"symbol {v} outside raw 16-bit fallback range"
                    )
                self._encode(c[row, esc], c[row, esc + 1] - c[row, esc])
                raw = v + RAW_BIAS
                self._encode(<uint32_t>((raw >> 8) << 8), 256)
                self._encode(<uint32_t>((raw & 0xFF) << 8), 256)

    def finish(self):
        cdef int i
        if self._done:
            raise EncodeError("encoder already finished")
        self._done = True
        for i in range(5):
            self._shift_low()
        return bytes(self._out)


cdef class RangeDecoder:
    cdef const uint8_t[:] _data
    cdef object _keep
    cdef Py_ssize_t _pos
    cdef uint32_t _range
    cdef uint32_t _code

    def __cinit__(self, data):
        cdef int i
        self._keep = data
        self._data = data
        self._pos = 0
        self._range = 0xFFFFFFFF
        self._code = 0
        self._next()
        for i in range(4):
            self._code = (self._code << 8) | self._next()

    cdef inline uint32_t _next(self) except? 0xFFFFFFFF:
        cdef uint32_t b
        if self._pos >= self._data.shape[0]:
            raise DecodeError("truncated range-coded stream")
        b = self._data[self._pos]
        self._pos += 1
        return b

    cdef inline int _consume(self, uint32_t start, uint32_t freq, uint32_t r) except -1:
        self._code -= start * r
        self._range = r * freq
        while self._range < TOP:
            self._code = (self._code << 8) | self._next()
            self._range <<= 8
        return 0

    cdef inline int _decode_index(self, const uint32_t[:, :] c, Py_ssize_t row, int n) except -1:
        cdef uint32_t r = self._range >> 16
        cdef uint32_t val = self._code / r
        cdef int lo = 0
        cdef int hi = n
        cdef int mid
        if val >= TOTAL:
            val = TOTAL - 1
        # binary search: largest lo with c[row, lo] <= val
        while lo + 1 < hi:
            mid = (lo + hi) >> 1
            if c[row, mid] <= val:
                lo = mid
            else:
                hi = mid
        self._consume(c[row, lo], c[row, lo + 1] - c[row, lo], r)
        return lo

    cdef inline int _decode_byte(self) except -1:
        cdef uint32_t r = self._range >> 16
        cdef uint32_t val = self._code / r
        cdef uint32_t b
        if val >= TOTAL:
            val = TOTAL - 1
        b = val >> 8
        self._consume(b << 8, 256, r)
        return <int>b

    def decode_indices(self, Py_ssize_t n, cums):
        cdef uint32_t[:, :] c = np.ascontiguousarray(cums, dtype=np.uint32)
        cdef bint shared = c.shape[0] == 1
        cdef int nsym = c.shape[1] - 1
        out = np.empty(n, dtype=np.int32)
        cdef int32_t[:] o = out
        cdef Py_ssize_t i, row
        for i in range(n):
            row = 0 if shared else i
            o[i] = self._decode_index(c, row, nsym)
        return out

    def decode_values(self, Py_ssize_t n, cums, int limit):
        cdef uint32_t[:, :] c = np.ascontiguousarray(cums, dtype=np.uint32)
        cdef bint shared = c.shape[0] == 1
        cdef int nsym = c.shape[1] - 1
        cdef int esc = 2 * limit + 1
        out = np.empty(n, dtype=np.int32)
        cdef int32_t[:] o = out
        cdef Py_ssize_t i, row
        cdef int idx, raw
        for i in range(n):
            row = 0 if shared else i
            idx = self._decode_index(c, row, nsym)
            if idx == esc:
                raw = (self._decode_byte() << 8) | self._decode_byte()
                o[i] = raw - RAW_BIAS
            else:
                o[i] = idx - limit
        return out
