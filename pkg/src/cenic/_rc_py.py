"""Pure-Python range coder backend.

32-bit carry-aware range coder with byte-wise renormalization (the classic
cache/pending-byte scheme). Cumulative-count tables are 16-bit (total
65536). The compiled backend in ``_rc.pyx`` implements the identical
integer algorithm; both produce byte-identical streams.
"""

import numpy as np

from .errors import DecodeError, EncodeError

TOP = 1 << 24
TOTAL = 1 << 16
MASK32 = 0xFFFFFFFF
RAW_BIAS = 1 << 15

BACKEND = "python"


class RangeEncoder:
    """Single-owner encoder; feed symbol chunks, then call finish() once."""

    def __init__(self):
        self._low = 0
        self._range = MASK32
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._done = False

    def _shift_low(self):
        low = self._low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            out = self._out
            out.append((self._cache + carry) & 0xFF)
            filler = (0xFF + carry) & 0xFF
            for _ in range(self._cache_size - 1):
                out.append(filler)
            self._cache = (low >> 24) & 0xFF
            self._cache_size = 0
        self._cache_size += 1
        self._low = (low << 8) & MASK32

    def _encode(self, start, freq):
        r = self._range >> 16
        self._low += start * r
        self._range = r * freq
        while self._range < TOP:
            self._range <<= 8
            self._shift_low()

    def _encode_byte(self, b):
        self._encode(b << 8, 256)

    def encode_indices(self, indices, cums):
        """Encode raw alphabet indices against per-symbol cumulative rows."""
        shared = cums.shape[0] == 1
        for i, idx in enumerate(indices):
            row = cums[0] if shared else cums[i]
            self._encode(int(row[idx]), int(row[idx + 1]) - int(row[idx]))

    def encode_values(self, values, cums, limit):
        """Encode integer values; out-of-range ones escape to a raw 16-bit word."""
        shared = cums.shape[0] == 1
        esc = 2 * limit + 1
        for i, v in enumerate(values):
            row = cums[0] if shared else cums[i]
            v = int(v)
            if -limit <= v <= limit:
                idx = v + limit
                self._encode(int(row[idx]), int(row[idx + 1]) - int(row[idx]))
            else:
                if not -RAW_BIAS <= v < RAW_BIAS:
                    raise EncodeError(f"symbol {v} outside raw 16-bit fallback range")
                self._encode(int(row[esc]), int(row[esc + 1]) - int(row[esc]))
                raw = v + RAW_BIAS
                self._encode_byte(raw >> 8)
                self._encode_byte(raw & 0xFF)

    def finish(self):
        if self._done:
            raise EncodeError("encoder already finished")
        self._done = True
        for _ in range(5):
            self._shift_low()
        return bytes(self._out)


class RangeDecoder:
    """Single-owner decoder over one encoded byte string."""

    def __init__(self, data):
        self._data = data
        self._pos = 0
        self._range = MASK32
        self._code = 0
        self._next()  # leading cache byte, always skipped
        for _ in range(4):
            self._code = (self._code << 8) | self._next()

    def _next(self):
        if self._pos >= len(self._data):
            raise DecodeError("truncated range-coded stream")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def _consume(self, start, freq, r):
        self._code -= start * r
        self._range = r * freq
        while self._range < TOP:
            self._code = ((self._code << 8) | self._next()) & MASK32
            self._range <<= 8

    def _decode_index(self, row):
        r = self._range >> 16
        val = self._code // r
        if val >= TOTAL:
            val = TOTAL - 1
        idx = int(np.searchsorted(row, val, side="right")) - 1
        self._consume(int(row[idx]), int(row[idx + 1]) - int(row[idx]), r)
        return idx

    def _decode_byte(self):
        r = self._range >> 16
        val = self._code // r
        if val >= TOTAL:
            val = TOTAL - 1
        b = val >> 8
        self._consume(b << 8, 256, r)
        return b

    def decode_indices(self, n, cums):
        shared = cums.shape[0] == 1
        out = np.empty(n, dtype=np.int32)
        for i in range(n):
            out[i] = self._decode_index(cums[0] if shared else cums[i])
        return out

    def decode_values(self, n, cums, limit):
        shared = cums.shape[0] == 1
        esc = 2 * limit + 1
        out = np.empty(n, dtype=np.int32)
        for i in range(n):
            idx = self._decode_index(cums[0] if shared else cums[i])
            if idx == esc:
                raw = (self._decode_byte() << 8) | self._decode_byte()
                out[i] = raw - RAW_BIAS
            else:
                out[i] = idx - limit
        return out
