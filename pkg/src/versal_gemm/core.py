"""Matrix types and the integer arithmetic shared by the kernels and oracles.

Accumulation follows the AIE accumulator lanes: products of two int16 values
are exact, sums wrap at 48 bits two's complement. The final store to int16
either wraps modulo 2**16 or shifts, rounds and saturates.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

INT16_MIN = -32768
INT16_MAX = 32767

ACC_BITS = 48
_ACC_MOD = 1 << ACC_BITS
_ACC_HALF = 1 << (ACC_BITS - 1)
_ACC_MASK = _ACC_MOD - 1

ACC48_MIN = -_ACC_HALF
ACC48_MAX = _ACC_HALF - 1


class DType(enum.Enum):
    INT8 = "int8"
    INT16 = "int16"
    FP32 = "fp32"

    @property
    def elem_bytes(self) -> int:
        return {DType.INT8: 1, DType.INT16: 2, DType.FP32: 4}[self]

    @classmethod
    def parse(cls, text: str) -> "DType":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown dtype {text!r}") from None


def wrap48(value):
    """Sign-normalize an integer (or int64 array) to 48-bit two's complement."""
    if isinstance(value, np.ndarray):
        v = value.astype(np.int64, copy=False)
        return ((v + _ACC_HALF) & _ACC_MASK) - _ACC_HALF
    return ((int(value) + _ACC_HALF) & _ACC_MASK) - _ACC_HALF


def acc48_mac(acc: int, a: int, b: int) -> int:
    """Return ``acc + a*b`` wrapped to 48 bits; the product itself is exact."""
    return wrap48(int(acc) + int(a) * int(b))


@dataclass(frozen=True)
class WritebackMode:
    """How an accumulator lane is stored back as int16.

    ``WRAP16`` keeps the low 16 bits. ``srs(shift)`` divides by ``2**shift``
    rounding half away from zero and clamps to the int16 range.
    """

    saturate: bool = False
    shift: int = 0

    def __post_init__(self):
        if not 0 <= self.shift < ACC_BITS:
            raise ValueError(f"shift must be in [0, {ACC_BITS}), got {self.shift}")
        if not self.saturate and self.shift != 0:
            raise ValueError("wrap mode takes no shift")

    @classmethod
    def srs(cls, shift: int = 0) -> "WritebackMode":
        return cls(saturate=True, shift=shift)

    @classmethod
    def parse(cls, text: str) -> "WritebackMode":
        """Parse ``wrap`` or ``srs:<shift>``."""
        if text == "wrap":
            return WRAP16
        if text.startswith("srs:"):
            try:
                return cls.srs(int(text[4:]))
            except ValueError as exc:
                raise ValueError(f"bad writeback mode {text!r}: {exc}") from None
        raise ValueError(f"bad writeback mode {text!r} (expected 'wrap' or 'srs:<shift>')")

    def __str__(self) -> str:
        return f"srs:{self.shift}" if self.saturate else "wrap"


WRAP16 = WritebackMode()


def writeback(acc, mode: WritebackMode = WRAP16):
    """Store accumulator value(s) as int16 under ``mode``.

    Works on a Python int (returns int) or an int64 array (returns int16 array).
    """
    if isinstance(acc, np.ndarray):
        v = wrap48(acc)
        if not mode.saturate:
            return v.astype(np.int16)
        if mode.shift:
            half = np.int64(1 << (mode.shift - 1))
            mag = (np.abs(v) + half) >> mode.shift
            v = np.where(v < 0, -mag, mag)
        return np.clip(v, INT16_MIN, INT16_MAX).astype(np.int16)

    v = wrap48(acc)
    if not mode.saturate:
        return ((v + 0x8000) & 0xFFFF) - 0x8000
    if mode.shift:
        mag = (abs(v) + (1 << (mode.shift - 1))) >> mode.shift
        v = -mag if v < 0 else mag
    return max(INT16_MIN, min(INT16_MAX, v))


@dataclass(frozen=True)
class ProblemDims:
    m: int
    n: int
    k: int

    def __post_init__(self):
        for name in ("m", "n", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def macs(self) -> int:
        return self.m * self.n * self.k


@dataclass(frozen=True)
class BlockParams:
    """Cache configuration (mc, nc, kc) plus micro-kernel shape (mr, nr).

    Divisibility (mc by mr, nc by nr) is checked by
    :func:`versal_gemm.machine.validate_params`, which reports every violation.
    """

    mc: int
    nc: int
    kc: int
    mr: int = 16
    nr: int = 4

    def __post_init__(self):
        for name in ("mc", "nc", "kc", "mr", "nr"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class Int16Matrix:
    """Row-major int16 matrix with an explicit leading dimension.

    Element ``(i, j)`` lives at ``data[i*ld + j]``.
    """

    rows: int
    cols: int
    ld: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ValueError("negative matrix extent")
        if self.ld < self.cols:
            raise ValueError(f"ld={self.ld} < cols={self.cols}")
        data = np.asarray(self.data)
        if data.ndim != 1:
            raise ValueError("data must be a flat sequence")
        if data.dtype != np.int16:
            if data.size and (data.min() < INT16_MIN or data.max() > INT16_MAX):
                raise ValueError("values outside the int16 range")
            data = data.astype(np.int16)
        if data.size < self.rows * self.ld:
            raise ValueError(f"data holds {data.size} elements, need {self.rows * self.ld}")
        self.data = data

    @classmethod
    def from_array(cls, arr, ld: int | None = None) -> "Int16Matrix":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array")
        if arr.size and (arr.min() < INT16_MIN or arr.max() > INT16_MAX):
            raise ValueError("values outside the int16 range")
        rows, cols = arr.shape
        ld = cols if ld is None else ld
        if ld < cols:
            raise ValueError(f"ld={ld} < cols={cols}")
        buf = np.zeros(rows * ld, dtype=np.int16)
        buf.reshape(rows, ld)[:, :cols] = arr
        return cls(rows, cols, ld, buf)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Int16Matrix":
        return cls(rows, cols, cols, np.zeros(rows * cols, dtype=np.int16))

    def view(self) -> np.ndarray:
        """2-D view (no copy) of the logical ``rows x cols`` region."""
        return self.data[: self.rows * self.ld].reshape(self.rows, self.ld)[:, : self.cols]

    def to_array(self) -> np.ndarray:
        return self.view().copy()

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def __getitem__(self, ij):
        i, j = ij
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(ij)
        return int(self.data[i * self.ld + j])

    def __eq__(self, other):
        if not isinstance(other, Int16Matrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.view(), other.view())


def naive_gemm_oracle(A: Int16Matrix, B: Int16Matrix, C: Int16Matrix,
                      mode: WritebackMode = WRAP16) -> Int16Matrix:
    """Unblocked ``C + A @ B`` with 48-bit accumulation and int16 writeback.

    The int64 matmul may wrap modulo 2**64 for huge k, which is harmless because
    2**48 divides 2**64.
    """
    m, k = A.shape
    k2, n = B.shape
    if k != k2 or C.shape != (m, n):
        raise ValueError(f"shape mismatch: A{A.shape} B{B.shape} C{C.shape}")
    acc = C.view().astype(np.int64)
    acc += A.view().astype(np.int64) @ B.view().astype(np.int64)
    return Int16Matrix.from_array(writeback(acc, mode))
