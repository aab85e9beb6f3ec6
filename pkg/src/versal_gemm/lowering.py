"""Convolution as one GEMM: filters become A, lowered activations become B.

``im2row`` lays each output pixel's receptive field out as a column of B, rows
ordered (ci, ky, kx), so that ``C = A @ B`` is the co x (oh*ow) output.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import WRAP16, BlockParams, Int16Matrix, ProblemDims, WritebackMode, wrap48, writeback
from .costmodel import CostConstants
from .driver import GemmRun, gemm_blocked
from .machine import MachineModel
from .tuner import tune

TENSOR_MAGIC = b"T3I16\n"


def _as_int16(values, shape, what):
    arr = np.asarray(values)
    if arr.size and (arr.min() < -32768 or arr.max() > 32767):
        raise ValueError(f"{what} values outside the int16 range")
    return arr.astype(np.int16).reshape(shape)


@dataclass
class Tensor3:
    """Channel-major int16 activations: value (ch, y, x) at ``(ch*h + y)*w + x``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"expected a non-empty (c, h, w) array, got shape {arr.shape}")
        self.data = _as_int16(arr, arr.shape, "tensor")

    @property
    def c(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return np.array_equal(self.data, other.data)


@dataclass
class FilterBank:
    """int16 weights of shape (co, ci, kh, kw)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise ValueError(f"expected a non-empty (co, ci, kh, kw) array, got {arr.shape}")
        self.data = _as_int16(arr, arr.shape, "filter")

    @property
    def co(self) -> int:
        return self.data.shape[0]

    @property
    def ci(self) -> int:
        return self.data.shape[1]

    @property
    def kh(self) -> int:
        return self.data.shape[2]

    @property
    def kw(self) -> int:
        return self.data.shape[3]

    def as_matrix(self) -> Int16Matrix:
        return Int16Matrix.from_array(self.data.reshape(self.co, -1))


def output_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    if stride < 1 or pad < 0 or kernel < 1:
        raise ValueError("need kernel >= 1, stride >= 1, pad >= 0")
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise ValueError(f"(size {size} + 2*pad {pad} - kernel {kernel}) is not a "
                         f"non-negative multiple of stride {stride}")
    return span // stride + 1


def im2row(x: Tensor3, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Int16Matrix:
    """Lower ``x`` to the (c*kh*kw) x (oh*ow) patch matrix; padding reads as zero."""
    oh = output_extent(x.h, kh, stride, pad)
    ow = output_extent(x.w, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    out = np.empty((x.c, kh, kw, oh, ow), dtype=np.int16)
    for ky in range(kh):
        for kx in range(kw):
            out[:, ky, kx] = xp[:, ky:ky + stride * (oh - 1) + 1:stride,
                                kx:kx + stride * (ow - 1) + 1:stride]
    return Int16Matrix.from_array(out.reshape(x.c * kh * kw, oh * ow))


def _check_conv(x: Tensor3, f: FilterBank, stride, pad):
    if f.ci != x.c:
        raise ValueError(f"filter expects {f.ci} input channels, tensor has {x.c}")
    return output_extent(x.h, f.kh, stride, pad), output_extent(x.w, f.kw, stride, pad)


def conv_direct_oracle(x: Tensor3, f: FilterBank, stride: int = 1, pad: int = 0,
                       mode: WritebackMode = WRAP16) -> Tensor3:
    """Direct convolution with 48-bit accumulation, used as a test oracle."""
    oh, ow = _check_conv(x, f, stride, pad)
    xp = np.pad(x.data.astype(np.int64), ((0, 0), (pad, pad), (pad, pad)))
    w = f.data.astype(np.int64)
    acc = np.zeros((f.co, oh, ow), dtype=np.int64)
    for ky in range(f.kh):
        for kx in range(f.kw):
            win = xp[:, ky:ky + stride * (oh - 1) + 1:stride, kx:kx + stride * (ow - 1) + 1:stride]
            acc += np.einsum("oc,cyx->oyx", w[:, :, ky, kx], win)
    return Tensor3(writeback(wrap48(acc), mode))


def conv_gemm(x: Tensor3, f: FilterBank, stride: int = 1, pad: int = 0,
              params: BlockParams | None = None,
              machine: MachineModel | None = None,
              mode: WritebackMode = WRAP16,
              constants: CostConstants | None = None) -> tuple[Tensor3, GemmRun]:
    """Convolution through im2row and the blocked GEMM.

    Without ``params`` the tuner picks them for the lowered problem.
    """
    oh, ow = _check_conv(x, f, stride, pad)
    a = f.as_matrix()
    b = im2row(x, f.kh, f.kw, stride, pad)
    dims = ProblemDims(f.co, oh * ow, a.cols)
    if params is None:
        params = tune(dims, machine=machine, constants=constants).params
    run = gemm_blocked(a, b, Int16Matrix.zeros(dims.m, dims.n), dims, params, mode,
                       machine, constants)
    return Tensor3(run.c.to_array().reshape(f.co, oh, ow)), run


def write_tensor(t: Tensor3, path) -> None:
    header = TENSOR_MAGIC + f"{t.c} {t.h} {t.w}\n".encode("ascii")
    Path(path).write_bytes(header + t.data.astype("<i2").tobytes())


def read_tensor(path) -> Tensor3:
    return parse_tensor(Path(path).read_bytes())


def parse_tensor(data: bytes) -> Tensor3:
    """Parse the ``T3I16`` format: magic line, ``c h w`` line, little-endian int16 payload."""
    if not data.startswith(TENSOR_MAGIC):
        raise ValueError("bad tensor magic, expected 'T3I16'")
    rest = data[len(TENSOR_MAGIC):]
    line, sep, payload = rest.partition(b"\n")
    if not sep:
        raise ValueError("missing dimension line")
    try:
        c, h, w = (int(v) for v in line.decode("ascii").split())
    except ValueError:
        raise ValueError(f"bad dimension line {line!r}") from None
    if min(c, h, w) < 1:
        raise ValueError("tensor dimensions must be >= 1")
    if len(payload) != 2 * c * h * w:
        raise ValueError(f"payload is {len(payload)} bytes, expected {2 * c * h * w}")
    return Tensor3(np.frombuffer(payload, dtype="<i2").reshape(c, h, w))
