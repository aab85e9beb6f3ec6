"""Software emulation of the AIE micro-kernel.

The 16x4 kernel keeps one output column per accumulator register (16 lanes of
48 bits each). Every ``mac16`` call consumes two k-steps for one column, so a
pair of k-steps costs four calls and a full kernel ``2*kc`` calls.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import WRAP16, DType, WritebackMode, wrap48, writeback

MAC16_LANES = 16
ACC_REGISTERS = 4

_HALF = 1 << 47
_MASK = (1 << 48) - 1


@dataclass(frozen=True)
class MicroKernelShape:
    mr: int = 16
    nr: int = 4
    dtype: DType = DType.INT16

    def __post_init__(self):
        if self.mr < 1 or self.nr < 1:
            raise ValueError("micro-kernel dimensions must be >= 1")
        if self.mr * self.nr > 2**20:
            raise ValueError("micro-kernel too large")


REFERENCE_SHAPE = MicroKernelShape(16, 4)


@dataclass(frozen=True)
class ResourceReport:
    acc_lanes_needed: int
    acc_lanes_available: int
    spill: bool
    acc_utilization: float
    acc_ratio: float
    vector_reg_bytes: int
    vector_reg_ratio: float


def resource_check(shape: MicroKernelShape, acc_lanes: int = ACC_REGISTERS * MAC16_LANES,
                   vector_reg_bytes: int = 2048) -> ResourceReport:
    """Accumulator-lane demand of a micro-tile and whether it spills.

    The vector-register figure is a rough estimate (double-buffered A and B
    operands of one mac16 pair) and is never used as a constraint.
    """
    needed = shape.mr * shape.nr
    ratio = needed / acc_lanes
    operand_bytes = 2 * (2 * shape.mr + 2 * shape.nr) * shape.dtype.elem_bytes
    return ResourceReport(
        acc_lanes_needed=needed,
        acc_lanes_available=acc_lanes,
        spill=needed > acc_lanes,
        acc_utilization=min(1.0, ratio),
        acc_ratio=ratio,
        vector_reg_bytes=operand_bytes,
        vector_reg_ratio=operand_bytes / vector_reg_bytes,
    )


class AccRegisterFile:
    """Four 16-lane accumulator registers of 48-bit signed values."""

    def __init__(self, regs=None):
        if regs is None:
            regs = np.zeros((ACC_REGISTERS, MAC16_LANES), dtype=np.int64)
        regs = np.asarray(regs, dtype=np.int64)
        if regs.shape != (ACC_REGISTERS, MAC16_LANES):
            raise ValueError(f"expected {ACC_REGISTERS}x{MAC16_LANES} lanes, got {regs.shape}")
        self.regs = wrap48(regs)

    @classmethod
    def load(cls, cr: np.ndarray) -> "AccRegisterFile":
        """Sign-extend a 16x4 int16 tile, one column per register."""
        return cls(np.asarray(cr, dtype=np.int64).T)

    def store(self, mode: WritebackMode = WRAP16) -> np.ndarray:
        return writeback(self.regs.T, mode)

    def __getitem__(self, r):
        return self.regs[r]

    def __setitem__(self, r, lanes):
        self.regs[r] = wrap48(np.asarray(lanes, dtype=np.int64))


def mac16_emu(acc, a0, a1, b0, b1) -> np.ndarray:
    """One mac16: ``acc[l] += a0[l]*b0 + a1[l]*b1`` on 16 lanes, wrapping at 48 bits.

    32 MACs, one nominal cycle.
    """
    acc = np.asarray(acc, dtype=np.int64)
    a0 = np.asarray(a0, dtype=np.int64)
    a1 = np.asarray(a1, dtype=np.int64)
    if acc.shape != (MAC16_LANES,) or a0.shape != (MAC16_LANES,) or a1.shape != (MAC16_LANES,):
        raise ValueError("mac16 operates on exactly 16 lanes")
    lanes = _mac16(acc.tolist(), a0.tolist(), a1.tolist(), int(b0), int(b1))
    return np.array(lanes, dtype=np.int64)


def _mac16(acc, a0, a1, b0, b1):
    # Lanes as Python ints (faster than numpy at 16 elements). One wrap per
    # call equals a wrap per MAC because reduction mod 2**48 commutes with +.
    return [((c + x * b0 + y * b1 + _HALF) & _MASK) - _HALF for c, x, y in zip(acc, a0, a1)]


@dataclass
class UkrResult:
    cr: np.ndarray
    emulated_cycles: int
    mac_count: int
    mac16_calls: int
    spill: bool

    @property
    def nominal_cycles(self) -> int:
        """One cycle per mac16 issued (0 for the generic kernel)."""
        return self.mac16_calls


def _check_panels(Ar, Br, Cr, mr, nr, kc):
    if kc < 1:
        raise ValueError("kc must be >= 1")
    Ar = np.asarray(Ar)
    Br = np.asarray(Br)
    Cr = np.asarray(Cr)
    if Ar.size != mr * kc:
        raise ValueError(f"Ar holds {Ar.size} elements, expected mr*kc={mr * kc}")
    if Br.size != kc * nr:
        raise ValueError(f"Br holds {Br.size} elements, expected kc*nr={kc * nr}")
    if Cr.shape != (mr, nr):
        raise ValueError(f"Cr has shape {Cr.shape}, expected {(mr, nr)}")
    return (Ar.reshape(kc, mr).astype(np.int64), Br.reshape(kc, nr).astype(np.int64), Cr)


def _cycles(kc, shape, constants, machine):
    from .costmodel import predict_ukr_cycles
    return predict_ukr_cycles(kc, shape, constants, machine)


def ukr_16x4(Ar, Br, Cr, kc: int, mode: WritebackMode = WRAP16,
             constants=None, machine=None) -> UkrResult:
    """Run the 16x4 INT16 micro-kernel on packed micro-panels.

    ``Ar`` holds element (i, p) at ``p*16 + i``; ``Br`` holds (p, j) at
    ``p*4 + j``. ``Cr`` is the 16x4 int16 tile, returned updated in the result.
    """
    if kc % 2:
        raise ValueError(f"kc={kc} must be even: each mac16 consumes two k-steps")
    a, b, cr = _check_panels(Ar, Br, Cr, 16, 4, kc)
    al, bl = a.tolist(), b.tolist()
    acc = AccRegisterFile.load(cr)
    regs = acc.regs.tolist()
    calls = 0
    for p in range(0, kc, 2):
        a0, a1 = al[p], al[p + 1]
        b0, b1 = bl[p], bl[p + 1]
        for j in range(ACC_REGISTERS):
            regs[j] = _mac16(regs[j], a0, a1, b0[j], b1[j])
            calls += 1
    acc = AccRegisterFile(regs)
    return UkrResult(
        cr=acc.store(mode),
        emulated_cycles=_cycles(kc, REFERENCE_SHAPE, constants, machine),
        mac_count=16 * 4 * kc,
        mac16_calls=calls,
        spill=False,
    )


def ukr_generic(shape: MicroKernelShape, Ar, Br, Cr, kc: int,
                mode: WritebackMode = WRAP16, constants=None, machine=None) -> UkrResult:
    """Scalar reference micro-kernel for any (mr, nr): kc rank-1 updates of Cr."""
    mr, nr = shape.mr, shape.nr
    a, b, cr = _check_panels(Ar, Br, Cr, mr, nr, kc)
    acc = wrap48(np.asarray(cr, dtype=np.int64))
    for p in range(kc):
        acc = wrap48(acc + np.outer(a[p], b[p]))
    return UkrResult(
        cr=writeback(acc, mode),
        emulated_cycles=_cycles(kc, shape, constants, machine),
        mac_count=mr * nr * kc,
        mac16_calls=0,
        spill=resource_check(shape).spill,
    )
