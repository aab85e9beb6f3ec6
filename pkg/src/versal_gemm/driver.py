"""Five-loop blocked GEMM around the emulated micro-kernel.

Loop order: L1 jc over n (step nc), L2 pc over k (kc), L3 ic over m (mc),
L4 jr over the Bc micro-panels, L5 ir over the Ac micro-panels, L6 the
micro-kernel. Each L4 iteration copies one Br from DDR into local memory and
reuses it for every L5 iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import WRAP16, BlockParams, DType, Int16Matrix, ProblemDims, WritebackMode
from .costmodel import CostConstants, GemmPrediction, predict_gemm
from .machine import DEFAULT_MACHINE, MachineModel, Violation, check_params
from .microkernel import MicroKernelShape, ukr_16x4, ukr_generic
from .packing import PackedA, PackedB, pack_Ac, pack_Bc


@dataclass
class TransferStats:
    bytes_br_copied: int = 0
    bytes_ar_streamed: int = 0
    bytes_cr_loaded: int = 0
    bytes_cr_stored: int = 0
    bytes_ac_packed: int = 0
    bytes_bc_packed: int = 0
    ukr_invocations: int = 0
    br_copies: int = 0
    generic_ukr_invocations: int = 0
    ar_source: str = "fpga"
    peak_br_local_bytes: int = 0
    peak_ac_fpga_bytes: int = 0
    peak_bc_ddr_bytes: int = 0

    @property
    def l4_iterations(self) -> int:
        return self.br_copies

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["l4_iterations"] = self.l4_iterations
        return out


@dataclass
class GemmRun:
    c: Int16Matrix
    stats: TransferStats
    prediction: GemmPrediction
    warnings: list[Violation] = field(default_factory=list)

    @property
    def predicted_cycles(self) -> int:
        return self.prediction.cycles

    @property
    def macs_per_cycle(self) -> float:
        return self.prediction.macs_per_cycle

    @property
    def pct_peak(self) -> float:
        return self.prediction.pct_peak


def _resolve_dims(A, B, C, dims):
    if isinstance(A, PackedA):
        m, k = A.m, A.k
    else:
        m, k = A.shape
    k2, n = B.shape
    if k != k2 or C.shape != (m, n):
        raise ValueError(f"shape mismatch: A({m}, {k}) B{B.shape} C{C.shape}")
    found = ProblemDims(m, n, k)
    if dims is not None and dims != found:
        raise ValueError(f"dims {dims} do not match operands {found}")
    return found


def _run(A, B, C, dims, params, kernel, stats, packed_b=None, pack_b=True):
    """Walk the loop nest. With ``kernel=None`` only the transfers are counted."""
    m, n, k = dims.m, dims.n, dims.k
    mr, nr = params.mr, params.nr
    compute = kernel is not None
    prepacked = isinstance(A, PackedA)
    if prepacked and (A.mc, A.kc, A.mr) != (params.mc, params.kc, params.mr):
        raise ValueError(f"PackedA blocked with (mc, kc, mr)=({A.mc}, {A.kc}, {A.mr}), "
                         f"params say ({params.mc}, {params.kc}, {params.mr})")
    if packed_b is not None and (packed_b.kc, packed_b.nc, packed_b.nr) != (
            params.kc, params.nc, params.nr):
        raise ValueError("PackedB blocking does not match params")

    if compute:
        # C lives in DDR as int16; padded rows/cols give a tile-aligned scratch copy
        cbuf = np.zeros((-(-m // mr) * mr, -(-n // nr) * nr), dtype=np.int16)
        cbuf[:m, :n] = C.view()
    bc = ac = None

    for ji, jc in enumerate(range(0, n, params.nc)):                      # L1
        nc_e = min(params.nc, n - jc)
        n_br = -(-nc_e // nr)
        for pi, pc in enumerate(range(0, k, params.kc)):                  # L2
            kc_e = min(params.kc, k - pc)
            bc_bytes = n_br * nr * kc_e * 2
            if packed_b is not None:
                bc = packed_b.blocks[(pi, ji)] if compute else None
            elif pack_b:
                bc = pack_Bc(B, pc, jc, params.kc, params.nc, nr) if compute else None
                if stats is not None:
                    stats.bytes_bc_packed += bc_bytes
            if stats is not None and (pack_b or packed_b is not None):
                stats.peak_bc_ddr_bytes = max(stats.peak_bc_ddr_bytes, bc_bytes)
            for ii, ic in enumerate(range(0, m, params.mc)):              # L3
                n_ar = -(-min(params.mc, m - ic) // mr)
                ac_bytes = n_ar * mr * kc_e * 2
                if compute:
                    ac = A.block(pi, ii) if prepacked else pack_Ac(A, ic, pc, params.mc,
                                                                   params.kc, mr)
                if stats is not None:
                    if not prepacked:
                        stats.bytes_ac_packed += ac_bytes
                    stats.peak_ac_fpga_bytes = max(stats.peak_ac_fpga_bytes, ac_bytes)
                for jr in range(n_br):                                    # L4
                    if stats is not None:
                        stats.br_copies += 1
                        stats.bytes_br_copied += kc_e * nr * 2
                        stats.peak_br_local_bytes = max(stats.peak_br_local_bytes,
                                                        kc_e * nr * 2)
                        stats.ukr_invocations += n_ar
                        stats.bytes_ar_streamed += n_ar * mr * kc_e * 2
                        stats.bytes_cr_loaded += n_ar * mr * nr * 2
                        stats.bytes_cr_stored += n_ar * mr * nr * 2
                    if not compute:
                        continue
                    if bc is not None:
                        br = bc.panel(jr)
                    else:
                        br = pack_Bc(B, pc, jc + jr * nr, kc_e, nr, nr).payload
                    j0 = jc + jr * nr
                    for ir in range(n_ar):                                # L5
                        i0 = ic + ir * mr
                        tile = cbuf[i0:i0 + mr, j0:j0 + nr]
                        res, generic = kernel(ac.panel(ir), br, tile, kc_e)     # L6
                        tile[...] = res.cr
                        if stats is not None:
                            stats.generic_ukr_invocations += generic
    if not compute:
        return None
    return Int16Matrix.from_array(cbuf[:m, :n])


def transfer_stats(dims: ProblemDims, params: BlockParams, prepacked: bool = False,
                   pack_b: bool = True) -> TransferStats:
    """Data-movement counts of :func:`gemm_blocked` without doing the arithmetic.

    Usable at sizes far too large to emulate.
    """
    a = PackedA(dims.m, dims.k, params.mc, params.kc, params.mr, {}) if prepacked else None
    stats = TransferStats(ar_source="fpga-prepacked" if prepacked else "fpga-packed-in-L3")
    _run(a, None, None, dims, params, None, stats, None, pack_b)
    return stats


def gemm_blocked(A: Int16Matrix | PackedA, B: Int16Matrix, C: Int16Matrix,
                 dims: ProblemDims | None = None, params: BlockParams | None = None,
                 mode: WritebackMode = WRAP16,
                 machine: MachineModel | None = None,
                 constants: CostConstants | None = None,
                 packed_b: PackedB | None = None,
                 pack_b: bool = True,
                 dtype: DType = DType.INT16) -> GemmRun:
    """Compute ``C + A @ B`` with the blocked algorithm and account data movement.

    ``A`` may be a :class:`PackedA` (weights pre-packed into FPGA RAM), in which
    case L3 does no packing. Raises :class:`~versal_gemm.machine.CapacityError`
    when ``params`` violate machine limits; accumulator spill is only a warning.
    """
    machine = machine or DEFAULT_MACHINE
    dims = _resolve_dims(A, B, C, dims)
    if params is None:
        raise ValueError("params are required")
    warnings = check_params(params, dims, dtype, machine)
    shape = MicroKernelShape(params.mr, params.nr, dtype)
    reference = (params.mr, params.nr) == (16, 4)

    def kernel(ar, br, cr, kc):
        if reference and kc % 2 == 0:
            return ukr_16x4(ar, br, cr, kc, mode, constants, machine), 0
        # odd k fringe (or a non-reference shape): scalar kernel, same arithmetic
        return ukr_generic(shape, ar, br, cr, kc, mode, constants, machine), 1

    stats = TransferStats(
        ar_source="fpga-prepacked" if isinstance(A, PackedA) else "fpga-packed-in-L3")
    c = _run(A, B, C, dims, params, kernel, stats, packed_b, pack_b)
    prediction = predict_gemm(dims, params, constants, machine, dtype)
    return GemmRun(c, stats, prediction, warnings)


def gemm_reference_blocked(A: Int16Matrix | PackedA, B: Int16Matrix, C: Int16Matrix,
                           dims: ProblemDims | None = None,
                           params: BlockParams | None = None,
                           mode: WritebackMode = WRAP16,
                           machine: MachineModel | None = None,
                           dtype: DType = DType.INT16) -> Int16Matrix:
    """Same loop nest as :func:`gemm_blocked` but always with the scalar kernel."""
    machine = machine or DEFAULT_MACHINE
    dims = _resolve_dims(A, B, C, dims)
    if params is None:
        raise ValueError("params are required")
    check_params(params, dims, dtype, machine)
    shape = MicroKernelShape(params.mr, params.nr, dtype)

    def kernel(ar, br, cr, kc):
        return ukr_generic(shape, ar, br, cr, kc, mode, None, machine), 1

    return _run(A, B, C, dims, params, kernel, None)
