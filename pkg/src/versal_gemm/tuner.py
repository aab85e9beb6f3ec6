"""Model-driven choice of (mc, nc, kc) for a problem on a machine."""
from __future__ import annotations

from dataclasses import dataclass

from .core import BlockParams, DType, ProblemDims
from .costmodel import CostConstants, GemmPrediction, predict_gemm
from .machine import DEFAULT_MACHINE, MachineModel, kc_max, mc_max, validate_params


class InfeasibleError(ValueError):
    """No block parameters satisfy the machine capacities."""


def _kc_candidates(k: int, bound: int, even: bool) -> list[int]:
    step = 2 if even else 1
    limit = min(k, bound)
    out = {d for d in range(step, limit + 1, step) if k % d == 0}
    clamp = limit - (limit % step)
    if clamp >= 1:
        out.add(clamp)
    if even and k % 2 and k + 1 <= bound:
        # an odd k fits one slab with kc = k + 1; the last k-step takes the fringe kernel
        out.add(k + 1)
    return sorted(out)


def grid_candidates(dims: ProblemDims, machine: MachineModel | None = None,
                    dtype: DType = DType.INT16, mr: int = 16, nr: int = 4) -> list[BlockParams]:
    """Every feasible (kc, mc) pair on the search grid, with nc covering n.

    kc runs over the divisors of k below the local-memory bound plus the clamp
    ``min(k, kc_max)`` (even only for the 16x4 kernel); mc over the multiples of
    mr up to ``min(m, mc_max(kc))``, rounded up to cover m when that still fits.
    Ordered by kc, then mc.
    """
    machine = machine or DEFAULT_MACHINE
    even = (mr, nr) == (16, 4)
    nc = -(-dims.n // nr) * nr
    out = []
    for kc in _kc_candidates(dims.k, kc_max(nr, dtype, machine), even):
        mc_bound = mc_max(kc, dtype, machine) // mr * mr
        mc_top = min(-(-dims.m // mr) * mr, mc_bound)
        for mc in range(mr, mc_top + 1, mr):
            p = BlockParams(mc, nc, kc, mr, nr)
            if not any(v.fatal for v in validate_params(p, dims, dtype, machine)):
                out.append(p)
    return out


@dataclass(frozen=True)
class TuneResult:
    params: BlockParams
    prediction: GemmPrediction
    heuristic: BlockParams
    grid_size: int

    @property
    def pct_peak(self) -> float:
        return self.prediction.pct_peak


def _rank(dims, p, pred):
    divisible = dims.k % p.kc == 0 and dims.m % min(p.mc, dims.m) == 0
    # fewer cycles wins; ties prefer divisible blockings, larger kc, larger mc, smaller nc
    return (pred.cycles, not divisible, -p.kc, -p.mc, p.nc)


def heuristic_params(dims: ProblemDims, machine: MachineModel | None = None,
                     dtype: DType = DType.INT16, mr: int = 16, nr: int = 4) -> BlockParams:
    """kc as large as local memory allows, then mc as large as FPGA RAM allows."""
    machine = machine or DEFAULT_MACHINE
    kc = min(dims.k, kc_max(nr, dtype, machine))
    if (mr, nr) == (16, 4):
        kc -= kc % 2
    if kc < 1:
        raise InfeasibleError(
            f"no feasible kc: Br budget {machine.br_local_budget_bytes} B "
            f"cannot hold a {2 if (mr, nr) == (16, 4) else 1}x{nr} micro-panel")
    mc = min(-(-dims.m // mr) * mr, mc_max(kc, dtype, machine) // mr * mr)
    if mc < mr:
        raise InfeasibleError(f"no feasible mc: FPGA budget cannot hold {mr}x{kc} Ac")
    return BlockParams(mc, -(-dims.n // nr) * nr, kc, mr, nr)


def tune(dims: ProblemDims, dtype: DType = DType.INT16,
         machine: MachineModel | None = None,
         constants: CostConstants | None = None,
         mr: int = 16, nr: int = 4) -> TuneResult:
    """Pick the block parameters with the best predicted efficiency.

    Starts from the capacity heuristic, then scans the full candidate grid and
    keeps the argmax (ties broken deterministically, see :func:`_rank`).
    """
    machine = machine or DEFAULT_MACHINE
    start = heuristic_params(dims, machine, dtype, mr, nr)
    grid = grid_candidates(dims, machine, dtype, mr, nr)
    if start not in grid:
        grid.append(start)
    best = None
    for p in grid:
        pred = predict_gemm(dims, p, constants, machine, dtype)
        key = _rank(dims, p, pred)
        if best is None or key < best[0]:
            best = (key, p, pred)
    if best is None:
        raise InfeasibleError(f"no feasible block parameters for {dims}")
    return TuneResult(best[1], best[2], start, len(grid))
