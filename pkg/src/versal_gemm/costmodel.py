"""Analytical cycle model for the micro-kernel and the blocked GEMM.

Micro-kernel::

    T(kc) = ceil(mr*nr*kc / peak + O * fills)       fills = ceil(mr*nr / acc_lanes)
    T(kc) = ceil(s * T(kc))                          when the micro-tile spills

GEMM, per L4 iteration: one Br copy of which a fraction ``omega`` overlaps with
compute, plus ``mc/mr`` micro-kernel calls.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .core import BlockParams, DType, ProblemDims
from .machine import DEFAULT_MACHINE, MachineModel, validate_params
from .microkernel import REFERENCE_SHAPE, MicroKernelShape, resource_check

_EPS = 1e-9


def _ceil(x: float) -> int:
    # tolerate float noise such as 8309/1160*1160 = 8309.000000000001
    return math.ceil(x - _EPS)


@dataclass(frozen=True)
class CostConstants:
    ukr_overhead_cycles: float = 84.0
    br_copy_cycles_per_element: float = 8309 / 1160
    br_copy_fixed_cycles: float = 0.0
    copy_overlap_fraction: float = 0.9137
    spill_penalty_factor: float = 1429 / 1192
    include_bc_packing: bool = False

    def __post_init__(self):
        if self.ukr_overhead_cycles < 0:
            raise ValueError("ukr_overhead_cycles must be >= 0")
        if self.br_copy_cycles_per_element < 0 or self.br_copy_fixed_cycles < 0:
            raise ValueError("copy costs must be >= 0")
        if not 0.0 <= self.copy_overlap_fraction <= 1.0:
            raise ValueError("copy_overlap_fraction must lie in [0, 1]")
        if self.spill_penalty_factor < 1.0:
            raise ValueError("spill_penalty_factor must be >= 1")

    def replace(self, **changes) -> "CostConstants":
        return dataclasses.replace(self, **changes)


DEFAULT_CONSTANTS = CostConstants()


def predict_ukr_cycles(kc: int, shape: MicroKernelShape = REFERENCE_SHAPE,
                       constants: CostConstants | None = None,
                       machine: MachineModel | None = None) -> int:
    """Cycles for one micro-kernel call over ``kc`` k-steps, including Cr load/store."""
    if kc < 1:
        raise ValueError("kc must be >= 1")
    return _ukr_cycles(kc, shape, constants or DEFAULT_CONSTANTS, machine or DEFAULT_MACHINE)


@functools.lru_cache(maxsize=4096)
def _ukr_cycles(kc, shape, constants, machine):
    lanes = shape.mr * shape.nr
    fills = -(-lanes // machine.acc_lanes)
    cycles = _ceil(lanes * kc / machine.peak(shape.dtype)
                   + constants.ukr_overhead_cycles * fills)
    if resource_check(shape, machine.acc_lanes, machine.reg_bytes).spill:
        cycles = _ceil(constants.spill_penalty_factor * cycles)
    return cycles


def predict_br_copy_cycles(kc: int, nr: int, constants: CostConstants | None = None) -> int:
    """Cycles to copy one kc x nr micro-panel Br from DDR into local memory."""
    if kc < 1 or nr < 1:
        raise ValueError("kc and nr must be >= 1")
    constants = constants or DEFAULT_CONSTANTS
    return _ceil(constants.br_copy_fixed_cycles) + _ceil(
        constants.br_copy_cycles_per_element * kc * nr)


def _blocks(extent: int, step: int) -> list[tuple[int, int]]:
    """(block size, count) pairs covering ``extent`` with blocks of ``step``."""
    full, rem = divmod(extent, step)
    out = [(step, full)] if full else []
    if rem:
        out.append((rem, 1))
    return out


@dataclass(frozen=True)
class GemmPrediction:
    cycles: int
    macs_per_cycle: float
    pct_peak: float
    extrapolated: bool
    ukr_calls: int
    l4_iterations: int
    mac_cycles: float
    executed_mac_cycles: float
    ukr_cycles: float
    copy_cycles_raw: float
    copy_cycles_exposed: float
    bc_pack_cycles: float

    @property
    def ukr_overhead_cycles(self) -> float:
        return self.ukr_cycles - self.executed_mac_cycles


def predict_gemm(dims: ProblemDims, params: BlockParams,
                 constants: CostConstants | None = None,
                 machine: MachineModel | None = None,
                 dtype: DType = DType.INT16) -> GemmPrediction:
    """Predicted cycles and efficiency of the blocked GEMM.

    Partial blocks at the matrix edges are costed at their actual size; such
    problems are flagged ``extrapolated`` because the model was calibrated on
    evenly divisible shapes only.
    """
    constants = constants or DEFAULT_CONSTANTS
    machine = machine or DEFAULT_MACHINE
    shape = MicroKernelShape(params.mr, params.nr, dtype)
    peak = machine.peak(dtype)
    keep = 1.0 - constants.copy_overlap_fraction

    extrapolated = any(d % min(p, d) for d, p in
                       ((dims.m, params.mc), (dims.n, params.nc), (dims.k, params.kc)))
    ukr_calls = l4_iters = 0
    ukr_cycles = copy_raw = bc_pack = executed = 0.0
    for kc_e, nk in _blocks(dims.k, params.kc):
        t_ukr = predict_ukr_cycles(kc_e, shape, constants, machine)
        t_copy = predict_br_copy_cycles(kc_e, params.nr, constants)
        for nc_e, nn in _blocks(dims.n, params.nc):
            if constants.include_bc_packing:
                bc_pack += nk * nn * _ceil(constants.br_copy_cycles_per_element * kc_e * nc_e)
            for mc_e, nm in _blocks(dims.m, params.mc):
                iters = nk * nn * nm * -(-nc_e // params.nr)
                calls = iters * -(-mc_e // params.mr)
                l4_iters += iters
                ukr_calls += calls
                ukr_cycles += calls * t_ukr
                executed += calls * params.mr * params.nr * kc_e / peak
                copy_raw += iters * t_copy
    exposed = keep * copy_raw
    cycles = _ceil(ukr_cycles + exposed + bc_pack)
    mpc = dims.macs / cycles
    return GemmPrediction(
        cycles=cycles,
        macs_per_cycle=mpc,
        pct_peak=100.0 * mpc / peak,
        extrapolated=bool(extrapolated),
        ukr_calls=ukr_calls,
        l4_iterations=l4_iters,
        mac_cycles=dims.macs / peak,
        executed_mac_cycles=executed,
        ukr_cycles=ukr_cycles,
        copy_cycles_raw=copy_raw,
        copy_cycles_exposed=exposed,
        bc_pack_cycles=bc_pack,
    )


@dataclass(frozen=True)
class LossBreakdown:
    """Where the cycles of a GEMM go, in percentage points of peak."""

    pct_peak: float
    ukr_overhead_points: float
    copy_exposed_points: float
    padding_points: float
    bc_pack_points: float
    copy_raw_points: float

    @property
    def total_loss_points(self) -> float:
        return 100.0 - self.pct_peak


def loss_breakdown(dims: ProblemDims, params: BlockParams,
                   constants: CostConstants | None = None,
                   machine: MachineModel | None = None,
                   dtype: DType = DType.INT16) -> LossBreakdown:
    """Attribute lost cycles to micro-kernel overhead and exposed Br copies.

    ``copy_raw_points`` is the share the Br copies would take if none of them
    overlapped with compute; it is informational and not part of the sum.
    """
    pred = predict_gemm(dims, params, constants, machine, dtype)
    total = float(pred.cycles)
    overhead = pred.ukr_cycles - pred.executed_mac_cycles
    raw_total = pred.ukr_cycles + pred.copy_cycles_raw + pred.bc_pack_cycles
    return LossBreakdown(
        pct_peak=pred.pct_peak,
        ukr_overhead_points=100.0 * overhead / total,
        copy_exposed_points=100.0 * pred.copy_cycles_exposed / total,
        padding_points=100.0 * (pred.executed_mac_cycles - pred.mac_cycles) / total,
        bc_pack_points=100.0 * pred.bc_pack_cycles / total,
        copy_raw_points=100.0 * pred.copy_cycles_raw / raw_total,
    )


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class SweepPoint:
    value: int
    pct_peak: float | None = None
    macs_per_cycle: float | None = None


@dataclass(frozen=True)
class CalibrationDataset:
    """Published measurements the model is fitted against.

    ``ukr_anchors`` are ``(mr, nr, kc, cycles)``; ``copy_anchors`` are
    ``(kc, nr, cycles)``.
    """

    kc_sweep: tuple[SweepPoint, ...] = ()
    mc_sweep: tuple[SweepPoint, ...] = ()
    mc_sweep_dims: ProblemDims = ProblemDims(4096, 4096, 290)
    ukr_anchors: tuple[tuple[int, int, int, int], ...] = ()
    copy_anchors: tuple[tuple[int, int, int], ...] = ()

    @property
    def size(self) -> int:
        return (len(self.kc_sweep) + len(self.mc_sweep) + len(self.ukr_anchors)
                + len(self.copy_anchors))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["param", "metric", "value"])
        for p in self.kc_sweep:
            if p.pct_peak is not None:
                w.writerow([f"kc={p.value}", "pct_peak", repr(p.pct_peak)])
            if p.macs_per_cycle is not None:
                w.writerow([f"kc={p.value}", "macs_per_cycle", repr(p.macs_per_cycle)])
        d = self.mc_sweep_dims
        for p in self.mc_sweep:
            key = f"mc={p.value};m={d.m};n={d.n};k={d.k}"
            if p.pct_peak is not None:
                w.writerow([key, "pct_peak", repr(p.pct_peak)])
            if p.macs_per_cycle is not None:
                w.writerow([key, "macs_per_cycle", repr(p.macs_per_cycle)])
        for mr, nr, kc, cyc in self.ukr_anchors:
            w.writerow([f"kc={kc};mr={mr};nr={nr}", "ukr_cycles", cyc])
        for kc, nr, cyc in self.copy_anchors:
            w.writerow([f"kc={kc};nr={nr}", "br_copy_cycles", cyc])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CalibrationDataset":
        """Load ``param,metric,value`` rows.

        ``param`` is ``key=int`` pairs joined by ``;``. Metrics: ``pct_peak`` and
        ``macs_per_cycle`` (param has ``kc`` for the micro-kernel sweep, or ``mc``
        plus optional ``m,n,k`` for the GEMM sweep), ``ukr_cycles`` (``kc`` and
        optional ``mr,nr``), ``br_copy_cycles`` (``kc,nr``).
        """
        kc_pts: dict[int, dict] = {}
        mc_pts: dict[int, dict] = {}
        mc_dims = None
        ukr, copy = [], []
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["param", "metric", "value"]:
            raise CalibrationError("calibration CSV must start with header param,metric,value")
        for lineno, row in enumerate(reader, 2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 3:
                raise CalibrationError(f"line {lineno}: expected 3 fields, got {len(row)}")
            param, metric, value = (c.strip() for c in row)
            try:
                keys = {}
                for part in param.split(";"):
                    name, _, v = part.partition("=")
                    keys[name.strip()] = int(v)
                val = float(value)
            except ValueError:
                raise CalibrationError(f"line {lineno}: cannot parse {row!r}") from None
            if metric in ("pct_peak", "macs_per_cycle"):
                if "mc" in keys:
                    if {"m", "n", "k"} <= keys.keys():
                        d = ProblemDims(keys["m"], keys["n"], keys["k"])
                        if mc_dims is not None and d != mc_dims:
                            raise CalibrationError(f"line {lineno}: mixed mc-sweep problem sizes")
                        mc_dims = d
                    mc_pts.setdefault(keys["mc"], {})[metric] = val
                elif "kc" in keys:
                    kc_pts.setdefault(keys["kc"], {})[metric] = val
                else:
                    raise CalibrationError(f"line {lineno}: sweep row needs kc= or mc=")
            elif metric == "ukr_cycles":
                ukr.append((keys.get("mr", 16), keys.get("nr", 4), keys["kc"], int(val)))
            elif metric == "br_copy_cycles":
                copy.append((keys["kc"], keys["nr"], int(val)))
            else:
                raise CalibrationError(f"line {lineno}: unknown metric {metric!r}")

        def pts(d):
            return tuple(SweepPoint(v, m.get("pct_peak"), m.get("macs_per_cycle"))
                         for v, m in sorted(d.items()))

        kwargs = {}
        if mc_dims is not None:
            kwargs["mc_sweep_dims"] = mc_dims
        return cls(kc_sweep=pts(kc_pts), mc_sweep=pts(mc_pts), ukr_anchors=tuple(ukr),
                   copy_anchors=tuple(copy), **kwargs)

    @classmethod
    def from_file(cls, path) -> "CalibrationDataset":
        return cls.from_csv(Path(path).read_text())


# Figure coordinates as plotted (the last mc point is labelled 4098 there).
PUBLISHED_DATASET = CalibrationDataset(
    kc_sweep=(
        SweepPoint(8, 16.16161616, 5.171717172),
        SweepPoint(16, 27.5862069, 8.827586207),
        SweepPoint(32, 43.24324324, 13.83783784),
        SweepPoint(64, 60.37735849, 19.32075472),
        SweepPoint(128, 75.29411765, 24.09411765),
        SweepPoint(290, 87.60604027, 28.03625378),
    ),
    mc_sweep=(
        SweepPoint(128, 76.93, 24.62),
        SweepPoint(256, 81.96, 26.23),
        SweepPoint(512, 84.48, 27.03),
        SweepPoint(1024, 85.74, 27.44),
        SweepPoint(2048, 86.37, 27.64),
        SweepPoint(4098, 86.69, 27.74),
    ),
    mc_sweep_dims=ProblemDims(4096, 4096, 290),
    ukr_anchors=((16, 4, 256, 596), (16, 4, 64, 212), (32, 4, 256, 1429)),
    copy_anchors=((290, 4, 8309),),
)

# Reported alongside the sweeps but inconsistent with them; kept out of the fit.
UNRECONCILED_ANCHORS = {
    "ukr_cycles_in_gemm_kc290": 8952,
    "macs_per_cycle_with_copy_kc290": 2.0,
}


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class Residual:
    label: str
    measured: float
    predicted: float

    @property
    def residual(self) -> float:
        return self.predicted - self.measured


@dataclass(frozen=True)
class CalibrationResult:
    constants: CostConstants
    fitted: tuple[str, ...]
    residuals: tuple[Residual, ...] = field(default=())


def _kc_point_cycles(p: SweepPoint, shape: MicroKernelShape, peak: int) -> float:
    mac_cycles = shape.mr * shape.nr * p.value / peak
    if p.pct_peak is not None:
        return mac_cycles / (p.pct_peak / 100.0)
    return shape.mr * shape.nr * p.value / p.macs_per_cycle


def _mc_point_mpc(p: SweepPoint, peak: int) -> float:
    return p.macs_per_cycle if p.macs_per_cycle is not None else p.pct_peak / 100.0 * peak


def calibrate(data: CalibrationDataset = PUBLISHED_DATASET,
              base: CostConstants | None = None,
              machine: MachineModel | None = None) -> CalibrationResult:
    """Least-squares fit of the cost constants to measured points.

    Overhead O comes from the micro-kernel sweep and non-spilling anchors
    (slope fixed at mr*nr/peak), the per-element copy cost from the copy
    anchors, the spill factor from spilling anchors, and the overlap fraction
    from the GEMM sweep. Constants without supporting data keep ``base``.
    """
    base = base or DEFAULT_CONSTANTS
    machine = machine or DEFAULT_MACHINE
    peak = machine.peak(DType.INT16)
    if data.size == 0:
        raise CalibrationError("empty calibration dataset: nothing to fit")

    fitted = []
    changes = {}

    # overhead: cycles - mac_cycles for every non-spilling observation
    over = [_kc_point_cycles(p, REFERENCE_SHAPE, peak) - 16 * 4 * p.value / peak
            for p in data.kc_sweep]
    spilling = []
    for mr, nr, kc, cyc in data.ukr_anchors:
        shape = MicroKernelShape(mr, nr)
        if resource_check(shape, machine.acc_lanes).spill:
            spilling.append((shape, kc, cyc))
        else:
            fills = -(-mr * nr // machine.acc_lanes)
            over.append((cyc - mr * nr * kc / peak) / fills)
    if over:
        changes["ukr_overhead_cycles"] = float(np.mean(over))
        fitted.append("ukr_overhead_cycles")

    if data.copy_anchors:
        x = np.array([kc * nr for kc, nr, _ in data.copy_anchors], dtype=float)
        y = np.array([c for _, _, c in data.copy_anchors], dtype=float) - base.br_copy_fixed_cycles
        changes["br_copy_cycles_per_element"] = float(x @ y / (x @ x))
        fitted.append("br_copy_cycles_per_element")

    if spilling:
        o = changes.get("ukr_overhead_cycles", base.ukr_overhead_cycles)
        no_spill = base.replace(ukr_overhead_cycles=o, spill_penalty_factor=1.0)
        b = np.array([predict_ukr_cycles(kc, s, no_spill, machine) for s, kc, _ in spilling],
                     dtype=float)
        y = np.array([c for _, _, c in spilling], dtype=float)
        changes["spill_penalty_factor"] = max(1.0, float(b @ y / (b @ b)))
        fitted.append("spill_penalty_factor")

    constants = base.replace(**changes)

    if data.mc_sweep:
        dims = data.mc_sweep_dims
        measured = np.array([_mc_point_mpc(p, peak) for p in data.mc_sweep])

        def sse(omega):
            c = constants.replace(copy_overlap_fraction=float(omega))
            pred = [predict_gemm(dims, BlockParams(p.value, dims.n, dims.k), c, machine)
                    .macs_per_cycle for p in data.mc_sweep]
            return float(np.sum((np.array(pred) - measured) ** 2))

        res = minimize_scalar(sse, bounds=(0.0, 1.0), method="bounded",
                              options={"xatol": 1e-7})
        constants = constants.replace(copy_overlap_fraction=float(res.x))
        fitted.append("copy_overlap_fraction")

    return CalibrationResult(constants, tuple(fitted), tuple(residuals(data, constants, machine)))


def residuals(data: CalibrationDataset, constants: CostConstants,
              machine: MachineModel | None = None) -> list[Residual]:
    machine = machine or DEFAULT_MACHINE
    peak = machine.peak(DType.INT16)
    out = []
    for p in data.kc_sweep:
        cyc = predict_ukr_cycles(p.value, REFERENCE_SHAPE, constants, machine)
        pct = 100.0 * 16 * 4 * p.value / peak / cyc
        measured = p.pct_peak if p.pct_peak is not None else 100.0 * p.macs_per_cycle / peak
        out.append(Residual(f"kc={p.value} pct_peak", measured, pct))
    d = data.mc_sweep_dims
    for p in data.mc_sweep:
        pred = predict_gemm(d, BlockParams(p.value, d.n, d.k), constants, machine)
        out.append(Residual(f"mc={p.value} macs_per_cycle", _mc_point_mpc(p, peak),
                            pred.macs_per_cycle))
    for mr, nr, kc, cyc in data.ukr_anchors:
        out.append(Residual(f"ukr {mr}x{nr} kc={kc} cycles", cyc,
                            predict_ukr_cycles(kc, MicroKernelShape(mr, nr), constants, machine)))
    for kc, nr, cyc in data.copy_anchors:
        out.append(Residual(f"br copy kc={kc} nr={nr} cycles", cyc,
                            predict_br_copy_cycles(kc, nr, constants)))
    return out


# ---------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: int
    cycles: int
    macs_per_cycle: float
    pct_peak: float
    reference_pct_peak: float | None = None
    violations: tuple[str, ...] = ()

    @property
    def feasible(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]

    CSV_HEADER = ("param", "value", "cycles", "macs_per_cycle", "pct_peak", "reference_pct_peak")

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_HEADER)]
        for r in self.rows:
            ref = "" if r.reference_pct_peak is None else f"{r.reference_pct_peak:.6g}"
            lines.append(f"{r.param},{r.value},{r.cycles},{r.macs_per_cycle:.6g},"
                         f"{r.pct_peak:.6g},{ref}")
        return "\n".join(lines) + "\n"


def sweep(param: str, values, dims: ProblemDims | None = None,
          params: BlockParams | None = None,
          constants: CostConstants | None = None,
          machine: MachineModel | None = None,
          reference: CalibrationDataset | None = PUBLISHED_DATASET,
          dtype: DType = DType.INT16) -> SweepTable:
    """Evaluate the model over a range of ``kc`` or ``mc`` values.

    ``kc`` sweeps the micro-kernel in isolation (shape from ``params``,
    default 16x4). ``mc`` sweeps the full GEMM on ``dims`` (default
    4096x4096x290) with ``nc = n`` and ``kc = k`` unless ``params`` says
    otherwise. Infeasible values are kept and carry their violations.
    """
    constants = constants or DEFAULT_CONSTANTS
    machine = machine or DEFAULT_MACHINE
    values = sorted(set(int(v) for v in values))
    if not values:
        raise ValueError("empty sweep range")
    peak = machine.peak(dtype)
    rows = []
    if param == "kc":
        mr, nr = (params.mr, params.nr) if params else (16, 4)
        shape = MicroKernelShape(mr, nr, dtype)
        ref = {p.value: p for p in reference.kc_sweep} if reference else {}
        for kc in values:
            if kc < 1:
                raise ValueError(f"kc must be >= 1, got {kc}")
            cyc = predict_ukr_cycles(kc, shape, constants, machine)
            mpc = mr * nr * kc / cyc
            p = ref.get(kc)
            bp = BlockParams(mr, nr, kc, mr, nr)
            viol = tuple(str(v) for v in validate_params(bp, None, dtype, machine) if v.fatal)
            rows.append(SweepRow("kc", kc, cyc, mpc, 100.0 * mpc / peak,
                                 None if p is None else _ref_pct(p, peak), viol))
    elif param == "mc":
        dims = dims or ProblemDims(4096, 4096, 290)
        base = params or BlockParams(16, dims.n, dims.k)
        ref = {}
        if reference and reference.mc_sweep_dims == dims:
            # match on the effective block size, so mc=4098 on m=4096 counts as 4096
            ref = {min(p.value, dims.m): p for p in reference.mc_sweep}
        for mc in values:
            if mc < 1:
                raise ValueError(f"mc must be >= 1, got {mc}")
            bp = dataclasses.replace(base, mc=mc)
            pred = predict_gemm(dims, bp, constants, machine, dtype)
            p = ref.get(min(mc, dims.m))
            viol = tuple(str(v) for v in validate_params(bp, dims, dtype, machine) if v.fatal)
            rows.append(SweepRow("mc", mc, pred.cycles, pred.macs_per_cycle, pred.pct_peak,
                                 None if p is None else _ref_pct(p, peak), viol))
    else:
        raise ValueError(f"unknown sweep parameter {param!r} (expected 'kc' or 'mc')")
    return SweepTable(tuple(rows))


def _ref_pct(p: SweepPoint, peak: int) -> float:
    return p.pct_peak if p.pct_peak is not None else 100.0 * p.macs_per_cycle / peak
