"""Command-line entry point: ``versal-gemm {gemm,sweep,tune,calibrate,prepack,conv}``.

Exit codes: 0 ok, 2 bad flags, 3 capacity violation, 4 file I/O error,
5 verification mismatch.
"""
from __future__ import annotations

import argparse
import sys

from . import costmodel
from .core import BlockParams, DType, Int16Matrix, ProblemDims, WritebackMode, naive_gemm_oracle
from .driver import gemm_blocked
from .lowering import FilterBank, Tensor3, conv_direct_oracle, conv_gemm, read_tensor
from .machine import CapacityError, MachineModel, check_params
from .packing import FormatError, prepack_A, read_prepacked, unpack_prepacked, write_prepacked
from .rng import SplitMix64
from .tuner import InfeasibleError, tune

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_IO, EXIT_MISMATCH = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def writeback_mode(text: str) -> WritebackMode:
    try:
        return WritebackMode.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def int_list(text: str) -> list[int]:
    try:
        return [positive_int(t) for t in text.split(",") if t.strip()]
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}: {exc}") from None


def int_range(text: str) -> list[int]:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(f"expected A:B[:STEP], got {text!r}")
    a, b = positive_int(parts[0]), positive_int(parts[1])
    step = positive_int(parts[2]) if len(parts) == 3 else 1
    if b < a:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return list(range(a, b + 1, step))


def _load_machine(args) -> MachineModel:
    try:
        if args.machine:
            return MachineModel.from_file(args.machine)
        return MachineModel.from_env()
    except OSError as exc:
        raise CliError(f"cannot read machine file: {exc}", EXIT_IO) from None
    except ValueError as exc:
        raise CliError(f"bad machine file: {exc}", EXIT_USAGE) from None


def _operands(seed: int, m: int, n: int, k: int, full_range: bool):
    gen = SplitMix64(seed)
    a = Int16Matrix.from_array(gen.int16((m, k), full_range))
    b = Int16Matrix.from_array(gen.int16((k, n), full_range))
    c = Int16Matrix.from_array(gen.int16((m, n), full_range))
    return a, b, c


def _params(args) -> BlockParams:
    return BlockParams(args.mc, args.nc, args.kc, args.mr, args.nr)


def _check(params, dims, machine):
    try:
        for w in check_params(params, dims, DType.INT16, machine):
            print(f"warning: {w.message}", file=sys.stderr)
    except CapacityError as exc:
        raise CliError(f"capacity violation: {exc}", EXIT_CAPACITY) from None


def _print_run(run, dims):
    print(f"problem: m={dims.m} n={dims.n} k={dims.k}")
    print(f"predicted_cycles: {run.predicted_cycles}")
    print(f"macs_per_cycle: {run.macs_per_cycle:.6g}")
    print(f"pct_peak: {run.pct_peak:.6g}")
    if run.prediction.extrapolated:
        print("model: extrapolated (problem not divisible by block sizes)")
    for key, value in run.stats.as_dict().items():
        print(f"{key}: {value}")


def cmd_gemm(args) -> int:
    machine = _load_machine(args)
    params = _params(args)
    dims = ProblemDims(args.m, args.n, args.k)
    _check(params, dims, machine)
    a, b, c = _operands(args.seed, args.m, args.n, args.k, args.full_range)
    src = a
    if args.prepacked:
        try:
            src = read_prepacked(args.prepacked)
        except OSError as exc:
            raise CliError(f"cannot read {args.prepacked}: {exc}", EXIT_IO) from None
        except FormatError as exc:
            raise CliError(f"bad prepacked file: {exc}", EXIT_IO) from None
        if (src.m, src.k) != (args.m, args.k):
            raise CliError(f"prepacked A is {src.m}x{src.k}, expected {args.m}x{args.k}",
                           EXIT_USAGE)
        if (src.mc, src.kc, src.mr) != (args.mc, args.kc, args.mr):
            raise CliError(f"prepacked A uses mc={src.mc} kc={src.kc} mr={src.mr}", EXIT_USAGE)
        a = unpack_prepacked(src)
    run = gemm_blocked(src, b, c, dims, params, args.mode, machine, pack_b=not args.no_pack_b)
    _print_run(run, dims)
    if run.c != naive_gemm_oracle(a, b, c, args.mode):
        print("MISMATCH: blocked result differs from the naive oracle", file=sys.stderr)
        return EXIT_MISMATCH
    print("VERIFIED")
    return EXIT_OK


def _constants(args, machine):
    if args.calibrated:
        return costmodel.calibrate(machine=machine).constants
    return costmodel.DEFAULT_CONSTANTS


def cmd_sweep(args) -> int:
    machine = _load_machine(args)
    values = args.values or args.range
    if not values:
        raise CliError("one of --values or --range is required", EXIT_USAGE)
    constants = _constants(args, machine)
    if args.param == "kc":
        table = costmodel.sweep("kc", values, params=BlockParams(args.mr, args.nr, 2, args.mr,
                                                                  args.nr),
                                constants=constants, machine=machine)
    else:
        dims = ProblemDims(args.m, args.n, args.k)
        base = BlockParams(args.mr, args.nc or -(-args.n // args.nr) * args.nr,
                           args.kc or args.k, args.mr, args.nr)
        table = costmodel.sweep("mc", values, dims, base, constants, machine)
    text = table.to_csv()
    if args.out:
        try:
            with open(args.out, "w", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    else:
        sys.stdout.write(text)
    bad = [r for r in table.rows if not r.feasible]
    for r in bad:
        print(f"infeasible {r.param}={r.value}: {'; '.join(r.violations)}", file=sys.stderr)
    return EXIT_CAPACITY if bad else EXIT_OK


def cmd_tune(args) -> int:
    machine = _load_machine(args)
    dims = ProblemDims(args.m, args.n, args.k)
    try:
        res = tune(dims, machine=machine, constants=_constants(args, machine),
                   mr=args.mr, nr=args.nr)
    except InfeasibleError as exc:
        raise CliError(str(exc), EXIT_CAPACITY) from None
    p = res.params
    print(f"kc={p.kc} mc={p.mc} nc={p.nc} mr={p.mr} nr={p.nr}")
    print(f"predicted_cycles: {res.prediction.cycles}")
    print(f"macs_per_cycle: {res.prediction.macs_per_cycle:.6g}")
    print(f"pct_peak: {res.prediction.pct_peak:.6g}")
    print(f"grid_size: {res.grid_size}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    machine = _load_machine(args)
    data = costmodel.PUBLISHED_DATASET
    if args.export:
        try:
            with open(args.export, "w", newline="\n") as fh:
                fh.write(data.to_csv())
        except OSError as exc:
            raise CliError(f"cannot write {args.export}: {exc}", EXIT_IO) from None
        return EXIT_OK
    if args.data:
        try:
            data = costmodel.CalibrationDataset.from_file(args.data)
        except OSError as exc:
            raise CliError(f"cannot read {args.data}: {exc}", EXIT_IO) from None
        except (ValueError, KeyError) as exc:
            raise CliError(f"bad calibration data: {exc}", EXIT_USAGE) from None
    try:
        res = costmodel.calibrate(data, machine=machine)
    except costmodel.CalibrationError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    c = res.constants
    print(f"O={c.ukr_overhead_cycles:.6g}")
    print(f"c0={c.br_copy_fixed_cycles:.6g}")
    print(f"c1={c.br_copy_cycles_per_element:.6g}")
    print(f"omega={c.copy_overlap_fraction:.6g}")
    print(f"s={c.spill_penalty_factor:.6g}")
    print(f"fitted: {','.join(res.fitted)}")
    print("label,measured,predicted,residual")
    for r in res.residuals:
        print(f"{r.label},{r.measured:.6g},{r.predicted:.6g},{r.residual:.6g}")
    return EXIT_OK


def cmd_prepack(args) -> int:
    machine = _load_machine(args)
    params = BlockParams(args.mc, args.nr, args.kc, args.mr, args.nr)
    dims = ProblemDims(args.m, 1, args.k)
    _check(params, dims, machine)
    # A is drawn first from the seeded stream, so it matches what `gemm` draws
    a = Int16Matrix.from_array(SplitMix64(args.seed).int16((args.m, args.k), args.full_range))
    packed = prepack_A(a, dims, params)
    try:
        write_prepacked(packed, args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    print(f"wrote {len(packed.blocks)} blocks, {packed.nbytes} payload bytes to {args.out}")
    return EXIT_OK


def cmd_conv(args) -> int:
    machine = _load_machine(args)
    gen = SplitMix64(args.seed)
    if args.input:
        try:
            x = read_tensor(args.input)
        except OSError as exc:
            raise CliError(f"cannot read {args.input}: {exc}", EXIT_IO) from None
        except ValueError as exc:
            raise CliError(f"bad tensor file: {exc}", EXIT_IO) from None
    else:
        x = Tensor3(gen.int16((args.c, args.h, args.w), args.full_range))
    f = FilterBank(gen.int16((args.co, x.c, args.kh, args.kw), args.full_range))
    params = None
    if args.mc or args.nc or args.kc:
        if not (args.mc and args.nc and args.kc):
            raise CliError("--mc, --nc and --kc must be given together", EXIT_USAGE)
        params = BlockParams(args.mc, args.nc, args.kc, args.mr, args.nr)
    try:
        y, run = conv_gemm(x, f, args.stride, args.pad, params, machine, args.mode)
    except CapacityError as exc:
        raise CliError(f"capacity violation: {exc}", EXIT_CAPACITY) from None
    except InfeasibleError as exc:
        raise CliError(str(exc), EXIT_CAPACITY) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    print(f"output: {y.c}x{y.h}x{y.w}")
    _print_run(run, ProblemDims(f.co, y.h * y.w, x.c * args.kh * args.kw))
    if y != conv_direct_oracle(x, f, args.stride, args.pad, args.mode):
        print("MISMATCH: GEMM convolution differs from the direct oracle", file=sys.stderr)
        return EXIT_MISMATCH
    print("VERIFIED")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="versal-gemm", allow_abbrev=False,
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--machine", help="machine description file (default: $GEMM_MACHINE_FILE)")

    def kernel(p):
        p.add_argument("--mr", type=positive_int, default=16)
        p.add_argument("--nr", type=positive_int, default=4)

    def operands(p):
        p.add_argument("--seed", type=nonneg_int, default=0)
        p.add_argument("--full-range", action="store_true",
                       help="draw operands from the whole int16 range instead of [-128, 127]")

    p = sub.add_parser("gemm", allow_abbrev=False, help="run and verify one blocked GEMM")
    for name in ("m", "n", "k", "mc", "nc", "kc"):
        p.add_argument(f"--{name}", type=positive_int, required=True)
    kernel(p)
    operands(p)
    p.add_argument("--mode", type=writeback_mode, default=WritebackMode(),
                   help="writeback: wrap or srs:<shift>")
    p.add_argument("--prepacked", metavar="FILE", help="use pre-packed A from FILE")
    p.add_argument("--no-pack-b", action="store_true",
                   help="copy Br straight from B instead of packing Bc")
    common(p)
    p.set_defaults(func=cmd_gemm)

    p = sub.add_parser("sweep", allow_abbrev=False, help="model sweep over kc or mc, as CSV")
    p.add_argument("--param", choices=("kc", "mc"), required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--values", type=int_list, metavar="LIST")
    g.add_argument("--range", type=int_range, metavar="A:B[:STEP]")
    p.add_argument("--m", type=positive_int, default=4096)
    p.add_argument("--n", type=positive_int, default=4096)
    p.add_argument("--k", type=positive_int, default=290)
    p.add_argument("--nc", type=positive_int, help="default: n")
    p.add_argument("--kc", type=positive_int, help="default: k")
    kernel(p)
    p.add_argument("--calibrated", action="store_true",
                   help="fit constants to the embedded dataset first")
    p.add_argument("--out", metavar="FILE.csv")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tune", allow_abbrev=False, help="choose block parameters")
    for name in ("m", "n", "k"):
        p.add_argument(f"--{name}", type=positive_int, required=True)
    kernel(p)
    p.add_argument("--calibrated", action="store_true")
    common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("calibrate", allow_abbrev=False, help="fit cost constants")
    p.add_argument("--data", metavar="FILE.csv", help="param,metric,value rows")
    p.add_argument("--export", metavar="FILE.csv", help="write the embedded dataset and exit")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("prepack", allow_abbrev=False, help="pre-pack seeded weights A to a file")
    for name in ("m", "k", "mc", "kc"):
        p.add_argument(f"--{name}", type=positive_int, required=True)
    kernel(p)
    operands(p)
    p.add_argument("--out", metavar="FILE", required=True)
    common(p)
    p.set_defaults(func=cmd_prepack)

    p = sub.add_parser("conv", allow_abbrev=False, help="convolution via im2row + GEMM, verified")
    p.add_argument("--input", metavar="FILE", help="T3I16 tensor (default: seeded random)")
    p.add_argument("--c", type=positive_int, default=4)
    p.add_argument("--h", type=positive_int, default=8)
    p.add_argument("--w", type=positive_int, default=8)
    p.add_argument("--co", type=positive_int, default=8)
    p.add_argument("--kh", type=positive_int, default=3)
    p.add_argument("--kw", type=positive_int, default=3)
    p.add_argument("--stride", type=positive_int, default=1)
    p.add_argument("--pad", type=nonneg_int, default=0)
    p.add_argument("--mc", type=positive_int)
    p.add_argument("--nc", type=positive_int)
    p.add_argument("--kc", type=positive_int)
    kernel(p)
    operands(p)
    p.add_argument("--mode", type=writeback_mode, default=WritebackMode())
    common(p)
    p.set_defaults(func=cmd_conv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
