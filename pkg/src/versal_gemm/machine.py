"""VCK190 memory/compute description and capacity-derived parameter bounds."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .core import BlockParams, DType, ProblemDims

MACHINE_FILE_ENV = "GEMM_MACHINE_FILE"


@dataclass(frozen=True)
class MachineModel:
    """Capacities in bytes plus per-datatype peak MACs/cycle of one AIE tile.

    ``br_local_budget_bytes`` is the part of the tile's local memory available
    to one Br micro-panel. The default 2,320 B (290 x 4 int16) reproduces the
    kc <= 290 bound measured for nr = 4.
    """

    reg_bytes: int = 2048
    local_bytes: int = 32 * 1024
    fpga_bytes: int = 20 * 2**20
    ddr_bytes: int = 2 * 2**30
    peak_int8: int = 128
    peak_int16: int = 32
    peak_fp32: int = 8
    acc_lanes: int = 64
    br_local_budget_bytes: int = 2320
    ac_fpga_budget_bytes: int | None = None

    def __post_init__(self):
        if self.ac_fpga_budget_bytes is None:
            object.__setattr__(self, "ac_fpga_budget_bytes", self.fpga_bytes)
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")
        if self.br_local_budget_bytes > self.local_bytes:
            raise ValueError("br_local_budget_bytes exceeds local_bytes")
        if self.ac_fpga_budget_bytes > self.fpga_bytes:
            raise ValueError("ac_fpga_budget_bytes exceeds fpga_bytes")

    @property
    def peak_macs_per_cycle(self) -> dict[DType, int]:
        return {DType.INT8: self.peak_int8, DType.INT16: self.peak_int16,
                DType.FP32: self.peak_fp32}

    def peak(self, dtype: DType = DType.INT16) -> int:
        return self.peak_macs_per_cycle[dtype]

    def replace(self, **changes) -> "MachineModel":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str) -> "MachineModel":
        """Parse ``name = integer`` lines; ``#`` starts a comment. Unknown keys are errors."""
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            name, sep, value = line.partition("=")
            name = name.strip()
            if not sep:
                raise ValueError(f"line {lineno}: expected 'name = integer'")
            if name not in known:
                raise ValueError(f"line {lineno}: unknown key {name!r}")
            try:
                values[name] = int(value.strip())
            except ValueError:
                raise ValueError(f"line {lineno}: {name} is not an integer") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "MachineModel":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_env(cls) -> "MachineModel":
        path = os.environ.get(MACHINE_FILE_ENV)
        return cls.from_file(path) if path else cls()


DEFAULT_MACHINE = MachineModel()


@dataclass(frozen=True)
class Placement:
    """Memory level of each operand. Only the reference placement is supported."""

    A: str = "fpga"
    Bc: str = "ddr"
    Br: str = "local"
    C: str = "ddr"
    Cr: str = "registers"

    def __post_init__(self):
        if dataclasses.astuple(self) != ("fpga", "ddr", "local", "ddr", "registers"):
            raise ValueError(f"unsupported placement {dataclasses.astuple(self)}")


REFERENCE_PLACEMENT = Placement()


def kc_max(nr: int, dtype: DType = DType.INT16, machine: MachineModel = DEFAULT_MACHINE) -> int:
    """Largest kc whose kc x nr Br micro-panel fits the local-memory budget."""
    if nr < 1:
        raise ValueError("nr must be >= 1")
    return machine.br_local_budget_bytes // (nr * dtype.elem_bytes)


def mc_max(kc: int, dtype: DType = DType.INT16, machine: MachineModel = DEFAULT_MACHINE) -> int:
    """Largest mc whose mc x kc Ac buffer fits the FPGA RAM budget."""
    if kc < 1:
        raise ValueError("kc must be >= 1")
    return machine.ac_fpga_budget_bytes // (kc * dtype.elem_bytes)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    fatal: bool = True

    def __str__(self):
        return f"{'error' if self.fatal else 'warning'}: {self.message}"


class CapacityError(ValueError):
    """Raised when block parameters violate machine capacities or layout rules."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(v.message for v in self.violations))


def validate_params(params: BlockParams, dims: ProblemDims | None = None,
                    dtype: DType = DType.INT16,
                    machine: MachineModel = DEFAULT_MACHINE) -> list[Violation]:
    """Return every violation of ``params`` (empty list means ok).

    Accumulator spill is reported as a non-fatal warning.
    """
    out = []
    eb = dtype.elem_bytes
    bound = kc_max(params.nr, dtype, machine)
    if params.kc > bound:
        out.append(Violation(
            "br_local",
            f"Br exceeds local budget: kc={params.kc} > kc_max={bound} "
            f"({params.kc * params.nr * eb} B > {machine.br_local_budget_bytes} B)"))
    ac_bytes = params.mc * params.kc * eb
    if ac_bytes > machine.ac_fpga_budget_bytes:
        out.append(Violation(
            "ac_fpga",
            f"Ac exceeds FPGA budget: mc*kc*{eb}={ac_bytes} B > {machine.ac_fpga_budget_bytes} B "
            f"(mc_max={mc_max(params.kc, dtype, machine)})"))
    if params.mc % params.mr:
        out.append(Violation("mc_multiple", f"mc={params.mc} is not a multiple of mr={params.mr}"))
    if params.nc % params.nr:
        out.append(Violation("nc_multiple", f"nc={params.nc} is not a multiple of nr={params.nr}"))
    if (params.mr, params.nr) == (16, 4) and params.kc % 2:
        out.append(Violation("kc_even", f"kc={params.kc} must be even for the 16x4 micro-kernel"))
    lanes = params.mr * params.nr
    if lanes > machine.acc_lanes:
        out.append(Violation(
            "spill",
            f"accumulator spill: mr*nr={lanes} lanes > {machine.acc_lanes} available",
            fatal=False))
    return out


def check_params(params, dims=None, dtype=DType.INT16, machine=DEFAULT_MACHINE) -> list[Violation]:
    """Like :func:`validate_params` but raise :class:`CapacityError` on fatal violations.

    Returns the non-fatal warnings.
    """
    violations = validate_params(params, dims, dtype, machine)
    fatal = [v for v in violations if v.fatal]
    if fatal:
        raise CapacityError(fatal)
    return violations
