"""Blocked INT16 GEMM for the AIE tile of a Versal VCK190, emulated in software.

Packing, a bit-exact 16x4 micro-kernel emulator, the five-loop driver with
data-movement accounting, an analytical cycle model calibrated on published
measurements, a cache-parameter tuner and IM2ROW convolution lowering.
"""
from .core import (WRAP16, BlockParams, DType, Int16Matrix, ProblemDims, WritebackMode,
                   acc48_mac, naive_gemm_oracle, wrap48, writeback)
from .costmodel import (DEFAULT_CONSTANTS, PUBLISHED_DATASET, CalibrationDataset, CostConstants,
                        calibrate, loss_breakdown, predict_br_copy_cycles, predict_gemm,
                        predict_ukr_cycles, sweep)
from .driver import GemmRun, TransferStats, gemm_blocked, gemm_reference_blocked
from .lowering import FilterBank, Tensor3, conv_direct_oracle, conv_gemm, im2row
from .machine import DEFAULT_MACHINE, CapacityError, MachineModel, kc_max, mc_max, validate_params
from .microkernel import MicroKernelShape, mac16_emu, resource_check, ukr_16x4, ukr_generic
from .packing import PackedA, pack_Ac, pack_Bc, prepack_A, deserialize_prepacked, serialize_prepacked
from .tuner import grid_candidates, tune

__version__ = "0.1.0"
