import pytest

from versal_gemm.core import BlockParams, DType, ProblemDims
from versal_gemm.machine import (DEFAULT_MACHINE, MACHINE_FILE_ENV, CapacityError, MachineModel,
                                 Placement, check_params, kc_max, mc_max, validate_params)


@pytest.mark.parametrize("nr, dtype, expected", [(4, DType.INT16, 290), (8, DType.INT16, 145),
                                                 (4, DType.FP32, 145), (4, DType.INT8, 580)])
def test_kc_max(nr, dtype, expected):
    assert kc_max(nr, dtype) == expected


def test_kc_max_tiny_budget():
    m = DEFAULT_MACHINE.replace(br_local_budget_bytes=8)
    assert kc_max(4, DType.INT16, m) == 1


def test_mc_max():
    assert mc_max(290) == 20 * 2**20 // 580 == 36157


def test_kc_291_rejected_with_bound_in_message():
    v = validate_params(BlockParams(4096, 4096, 291))
    codes = {x.code for x in v}
    assert "br_local" in codes
    assert any("kc_max=290" in x.message for x in v)


def test_reference_params_are_clean():
    assert validate_params(BlockParams(4096, 4096, 290), ProblemDims(4096, 4096, 290)) == []


@pytest.mark.parametrize("params, code", [
    (BlockParams(36160, 4, 290), "ac_fpga"),
    (BlockParams(20, 4, 2), "mc_multiple"),
    (BlockParams(16, 6, 2), "nc_multiple"),
    (BlockParams(16, 4, 7), "kc_even"),
])
def test_single_violation(params, code):
    assert [v.code for v in validate_params(params)] == [code]
    with pytest.raises(CapacityError):
        check_params(params)


def test_odd_kc_fine_for_other_kernels():
    assert validate_params(BlockParams(8, 4, 7, 8, 4)) == []


def test_spill_is_only_a_warning():
    warnings = check_params(BlockParams(32, 4, 10, 32, 4))
    assert [w.code for w in warnings] == ["spill"]
    assert not warnings[0].fatal


def test_machine_file_parsing(tmp_path, monkeypatch):
    text = "# smaller tile\nbr_local_budget_bytes = 1600  # 200 x 4 int16\nfpga_bytes=1048576\n"
    m = MachineModel.from_text(text)
    assert kc_max(4, DType.INT16, m) == 200
    assert m.ac_fpga_budget_bytes == 1048576
    path = tmp_path / "m.txt"
    path.write_text(text)
    monkeypatch.setenv(MACHINE_FILE_ENV, str(path))
    assert MachineModel.from_env() == m
    monkeypatch.delenv(MACHINE_FILE_ENV)
    assert MachineModel.from_env() == DEFAULT_MACHINE


@pytest.mark.parametrize("text", ["bogus = 3", "local_bytes 5", "local_bytes = x",
                                  "peak_int16 = 0", "br_local_budget_bytes = 99999"])
def test_machine_file_errors(text):
    with pytest.raises(ValueError):
        MachineModel.from_text(text)


def test_peaks():
    assert DEFAULT_MACHINE.peak(DType.INT16) == 32
    assert DEFAULT_MACHINE.peak(DType.INT8) == 128
    assert DEFAULT_MACHINE.peak(DType.FP32) == 8


def test_only_reference_placement():
    Placement()
    with pytest.raises(ValueError):
        Placement(A="ddr")
