"""Acceptance criteria, one test each, with a PASS/FAIL line printed per criterion."""
import time

import numpy as np
import pytest

from versal_gemm.core import BlockParams, Int16Matrix, ProblemDims, naive_gemm_oracle
from versal_gemm.costmodel import (DEFAULT_CONSTANTS, calibrate, loss_breakdown, predict_gemm,
                                   predict_ukr_cycles)
from versal_gemm.driver import gemm_blocked
from versal_gemm.lowering import FilterBank, Tensor3, conv_direct_oracle, conv_gemm
from versal_gemm.machine import kc_max, validate_params
from versal_gemm.microkernel import MicroKernelShape
from versal_gemm.packing import deserialize_prepacked, prepack_A, read_prepacked, \
    serialize_prepacked, write_prepacked
from versal_gemm.tuner import tune

pytestmark = pytest.mark.acceptance

REF = ProblemDims(4096, 4096, 290)


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail
    return emit


def _rand(rng, rows, cols):
    return Int16Matrix.from_array(rng.integers(-32768, 32768, (rows, cols)))


def test_c1_bit_exact_blocked_gemm(report):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        m, n, k = (int(v) for v in rng.integers(1, 97, 3))
        params = BlockParams(16 * int(rng.integers(1, -(-m // 16) + 2)),
                             4 * int(rng.integers(1, -(-n // 4) + 2)),
                             2 * int(rng.integers(1, -(-k // 2) + 2)))
        A, B, C = _rand(rng, m, k), _rand(rng, k, n), _rand(rng, m, n)
        mismatches += gemm_blocked(A, B, C, params=params).c != naive_gemm_oracle(A, B, C)
    elapsed = time.perf_counter() - start
    report("C1 bit-exactness", mismatches == 0 and elapsed < 60,
           f"{mismatches} mismatches in 1000 trials, {elapsed:.1f} s (limit 60 s)")


def test_c2_microkernel_cycle_anchors(report):
    got = (predict_ukr_cycles(256), predict_ukr_cycles(64),
           predict_ukr_cycles(256, MicroKernelShape(32, 4)))
    ok = got[0] == 596 and got[1] == 212 and abs(got[2] - 1429) <= 0.01 * 1429
    report("C2 ukr cycle anchors", ok,
           f"kc=256 -> {got[0]} (596), kc=64 -> {got[1]} (212), 32x4 kc=256 -> {got[2]} (1429 +-1%)")


def test_c3_kc_sweep(report):
    published = {8: 16.16, 16: 27.59, 32: 43.24, 64: 60.38, 128: 75.29, 290: 87.61}
    model = {kc: 100.0 * 64 * kc / 32 / predict_ukr_cycles(kc) for kc in published}
    worst = max(abs(model[kc] - v) for kc, v in published.items())
    ok = worst <= 1.0 and 86.5 <= model[290] <= 88.5
    detail = ", ".join(f"{kc}:{model[kc]:.2f}/{v}" for kc, v in published.items())
    report("C3 kc sweep", ok, f"max |err| {worst:.2f} pt (limit 1.0); pct(290)={model[290]:.2f} "
           f"in [86.5, 88.5]; {detail}")


def test_c4_mc_sweep(report):
    published = {128: 24.62, 256: 26.23, 512: 27.03, 1024: 27.44, 2048: 27.64, 4096: 27.74}
    start = time.perf_counter()
    constants = calibrate().constants
    model = {mc: predict_gemm(REF, BlockParams(mc, REF.n, REF.k), constants).macs_per_cycle
             for mc in published}
    elapsed = time.perf_counter() - start
    worst = max(abs(model[mc] - v) for mc, v in published.items())
    detail = ", ".join(f"{mc}:{model[mc]:.2f}/{v}" for mc, v in published.items())
    report("C4 mc sweep", worst <= 0.2 and elapsed < 1.0,
           f"max |err| {worst:.3f} MACs/cycle (limit 0.2), {elapsed:.2f} s; {detail}")


def test_c5_capacity_gate(report):
    bound = kc_max(4)
    v = validate_params(BlockParams(4096, 4096, 291), REF)
    rejected = any(x.fatal and x.code == "br_local" and "kc_max=290" in x.message for x in v)
    report("C5 capacity gate", bound == 290 and rejected,
           f"kc_max={bound} (290), kc=291 rejected={rejected}")


def test_c6_loss_decomposition(report):
    lb = loss_breakdown(REF, BlockParams(4096, 4096, 290), calibrate().constants)
    ok_ukr = 12 - 2 <= lb.ukr_overhead_points <= 15 + 2
    ok_copy = 3 - 2 <= lb.copy_exposed_points <= 6 + 2
    report("C6 loss decomposition", ok_ukr and ok_copy,
           f"ukr overhead {lb.ukr_overhead_points:.2f} pt (target 12-15 +-2), "
           f"exposed copy {lb.copy_exposed_points:.2f} pt (target 3-6 +-2); "
           f"unoverlapped copy share {lb.copy_raw_points:.2f} pt, pct_peak {lb.pct_peak:.2f}")


def test_c7_convolution_equivalence(report):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    done = mismatches = 0
    while done < 200:
        kh, kw = (int(v) for v in rng.integers(1, 6, 2))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 3))
        c, co = (int(v) for v in rng.integers(1, 17, 2))
        h, w = (int(v) for v in rng.integers(1, 17, 2))
        if (h + 2 * pad - kh) < 0 or (w + 2 * pad - kw) < 0 \
                or (h + 2 * pad - kh) % stride or (w + 2 * pad - kw) % stride:
            continue
        x = Tensor3(rng.integers(-32768, 32768, (c, h, w)))
        f = FilterBank(rng.integers(-32768, 32768, (co, c, kh, kw)))
        y, _ = conv_gemm(x, f, stride, pad)
        mismatches += y != conv_direct_oracle(x, f, stride, pad)
        done += 1
    elapsed = time.perf_counter() - start
    report("C7 convolution equivalence", mismatches == 0 and elapsed < 60,
           f"{mismatches} mismatches in 200 shapes, {elapsed:.1f} s (limit 60 s)")


def _exhaustive_best(dims):
    nc = -(-dims.n // 4) * 4
    best = 0.0
    for kc in range(2, min(dims.k + 1, 290) + 1, 2):
        for mc in range(16, -(-dims.m // 16) * 16 + 1, 16):
            best = max(best, predict_gemm(dims, BlockParams(mc, nc, kc)).macs_per_cycle)
    return best


def test_c8_tuner_optimality(report):
    rng = np.random.default_rng(8)
    problems = [ProblemDims(*(int(v) for v in rng.integers(1, 257, 3))) for _ in range(50)]
    misses = unstable = 0
    for d in problems:
        first = tune(d)
        misses += first.prediction.macs_per_cycle != _exhaustive_best(d)
        unstable += any(tune(d).params != first.params for _ in range(2))
    report("C8 tuner optimality", misses == 0 and unstable == 0,
           f"{misses}/50 below exhaustive argmax, {unstable}/50 nondeterministic")


def test_c9_prepack_round_trip(report, tmp_path):
    rng = np.random.default_rng(9)
    bad_rt = bad_gemm = 0
    for t in range(25):
        m, n, k = (int(v) for v in rng.integers(1, 60, 3))
        params = BlockParams(16 * int(rng.integers(1, 4)), 4 * int(rng.integers(1, 4)),
                             2 * int(rng.integers(1, 12)))
        dims = ProblemDims(m, n, k)
        A, B, C = _rand(rng, m, k), _rand(rng, k, n), _rand(rng, m, n)
        packed = prepack_A(A, dims, params)
        bad_rt += deserialize_prepacked(serialize_prepacked(packed)) != packed
        path = tmp_path / f"a{t}.bin"
        write_prepacked(packed, path)
        via_file = gemm_blocked(read_prepacked(path), B, C, dims, params).c
        bad_gemm += via_file != gemm_blocked(A, B, C, dims, params).c
    report("C9 prepack round trip", bad_rt == 0 and bad_gemm == 0,
           f"{bad_rt}/25 round-trip failures, {bad_gemm}/25 GEMM differences via file")
