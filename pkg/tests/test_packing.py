import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from versal_gemm.core import BlockParams, Int16Matrix, ProblemDims
from versal_gemm.driver import transfer_stats
from versal_gemm.packing import (MAGIC, FormatError, deserialize_prepacked, pack_Ac, pack_Bc,
                                 prepack_A, prepack_B, read_prepacked, serialize_prepacked,
                                 unpack_Ac, unpack_Bc, unpack_prepacked, write_prepacked)

from conftest import rand_matrix


def ac_index_oracle(A, ic, pc, mc, kc, mr):
    """Element-by-element packing straight from the offset formula."""
    a = A.to_array()
    mc_e, kc_e = min(mc, a.shape[0] - ic), min(kc, a.shape[1] - pc)
    panels = -(-mc_e // mr)
    out = np.zeros(panels * mr * kc_e, dtype=np.int16)
    for r in range(panels):
        for p in range(kc_e):
            for i in range(mr):
                row = ic + r * mr + i
                if r * mr + i < mc_e:
                    out[r * mr * kc_e + p * mr + i] = a[row, pc + p]
    return out


def bc_index_oracle(B, pc, jc, kc, nc, nr):
    b = B.to_array()
    kc_e, nc_e = min(kc, b.shape[0] - pc), min(nc, b.shape[1] - jc)
    panels = -(-nc_e // nr)
    out = np.zeros(panels * nr * kc_e, dtype=np.int16)
    for r in range(panels):
        for p in range(kc_e):
            for j in range(nr):
                if r * nr + j < nc_e:
                    out[r * nr * kc_e + p * nr + j] = b[pc + p, jc + r * nr + j]
    return out


def test_pack_ac_small_example():
    A = Int16Matrix.from_array([[1, 2], [3, 4]])
    assert pack_Ac(A, 0, 0, 2, 2, 2).payload.tolist() == [1, 3, 2, 4]


def test_pack_bc_small_example():
    B = Int16Matrix.from_array([[1, 2], [3, 4]])
    assert pack_Bc(B, 0, 0, 2, 2, 2).payload.tolist() == [1, 2, 3, 4]


def test_partial_panel_is_zero_filled():
    A = Int16Matrix.from_array(np.arange(1, 1 + 3 * 2).reshape(3, 2))
    blk = pack_Ac(A, 0, 0, 3, 2, 2)
    assert blk.n_panels == 2
    assert blk.panel(1).tolist() == [5, 0, 6, 0]


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 40), st.integers(1, 30), st.data())
def test_pack_ac_matches_index_formula(m, k, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    A = rand_matrix(rng, m, k, ld=k + data.draw(st.integers(0, 3)))
    ic, pc = data.draw(st.integers(0, m - 1)), data.draw(st.integers(0, k - 1))
    mc, kc, mr = (data.draw(st.integers(1, 24)) for _ in range(3))
    blk = pack_Ac(A, ic, pc, mc, kc, mr)
    np.testing.assert_array_equal(blk.payload, ac_index_oracle(A, ic, pc, mc, kc, mr))
    np.testing.assert_array_equal(unpack_Ac(blk),
                                  A.to_array()[ic:ic + blk.mc_eff, pc:pc + blk.kc_eff])


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 30), st.integers(1, 40), st.data())
def test_pack_bc_matches_index_formula(k, n, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    B = rand_matrix(rng, k, n)
    pc, jc = data.draw(st.integers(0, k - 1)), data.draw(st.integers(0, n - 1))
    kc, nc, nr = (data.draw(st.integers(1, 24)) for _ in range(3))
    blk = pack_Bc(B, pc, jc, kc, nc, nr)
    np.testing.assert_array_equal(blk.payload, bc_index_oracle(B, pc, jc, kc, nc, nr))
    np.testing.assert_array_equal(unpack_Bc(blk),
                                  B.to_array()[pc:pc + blk.kc_eff, jc:jc + blk.nc_eff])


def test_pack_respects_leading_dimension(rng):
    arr = rng.integers(-100, 100, (5, 7))
    tight = Int16Matrix.from_array(arr)
    loose = Int16Matrix.from_array(arr, ld=11)
    np.testing.assert_array_equal(pack_Ac(tight, 1, 2, 4, 3, 2).payload,
                                  pack_Ac(loose, 1, 2, 4, 3, 2).payload)


def test_pack_rejects_out_of_range_offsets(rng):
    A = rand_matrix(rng, 4, 4)
    with pytest.raises(ValueError):
        pack_Ac(A, 4, 0, 2, 2, 2)
    with pytest.raises(ValueError):
        pack_Bc(A, 0, -1, 2, 2, 2)


def test_prepack_composition_round_trip(rng):
    A = rand_matrix(rng, 37, 23)
    p = prepack_A(A, ProblemDims(37, 5, 23), BlockParams(16, 4, 10))
    assert sorted(p.blocks) == [(pi, ii) for pi in range(3) for ii in range(3)]
    assert unpack_prepacked(p) == A


def test_prepack_b_covers_all_blocks(rng):
    B = rand_matrix(rng, 23, 10)
    p = prepack_B(B, BlockParams(16, 8, 10))
    assert sorted(p.blocks) == [(pi, ji) for pi in range(3) for ji in range(2)]
    assert p.nbytes == 2 * 23 * (8 + 4)


def test_br_bytes_at_reference_size():
    s = transfer_stats(ProblemDims(4096, 4096, 290), BlockParams(4096, 4096, 290), prepacked=True)
    assert s.bytes_br_copied == 2_375_680 == 1024 * 290 * 4 * 2


def _random_packed(rng):
    m, k = (int(v) for v in rng.integers(1, 50, 2))
    mc = 16 * int(rng.integers(1, 4))
    kc = int(rng.integers(1, 20))
    A = rand_matrix(rng, m, k)
    return A, prepack_A(A, ProblemDims(m, 1, k), BlockParams(mc, 4, kc))


def test_serialize_round_trip_randomized():
    rng = np.random.default_rng(9)
    for _ in range(50):
        _, p = _random_packed(rng)
        data = serialize_prepacked(p)
        assert deserialize_prepacked(data) == p
        assert deserialize_prepacked(io.BytesIO(data)) == p


def test_serialized_layout_is_little_endian(rng):
    A = Int16Matrix.from_array([[1, -2]])
    data = serialize_prepacked(prepack_A(A, ProblemDims(1, 1, 2), BlockParams(16, 4, 2)))
    assert data[:8] == MAGIC
    assert data[8:12] == (1).to_bytes(4, "little")
    payload = data[8 + 28:]
    assert len(payload) == 16 * 2 * 2
    assert payload[:2] == (1).to_bytes(2, "little", signed=True)
    assert payload[32:34] == (-2).to_bytes(2, "little", signed=True)


def test_file_round_trip(tmp_path, rng):
    _, p = _random_packed(rng)
    path = tmp_path / "w.bin"
    write_prepacked(p, path)
    assert read_prepacked(path) == p


def test_format_errors(rng):
    _, p = _random_packed(rng)
    data = serialize_prepacked(p)
    with pytest.raises(FormatError) as e:
        deserialize_prepacked(b"XXXXXXXX" + data[8:])
    assert e.value.offset == 0
    with pytest.raises(FormatError, match="truncated header"):
        deserialize_prepacked(data[:20])
    with pytest.raises(FormatError, match="truncated payload"):
        deserialize_prepacked(data[:-2])
    with pytest.raises(FormatError, match="trailing"):
        deserialize_prepacked(data + b"\0\0")
    bad_version = data[:8] + (2).to_bytes(4, "little") + data[12:]
    with pytest.raises(FormatError, match="version"):
        deserialize_prepacked(bad_version)
    zero_m = data[:16] + (0).to_bytes(4, "little") + data[20:]
    with pytest.raises(FormatError, match="m must be"):
        deserialize_prepacked(zero_m)


def test_cannot_serialize_empty():
    from versal_gemm.packing import PackedA
    with pytest.raises(ValueError):
        serialize_prepacked(PackedA(1, 1, 16, 2, 16, {}))
