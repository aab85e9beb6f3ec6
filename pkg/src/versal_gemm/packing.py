"""Packing of A and B into micro-panel order, and the pre-packed weight file.

Within an Ac buffer, micro-panel ``r`` covers rows ``r*mr .. r*mr+mr-1`` and
stores element (i, p) at offset ``p*mr + i``. Bc is the mirror image: panel
``r`` covers columns ``r*nr ..`` with (p, j) at ``p*nr + j``. Partial panels
are zero-filled.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import BlockParams, Int16Matrix, ProblemDims

MAGIC = b"GEMMPKA1"
VERSION = 1
DTYPE_INT16 = 0
_HEADER = struct.Struct("<7I")


@dataclass
class AcBlock:
    ic: int
    pc: int
    mc_eff: int
    kc_eff: int
    mr: int
    payload: np.ndarray = field(repr=False)

    @property
    def n_panels(self) -> int:
        return -(-self.mc_eff // self.mr)

    def panel(self, r: int) -> np.ndarray:
        size = self.mr * self.kc_eff
        return self.payload[r * size:(r + 1) * size]

    @property
    def nbytes(self) -> int:
        return self.payload.size * 2


@dataclass
class BcBlock:
    pc: int
    jc: int
    kc_eff: int
    nc_eff: int
    nr: int
    payload: np.ndarray = field(repr=False)

    @property
    def n_panels(self) -> int:
        return -(-self.nc_eff // self.nr)

    def panel(self, r: int) -> np.ndarray:
        size = self.nr * self.kc_eff
        return self.payload[r * size:(r + 1) * size]

    @property
    def nbytes(self) -> int:
        return self.payload.size * 2


def pack_Ac(A: Int16Matrix, ic: int, pc: int, mc: int, kc: int, mr: int) -> AcBlock:
    """Pack ``A[ic:ic+mc, pc:pc+kc]`` (clamped at the edges) into mr-row micro-panels."""
    m, k = A.shape
    if not (0 <= ic < m and 0 <= pc < k):
        raise ValueError(f"offset ({ic}, {pc}) outside A of shape {A.shape}")
    if min(mc, kc, mr) < 1:
        raise ValueError("mc, kc and mr must be >= 1")
    mc_eff, kc_eff = min(mc, m - ic), min(kc, k - pc)
    panels = -(-mc_eff // mr)
    buf = np.zeros((panels * mr, kc_eff), dtype=np.int16)
    buf[:mc_eff] = A.view()[ic:ic + mc_eff, pc:pc + kc_eff]
    payload = buf.reshape(panels, mr, kc_eff).transpose(0, 2, 1).reshape(-1).copy()
    return AcBlock(ic, pc, mc_eff, kc_eff, mr, payload)


def pack_Bc(B: Int16Matrix, pc: int, jc: int, kc: int, nc: int, nr: int) -> BcBlock:
    """Pack ``B[pc:pc+kc, jc:jc+nc]`` (clamped at the edges) into nr-column micro-panels."""
    k, n = B.shape
    if not (0 <= pc < k and 0 <= jc < n):
        raise ValueError(f"offset ({pc}, {jc}) outside B of shape {B.shape}")
    if min(kc, nc, nr) < 1:
        raise ValueError("kc, nc and nr must be >= 1")
    kc_eff, nc_eff = min(kc, k - pc), min(nc, n - jc)
    panels = -(-nc_eff // nr)
    buf = np.zeros((kc_eff, panels * nr), dtype=np.int16)
    buf[:, :nc_eff] = B.view()[pc:pc + kc_eff, jc:jc + nc_eff]
    payload = buf.reshape(kc_eff, panels, nr).transpose(1, 0, 2).reshape(-1).copy()
    return BcBlock(pc, jc, kc_eff, nc_eff, nr, payload)


def unpack_Ac(block: AcBlock) -> np.ndarray:
    """Inverse of :func:`pack_Ac`: the ``mc_eff x kc_eff`` source sub-block."""
    panels, mr, kc = block.n_panels, block.mr, block.kc_eff
    full = block.payload.reshape(panels, kc, mr).transpose(0, 2, 1).reshape(panels * mr, kc)
    return full[:block.mc_eff].copy()


def unpack_Bc(block: BcBlock) -> np.ndarray:
    panels, nr, kc = block.n_panels, block.nr, block.kc_eff
    full = block.payload.reshape(panels, kc, nr).transpose(1, 0, 2).reshape(kc, panels * nr)
    return full[:, :block.nc_eff].copy()


@dataclass
class PackedA:
    """All Ac buffers of a weight matrix, keyed by (pc_index, ic_index) in pc-major order."""

    m: int
    k: int
    mc: int
    kc: int
    mr: int
    blocks: dict[tuple[int, int], AcBlock]

    @property
    def nbytes(self) -> int:
        return sum(b.nbytes for b in self.blocks.values())

    def block(self, pc_index: int, ic_index: int) -> AcBlock:
        return self.blocks[(pc_index, ic_index)]

    def __eq__(self, other):
        if not isinstance(other, PackedA):
            return NotImplemented
        if (self.m, self.k, self.mc, self.kc, self.mr) != (other.m, other.k, other.mc,
                                                           other.kc, other.mr):
            return False
        if list(self.blocks) != list(other.blocks):
            return False
        return all(np.array_equal(self.blocks[key].payload, other.blocks[key].payload)
                   for key in self.blocks)


@dataclass
class PackedB:
    """All Bc buffers of B, keyed by (pc_index, jc_index)."""

    k: int
    n: int
    kc: int
    nc: int
    nr: int
    blocks: dict[tuple[int, int], BcBlock]

    @property
    def nbytes(self) -> int:
        return sum(b.nbytes for b in self.blocks.values())


def prepack_A(A: Int16Matrix, dims: ProblemDims, params: BlockParams) -> PackedA:
    """Pack every Ac block of A ahead of time, as done for FPGA-resident weights."""
    if A.shape != (dims.m, dims.k):
        raise ValueError(f"A has shape {A.shape}, expected {(dims.m, dims.k)}")
    blocks = {}
    for pi, pc in enumerate(range(0, dims.k, params.kc)):
        for ii, ic in enumerate(range(0, dims.m, params.mc)):
            blocks[(pi, ii)] = pack_Ac(A, ic, pc, params.mc, params.kc, params.mr)
    return PackedA(dims.m, dims.k, params.mc, params.kc, params.mr, blocks)


def prepack_B(B: Int16Matrix, params: BlockParams) -> PackedB:
    k, n = B.shape
    blocks = {}
    for pi, pc in enumerate(range(0, k, params.kc)):
        for ji, jc in enumerate(range(0, n, params.nc)):
            blocks[(pi, ji)] = pack_Bc(B, pc, jc, params.kc, params.nc, params.nr)
    return PackedB(k, n, params.kc, params.nc, params.nr, blocks)


def unpack_prepacked(p: PackedA) -> Int16Matrix:
    """Rebuild the m x k weight matrix from its packed blocks."""
    out = np.zeros((p.m, p.k), dtype=np.int16)
    for b in p.blocks.values():
        out[b.ic:b.ic + b.mc_eff, b.pc:b.pc + b.kc_eff] = unpack_Ac(b)
    return Int16Matrix.from_array(out)


class FormatError(ValueError):
    """Malformed pre-packed weight file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


def serialize_prepacked(p: PackedA, sink=None) -> bytes:
    """Write ``p`` in the GEMMPKA1 format to ``sink`` (file object) and return the bytes."""
    if p.m < 1 or p.k < 1 or not p.blocks:
        raise ValueError("cannot serialize an empty PackedA")
    parts = [MAGIC, _HEADER.pack(VERSION, DTYPE_INT16, p.m, p.k, p.mc, p.kc, p.mr)]
    for key in _block_order(p.m, p.k, p.mc, p.kc):
        parts.append(p.blocks[key].payload.astype("<i2").tobytes())
    data = b"".join(parts)
    if sink is not None:
        sink.write(data)
    return data


def _block_order(m, k, mc, kc):
    return [(pi, ii) for pi in range(-(-k // kc)) for ii in range(-(-m // mc))]


def deserialize_prepacked(source) -> PackedA:
    """Parse a GEMMPKA1 file from bytes or a binary file object."""
    data = source if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    data = bytes(data)
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, expected GEMMPKA1", 0)
    off = len(MAGIC)
    if len(data) < off + _HEADER.size:
        raise FormatError("truncated header", len(data))
    version, dtype, m, k, mc, kc, mr = _HEADER.unpack_from(data, off)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", off)
    if dtype != DTYPE_INT16:
        raise FormatError(f"unsupported dtype code {dtype}", off + 4)
    for i, (name, v) in enumerate(zip(("m", "k", "mc", "kc", "mr"), (m, k, mc, kc, mr))):
        if v < 1:
            raise FormatError(f"{name} must be >= 1, got {v}", off + 8 + 4 * i)
    off += _HEADER.size
    blocks = {}
    for pi, ii in _block_order(m, k, mc, kc):
        ic, pc = ii * mc, pi * kc
        mc_eff, kc_eff = min(mc, m - ic), min(kc, k - pc)
        count = -(-mc_eff // mr) * mr * kc_eff
        end = off + 2 * count
        if end > len(data):
            raise FormatError(f"truncated payload in block (pc={pi}, ic={ii})", len(data))
        payload = np.frombuffer(data, dtype="<i2", count=count, offset=off).astype(np.int16)
        blocks[(pi, ii)] = AcBlock(ic, pc, mc_eff, kc_eff, mr, payload)
        off = end
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after last block", off)
    return PackedA(m, k, mc, kc, mr, blocks)


def write_prepacked(p: PackedA, path) -> None:
    with open(path, "wb") as fh:
        serialize_prepacked(p, fh)


def read_prepacked(path) -> PackedA:
    with open(path, "rb") as fh:
        return deserialize_prepacked(fh)


__all__ = [
    "AcBlock", "BcBlock", "PackedA", "PackedB", "FormatError",
    "pack_Ac", "pack_Bc", "unpack_Ac", "unpack_Bc", "prepack_A", "prepack_B",
    "unpack_prepacked", "serialize_prepacked", "deserialize_prepacked", "write_prepacked", "read_prepacked",
]
