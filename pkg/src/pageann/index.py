"""Graph index construction and the on-disk index format.

The index file is a 64-byte little-endian header, a product-quantization
section, then a 4096-aligned region of one page per node (full-precision
vector + neighbor list). Byte layout is documented in docs/format.md.

Construction is Vamana-style: a random-regular start graph refined by two
passes of {best-first search from the entry point, alpha-pruned neighbor
selection, bidirectional edge insertion with overflow re-pruning}. Chunks
of nodes are searched in parallel and inserted in node order, so the built
graph is identical for a fixed seed regardless of thread count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _build_kernels as bk
from .dataset import ELEM_DTYPES, VectorDataset
from .layout import (
    NEIGHBOR_SENTINEL,
    PAGE_SIZE,
    LayoutError,
    max_degree_for_page,
    pack_page,
)
from .pq import PqCodebook, PqCodes

MAGIC = b"PGA1"
VERSION = 1
HEADER_SIZE = 64
_ELEM_TAGS = {"u8": 0, "i8": 1, "f32": 2}
_TAG_ELEMS = {v: k for k, v in _ELEM_TAGS.items()}


class GraphIndexError(Exception):
    pass


class BadMagic(GraphIndexError):
    pass


class BadVersion(GraphIndexError):
    pass


class TruncatedIndex(GraphIndexError):
    pass


@dataclass(frozen=True)
class BuildParams:
    R: int
    L_build: int | None = None
    alpha: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if self.R < 1:
            raise GraphIndexError("R must be >= 1")
        if self.alpha < 1.0:
            raise GraphIndexError("alpha must be >= 1.0")
        if self.L_build is not None and self.L_build < self.R:
            raise GraphIndexError("L_build must be >= R")

    @property
    def effective_l(self) -> int:
        return self.L_build if self.L_build is not None else max(2 * self.R, 64)


@dataclass(frozen=True)
class IndexHeader:
    count: int
    dim: int
    elem: str
    R: int
    entry_point: int
    pq_offset: int
    page_base: int

    @property
    def elem_size(self) -> int:
        return np.dtype(ELEM_DTYPES[self.elem]).itemsize

    def page_offset(self, node_id: int) -> int:
        return self.page_base + node_id * PAGE_SIZE


@dataclass
class GraphIndex:
    """In-memory index: base vectors, adjacency, PQ payload, entry point."""

    base: VectorDataset
    neighbors: np.ndarray       # (count, R) int32, -1 pads
    neighbor_counts: np.ndarray  # (count,) int32
    entry_point: int
    R: int
    book: PqCodebook
    codes: PqCodes

    @property
    def count(self) -> int:
        return self.base.count

    @property
    def dim(self) -> int:
        return self.base.dim


def medoid(base: VectorDataset, sample: int = 10_000, seed: int = 0) -> int:
    """Id of the sample point minimizing total L2 distance to the sample."""
    n = base.count
    rng = np.random.default_rng(seed)
    if n > sample:
        pick = rng.choice(n, sample, replace=False)
        pick.sort()
    else:
        pick = np.arange(n)
    x = base.data[pick].astype(np.float64)
    sums = np.zeros(len(pick), dtype=np.float64)
    xx = np.einsum("ij,ij->i", x, x)
    xt = x.T.copy()
    for s in range(0, len(pick), 2048):
        d2 = xx[s:s + 2048, None] + xx[None, :] - 2.0 * (x[s:s + 2048] @ xt)
        np.maximum(d2, 0.0, out=d2)
        sums[s:s + 2048] = np.sqrt(d2).sum(axis=1)
    return int(pick[int(np.argmin(sums))])


def build_index(base: VectorDataset, book: PqCodebook, codes: PqCodes,
                params: BuildParams, chunk: int = 2048) -> GraphIndex:
    """Build the navigable graph over the base vectors."""
    n = base.count
    if n < 2:
        raise GraphIndexError("need at least 2 vectors")
    if max_degree_for_page(base.dim, base.elem_size) < params.R:
        raise LayoutError(
            f"R={params.R} exceeds page capacity for dim={base.dim}, elem={base.elem}"
        )
    if codes.count != n:
        raise GraphIndexError("PQ codes count does not match base count")

    vecs = np.ascontiguousarray(base.data.astype(np.float32))
    r = params.R
    cap = r + max(16, r // 2)
    L = min(params.effective_l, n)
    rng = np.random.default_rng(params.seed)

    # random-regular start graph without self loops
    adj = np.full((n, cap), -1, dtype=np.int32)
    init_deg = min(r, n - 1)
    rand = rng.integers(0, n - 1, size=(n, init_deg), dtype=np.int64)
    rows = np.arange(n)[:, None]
    rand = np.where(rand >= rows, rand + 1, rand)
    adj[:, :init_deg] = rand.astype(np.int32)
    counts = np.full(n, init_deg, dtype=np.int32)

    entry = medoid(base, seed=params.seed)

    import numba
    n_threads = numba.get_num_threads()
    marks = np.full((n_threads, n), -1, dtype=np.int64)
    vis_cap = 4 * L
    order = np.arange(n, dtype=np.int32)

    for alpha in (1.0, params.alpha):
        mark_base = 0
        for start in range(0, n, chunk):
            ids = order[start:start + chunk]
            m = len(ids)
            vis_ids = np.empty((m, vis_cap), dtype=np.int32)
            vis_d = np.empty((m, vis_cap), dtype=np.float32)
            vis_n = np.empty(m, dtype=np.int64)
            bk._search_chunk(vecs, adj, counts, entry, ids, L, marks,
                             mark_base, vis_ids, vis_d, vis_n)
            mark_base += m
            bk._insert_chunk(vecs, adj, counts, ids, vis_ids, vis_d, vis_n,
                             np.float32(alpha), r, cap, entry)
        marks.fill(-1)

    bk._final_prune(vecs, adj, counts, np.float32(params.alpha), r, cap)

    neighbors = np.full((n, r), -1, dtype=np.int32)
    for i in range(n):
        neighbors[i, :counts[i]] = adj[i, :counts[i]]
    return GraphIndex(base=base, neighbors=neighbors,
                      neighbor_counts=counts.copy(), entry_point=entry,
                      R=r, book=book, codes=codes)


def reachability(idx: GraphIndex) -> float:
    """Fraction of nodes reachable from the entry point (BFS)."""
    seen = np.zeros(idx.count, dtype=bool)
    seen[idx.entry_point] = True
    frontier = np.array([idx.entry_point])
    while frontier.size:
        nbrs = idx.neighbors[frontier].ravel()
        nbrs = nbrs[nbrs >= 0]
        new = nbrs[~seen[nbrs]]
        if new.size == 0:
            break
        seen[new] = True
        frontier = np.unique(new)
    return float(seen.mean())


def _align(offset: int, alignment: int = PAGE_SIZE) -> int:
    return (offset + alignment - 1) // alignment * alignment


def write_index(idx: GraphIndex, path) -> None:
    """Serialize header + PQ section + 4096-aligned page region."""
    pq_offset = HEADER_SIZE
    cents = np.ascontiguousarray(idx.book.centroids, dtype=np.float32)
    codes = np.ascontiguousarray(idx.codes.codes)
    pq_meta = struct.pack("<IIII", idx.book.m, idx.book.ks, idx.book.sub_dim,
                          idx.codes.count)
    pq_size = len(pq_meta) + cents.nbytes + codes.nbytes
    page_base = _align(pq_offset + pq_size)

    header = struct.pack(
        "<4sIIIIIIQQ",
        MAGIC, VERSION, idx.count, idx.dim, _ELEM_TAGS[idx.base.elem],
        idx.R, idx.entry_point, pq_offset, page_base,
    )
    header = header + b"\x00" * (HEADER_SIZE - len(header))

    with open(path, "wb") as f:
        f.write(header)
        f.write(pq_meta)
        f.write(cents.tobytes())
        f.write(codes.tobytes())
        f.write(b"\x00" * (page_base - pq_offset - pq_size))
        for i in range(idx.count):
            nbrs = idx.neighbors[i, :idx.neighbor_counts[i]]
            f.write(pack_page(idx.base.data[i].tobytes(), nbrs, idx.R))


def read_index_header(path) -> IndexHeader:
    with open(path, "rb") as f:
        raw = f.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise TruncatedIndex(f"{path}: header truncated")
    magic, version, count, dim, elem_tag, r, entry, pq_off, page_base = (
        struct.unpack("<4sIIIIIIQQ", raw[:44])
    )
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"{path}: unsupported version {version}")
    if elem_tag not in _TAG_ELEMS:
        raise GraphIndexError(f"{path}: unknown element tag {elem_tag}")
    return IndexHeader(count=count, dim=dim, elem=_TAG_ELEMS[elem_tag], R=r,
                       entry_point=entry, pq_offset=pq_off, page_base=page_base)


def read_pq_section(path, header: IndexHeader | None = None):
    """Load the embedded codebook and codes (the in-memory search payload)."""
    if header is None:
        header = read_index_header(path)
    with open(path, "rb") as f:
        f.seek(header.pq_offset)
        meta = f.read(16)
        if len(meta) < 16:
            raise TruncatedIndex(f"{path}: PQ section truncated")
        m, ks, sub_dim, count = struct.unpack("<IIII", meta)
        cents = np.fromfile(f, dtype=np.float32, count=m * ks * sub_dim)
        codes = np.fromfile(f, dtype=np.uint8, count=count * m)
    if cents.size != m * ks * sub_dim or codes.size != count * m:
        raise TruncatedIndex(f"{path}: PQ section truncated")
    book = PqCodebook(centroids=cents.reshape(m, ks, sub_dim))
    return book, PqCodes(codes=codes.reshape(count, m))


def load_index(path) -> GraphIndex:
    """Read a whole index file back into memory (tests and small tools)."""
    header = read_index_header(path)
    book, codes = read_pq_section(path, header)
    dtype = np.dtype(ELEM_DTYPES[header.elem])
    vec_bytes = header.dim * dtype.itemsize
    expected = header.page_base + header.count * PAGE_SIZE
    data = np.fromfile(path, dtype=np.uint8)
    if data.size < expected:
        raise TruncatedIndex(f"{path}: page region truncated")
    pages = data[header.page_base:expected].reshape(header.count, PAGE_SIZE)
    vectors = pages[:, :vec_bytes].copy().view(dtype).reshape(header.count, header.dim)
    count_col = pages[:, vec_bytes:vec_bytes + 4].copy().view(np.uint32).ravel()
    slot_bytes = pages[:, vec_bytes + 4:vec_bytes + 4 + 4 * header.R]
    slots = slot_bytes.copy().view(np.uint32).reshape(header.count, header.R)
    neighbors = np.where(slots == NEIGHBOR_SENTINEL, -1, slots).astype(np.int32)
    return GraphIndex(
        base=VectorDataset(vectors, header.elem),
        neighbors=neighbors,
        neighbor_counts=count_col.astype(np.int32),
        entry_point=header.entry_point,
        R=header.R,
        book=book,
        codes=codes,
    )
