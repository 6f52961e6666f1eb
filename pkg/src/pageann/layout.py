"""Page layout arithmetic for the one-node-per-4KB-page index.

A node page holds the full-precision vector, a 4-byte neighbor count, and R
4-byte neighbor id slots, zero-padded to exactly 4096 bytes. Two payload
figures are exposed: `node_payload_bytes` includes the count field the file
actually stores, `payload_no_count` is the vector+ids figure used in the
fill-ratio arithmetic.
"""

from __future__ import annotations

import numpy as np

PAGE_SIZE = 4096
NEIGHBOR_SENTINEL = 0xFFFFFFFF


class LayoutError(Exception):
    pass


class PageOverflow(LayoutError):
    """Requested degree does not fit in one page."""


def _check_args(dim: int, elem_size: int, r: int) -> None:
    if dim < 1:
        raise LayoutError(f"dim must be >= 1, got {dim}")
    if elem_size < 1:
        raise LayoutError(f"elem_size must be >= 1, got {elem_size}")
    if r < 0:
        raise LayoutError(f"R must be >= 0, got {r}")


def node_payload_bytes(dim: int, elem_size: int, r: int) -> int:
    """Bytes of useful data per page including the neighbor-count field."""
    _check_args(dim, elem_size, r)
    return dim * elem_size + 4 + 4 * r


def payload_no_count(dim: int, elem_size: int, r: int) -> int:
    """Vector + id-slot bytes only (the count field excluded)."""
    _check_args(dim, elem_size, r)
    return dim * elem_size + 4 * r


def fill_ratio(dim: int, elem_size: int, r: int) -> float:
    """Useful fraction of the 4KB access unit, on the no-count payload."""
    payload = payload_no_count(dim, elem_size, r)
    if payload > PAGE_SIZE:
        raise PageOverflow(
            f"payload {payload}B exceeds the {PAGE_SIZE}B page (degree {r} too large)"
        )
    return payload / PAGE_SIZE


def max_degree_for_page(dim: int, elem_size: int) -> int:
    """Largest R whose full page payload (count field included) fits."""
    _check_args(dim, elem_size, 0)
    fixed = dim * elem_size + 4
    if fixed >= PAGE_SIZE:
        raise PageOverflow(
            f"vector plus count ({fixed}B) leaves no room for neighbors"
        )
    return (PAGE_SIZE - fixed) // 4


def pack_page(vector_bytes: bytes, neighbors: np.ndarray, r: int) -> bytes:
    """Serialize one node to exactly PAGE_SIZE bytes."""
    neighbors = np.asarray(neighbors, dtype=np.uint32)
    n = neighbors.shape[0]
    if n > r:
        raise LayoutError(f"{n} neighbors exceed R={r}")
    if len(vector_bytes) + 4 + 4 * r > PAGE_SIZE:
        raise PageOverflow("node does not fit in one page")
    slots = np.full(r, NEIGHBOR_SENTINEL, dtype=np.uint32)
    slots[:n] = neighbors
    page = bytearray(PAGE_SIZE)
    pos = len(vector_bytes)
    page[:pos] = vector_bytes
    page[pos:pos + 4] = np.uint32(n).tobytes()
    page[pos + 4:pos + 4 + 4 * r] = slots.tobytes()
    return bytes(page)


def unpack_page(page, dim: int, elem_dtype, r: int):
    """Parse a page into (vector ndarray, neighbor id ndarray)."""
    elem_dtype = np.dtype(elem_dtype)
    vec_bytes = dim * elem_dtype.itemsize
    buf = np.frombuffer(page, dtype=np.uint8, count=PAGE_SIZE)
    vector = buf[:vec_bytes].view(elem_dtype)
    count = int(buf[vec_bytes:vec_bytes + 4].view(np.uint32)[0])
    if count > r:
        raise LayoutError(f"neighbor count {count} exceeds R={r}")
    ids = buf[vec_bytes + 4:vec_bytes + 4 + 4 * count].view(np.uint32)
    return vector, ids.astype(np.int64)
