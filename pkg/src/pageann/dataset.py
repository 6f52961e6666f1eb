"""Vector dataset handling: fvecs/bvecs/ivecs files, synthetic blob generation,
exact brute-force ground truth, and recall.

File formats follow the texmex convention: every record is a 4-byte
little-endian int32 dimension header followed by dim elements (float32 for
fvecs, uint8 for bvecs, int32 for ivecs).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

ELEM_DTYPES = {"u8": np.uint8, "i8": np.int8, "f32": np.float32}
_FORMAT_ELEM = {"fvecs": "f32", "bvecs": "u8", "ivecs": "f32"}
_FORMAT_VALUE_DTYPE = {"fvecs": np.float32, "bvecs": np.uint8, "ivecs": np.int32}


class DatasetError(Exception):
    """Malformed vector file or invalid dataset parameters."""


class InconsistentDim(DatasetError):
    """A record declares a dimension different from the first record's."""


class TruncatedFile(DatasetError):
    """File ends in the middle of a record."""


@dataclass(frozen=True)
class VectorDataset:
    """Row-major matrix of vectors plus element-type tag.

    `data` is a (count, dim) ndarray whose dtype matches `elem`.
    """

    data: np.ndarray
    elem: str

    def __post_init__(self):
        if self.elem not in ELEM_DTYPES:
            raise DatasetError(f"unknown element type {self.elem!r}")
        if self.data.ndim != 2:
            raise DatasetError("data must be a 2-d (count, dim) array")
        if self.data.shape[1] < 1:
            raise DatasetError("dim must be >= 1")
        if self.data.dtype != ELEM_DTYPES[self.elem]:
            raise DatasetError(
                f"dtype {self.data.dtype} does not match elem {self.elem!r}"
            )

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def elem_size(self) -> int:
        return self.data.dtype.itemsize

    def as_float(self) -> np.ndarray:
        """Vectors widened to float64 (exact for u8/i8 inputs)."""
        return self.data.astype(np.float64)


@dataclass(frozen=True)
class GroundTruth:
    """Exact k-NN ids and squared-L2 distances, one row per query.

    Rows are sorted by distance ascending, ties broken by smaller id.
    """

    neighbor_ids: np.ndarray  # (query_count, k) int32
    distances: np.ndarray     # (query_count, k) float

    def __post_init__(self):
        if self.neighbor_ids.shape != self.distances.shape:
            raise DatasetError("ids/distances shape mismatch")

    @property
    def query_count(self) -> int:
        return self.neighbor_ids.shape[0]

    @property
    def k(self) -> int:
        return self.neighbor_ids.shape[1]


def load_vectors(path, format: str) -> VectorDataset:
    """Read an fvecs/bvecs/ivecs file into a VectorDataset.

    Validates every record's dimension header; raises InconsistentDim or
    TruncatedFile on malformed input. ivecs values are reinterpreted as
    float32 ids only through load_ground_truth; here they load as f32.
    """
    if format not in _FORMAT_VALUE_DTYPE:
        raise DatasetError(f"unknown format {format!r}")
    raw = np.fromfile(path, dtype=np.uint8)
    arr = _parse_records(raw, format, path)
    if format == "ivecs":
        arr = arr.astype(np.float32)
    return VectorDataset(data=arr, elem=_FORMAT_ELEM[format])


def _parse_records(raw: np.ndarray, format: str, path) -> np.ndarray:
    value_dtype = np.dtype(_FORMAT_VALUE_DTYPE[format])
    if raw.size < 4:
        raise TruncatedFile(f"{path}: no room for a dimension header")
    dim = int(raw[:4].view(np.int32)[0])
    if dim <= 0:
        raise DatasetError(f"{path}: dimension header {dim} <= 0")
    record = 4 + dim * value_dtype.itemsize
    if raw.size % record != 0:
        # distinguish truncation from a dim change mid-file
        _scan_for_bad_record(raw, value_dtype, dim, path)
        raise TruncatedFile(f"{path}: {raw.size} bytes is not a multiple of {record}")
    count = raw.size // record
    table = raw.reshape(count, record)
    dims = table[:, :4].copy().view(np.int32).ravel()
    if not np.all(dims == dim):
        bad = int(np.argmin(dims == dim))
        raise InconsistentDim(
            f"{path}: record {bad} declares dim {int(dims[bad])}, expected {dim}"
        )
    values = table[:, 4:].copy().view(value_dtype)
    return values.reshape(count, dim)


def _scan_for_bad_record(raw, value_dtype, dim, path):
    """Walk records one by one so a mid-file dim change reports as such."""
    offset = 0
    idx = 0
    record_bytes = dim * value_dtype.itemsize
    while offset + 4 <= raw.size:
        d = int(raw[offset:offset + 4].view(np.int32)[0])
        if d != dim:
            raise InconsistentDim(
                f"{path}: record {idx} declares dim {d}, expected {dim}"
            )
        offset += 4 + record_bytes
        idx += 1


def write_vectors(ds: VectorDataset, path, format: str) -> None:
    """Write a dataset in the given record format (bit-exact round trip)."""
    if format not in _FORMAT_VALUE_DTYPE:
        raise DatasetError(f"unknown format {format!r}")
    value_dtype = np.dtype(_FORMAT_VALUE_DTYPE[format])
    expected_elem = _FORMAT_ELEM[format]
    if format == "ivecs":
        values = np.round(ds.data).astype(np.int32)
    else:
        if ds.elem != expected_elem:
            raise DatasetError(
                f"{format} stores {expected_elem} data, dataset holds {ds.elem}"
            )
        values = ds.data
    headers = np.full((ds.count, 1), ds.dim, dtype=np.int32)
    with open(path, "wb") as f:
        rows = np.hstack([headers.view(np.uint8).reshape(ds.count, 4),
                          np.ascontiguousarray(values).view(np.uint8).reshape(ds.count, -1)])
        rows.tofile(f)


def save_ground_truth(gt: GroundTruth, ids_path, distances_path) -> None:
    """Serialize ground truth as an ivecs id file plus an fvecs distance file."""
    ids = VectorDataset(gt.neighbor_ids.astype(np.float32), "f32")
    write_vectors(ids, ids_path, "ivecs")
    dists = VectorDataset(gt.distances.astype(np.float32), "f32")
    write_vectors(dists, distances_path, "fvecs")


def load_ground_truth(ids_path, distances_path) -> GroundTruth:
    ids_raw = np.fromfile(ids_path, dtype=np.uint8)
    ids = _parse_records(ids_raw, "ivecs", ids_path)
    dists = load_vectors(distances_path, "fvecs")
    return GroundTruth(neighbor_ids=ids.astype(np.int32), distances=dists.data)


_SYNTH_RANGES = {"u8": (0.0, 255.0), "i8": (-128.0, 127.0), "f32": (0.0, 1.0)}


def _synth_core(count, dim, elem, seed, clusters, spread, noise_rank):
    lo, hi = _SYNTH_RANGES[elem]
    if spread is None:
        spread = (hi - lo) / 16.0
    rng = np.random.default_rng(seed)
    centers = rng.uniform(lo, hi, size=(clusters, dim))
    labels = rng.integers(0, clusters, size=count)
    if noise_rank is None or noise_rank >= dim:
        points = centers[labels] + rng.normal(0.0, spread, size=(count, dim))
    else:
        # per-cluster noise confined to a random low-dimensional subspace,
        # scaled so the total noise energy matches the isotropic case
        points = np.empty((count, dim))
        sigma = spread * np.sqrt(dim / noise_rank)
        for c in range(clusters):
            mask = labels == c
            basis = np.linalg.qr(rng.normal(size=(dim, noise_rank)))[0].T
            z = rng.normal(0.0, sigma, size=(int(mask.sum()), noise_rank))
            points[mask] = centers[c] + z @ basis
    points = np.clip(points, lo, hi)
    if elem == "f32":
        data = points.astype(np.float32)
    else:
        data = np.round(points).astype(ELEM_DTYPES[elem])
    return data, centers, labels


def gen_synthetic(count: int, dim: int, elem: str, seed: int,
                  clusters: int = 8, spread: float | None = None,
                  noise_rank: int | None = None) -> VectorDataset:
    """Gaussian blobs around uniformly sampled centers; deterministic per seed.

    `spread` is the per-coordinate noise sigma; the default scales with the
    element range so nearest-center assignment recovers the generating
    cluster for the overwhelming majority of points. `noise_rank` confines
    each cluster's noise to a random subspace of that dimension, mimicking
    the low intrinsic dimensionality of real embedding data (None keeps the
    noise isotropic).
    """
    if count < 1 or dim < 1:
        raise DatasetError("count and dim must be >= 1")
    if clusters < 1:
        raise DatasetError("clusters must be >= 1")
    if elem not in ELEM_DTYPES:
        raise DatasetError(f"unknown element type {elem!r}")
    if noise_rank is not None and noise_rank < 1:
        raise DatasetError("noise_rank must be >= 1")
    data, _, _ = _synth_core(count, dim, elem, seed, clusters, spread, noise_rank)
    return VectorDataset(data=data, elem=elem)


def gen_synthetic_centers(count: int, dim: int, elem: str, seed: int,
                          clusters: int = 8, spread: float | None = None,
                          noise_rank: int | None = None):
    """Same generator but also returns (centers, labels) for oracle checks."""
    data, centers, labels = _synth_core(count, dim, elem, seed, clusters,
                                        spread, noise_rank)
    return VectorDataset(data=data, elem=elem), centers, labels


def squared_l2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared L2 distances, float64-exact for integer inputs.

    a: (na, dim), b: (nb, dim) -> (na, nb).
    """
    a = a.astype(np.float64, copy=False)
    b = b.astype(np.float64, copy=False)
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def brute_force_knn(base: VectorDataset, queries: VectorDataset, k: int,
                    metric: str = "l2", chunk: int = 256) -> GroundTruth:
    """Exact k nearest neighbors per query under squared L2.

    Ties broken by smaller base id so the oracle is deterministic. Queries
    are processed in chunks to bound memory on large bases.
    """
    if metric != "l2":
        raise DatasetError(f"unsupported metric {metric!r}")
    if base.dim != queries.dim:
        raise DatasetError(f"dim mismatch: base {base.dim} vs queries {queries.dim}")
    if k > base.count:
        raise DatasetError(f"k={k} exceeds base count {base.count}")
    if k < 1:
        raise DatasetError("k must be >= 1")

    bf = base.as_float()
    out_ids = np.empty((queries.count, k), dtype=np.int32)
    out_dist = np.empty((queries.count, k), dtype=np.float64)
    for start in range(0, queries.count, chunk):
        q = queries.data[start:start + chunk].astype(np.float64)
        d = squared_l2(q, bf)
        for row in range(d.shape[0]):
            ids, dists = _top_k_with_ties(d[row], k)
            out_ids[start + row] = ids
            out_dist[start + row] = dists
    return GroundTruth(neighbor_ids=out_ids, distances=out_dist)


def _top_k_with_ties(dist_row: np.ndarray, k: int):
    """k smallest by (distance, id), exact under distance ties."""
    n = dist_row.shape[0]
    if k >= n:
        cand = np.arange(n)
    else:
        thr = np.partition(dist_row, k - 1)[k - 1]
        cand = np.flatnonzero(dist_row <= thr)
    order = np.lexsort((cand, dist_row[cand]))
    sel = cand[order[:k]]
    return sel.astype(np.int32), dist_row[sel]


def recall_at_k(result_ids: np.ndarray, truth: GroundTruth, k: int) -> float:
    """Mean over queries of |result_top_k ∩ truth_top_k| / k."""
    result_ids = np.asarray(result_ids)
    if result_ids.ndim != 2:
        raise DatasetError("result_ids must be a 2-d matrix")
    if result_ids.shape[0] != truth.query_count:
        raise DatasetError(
            f"row count mismatch: results {result_ids.shape[0]} vs truth {truth.query_count}"
        )
    if result_ids.shape[1] < k or truth.k < k:
        raise DatasetError(f"need >= {k} entries per row")
    hits = 0
    for row in range(result_ids.shape[0]):
        got = set(int(x) for x in result_ids[row, :k])
        want = set(int(x) for x in truth.neighbor_ids[row, :k])
        hits += len(got & want)
    return hits / (k * result_ids.shape[0])
