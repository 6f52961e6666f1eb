"""Product quantization: per-subspace k-means codebooks, byte codes, and
asymmetric distance computation via per-query lookup tables.

Codebooks always hold 256 centroids per subspace so codes are one byte per
subspace. Training runs Lloyd iterations with k-means++ seeding; an empty
cluster is repaired by reseeding it from the point farthest from its
current centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import VectorDataset

KS = 256
TRAIN_SAMPLE_LIMIT = 100_000


class PqError(Exception):
    pass


@dataclass(frozen=True)
class PqCodebook:
    centroids: np.ndarray  # (m, 256, sub_dim) float32
    training_errors: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.centroids.ndim != 3 or self.centroids.shape[1] != KS:
            raise PqError("centroids must have shape (m, 256, sub_dim)")

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def ks(self) -> int:
        return KS

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim


@dataclass(frozen=True)
class PqCodes:
    codes: np.ndarray  # (count, m) uint8

    def __post_init__(self):
        if self.codes.ndim != 2 or self.codes.dtype != np.uint8:
            raise PqError("codes must be a (count, m) uint8 matrix")

    @property
    def count(self) -> int:
        return self.codes.shape[0]

    @property
    def m(self) -> int:
        return self.codes.shape[1]


def _subspaces(data: np.ndarray, m: int):
    sub = data.shape[1] // m
    for s in range(m):
        yield data[:, s * sub:(s + 1) * sub]


def _kmeans_pp_seed(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; falls back to uniform picks once distances vanish."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float32)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _assign(x: np.ndarray, centers: np.ndarray, chunk: int = 32768):
    """Nearest-center index and squared distance per point (ties -> smaller)."""
    n = x.shape[0]
    assign = np.empty(n, dtype=np.int32)
    dist = np.empty(n, dtype=np.float32)
    cc = np.sum(centers ** 2, axis=1)
    for s in range(0, n, chunk):
        part = x[s:s + chunk]
        d = cc[None, :] - 2.0 * (part @ centers.T)
        idx = np.argmin(d, axis=1)
        assign[s:s + chunk] = idx
        base = np.sum(part ** 2, axis=1)
        dist[s:s + chunk] = np.maximum(d[np.arange(len(part)), idx] + base, 0.0)
    return assign, dist


def _lloyd(x: np.ndarray, iters: int, rng: np.random.Generator):
    centers = _kmeans_pp_seed(x, KS, rng)
    errors = []
    assign, dist = _assign(x, centers)
    errors.append(float(dist.mean()))
    for _ in range(iters):
        counts = np.bincount(assign, minlength=KS)
        sums = np.zeros((KS, x.shape[1]), dtype=np.float64)
        np.add.at(sums, assign, x)
        nonempty = counts > 0
        centers[nonempty] = (sums[nonempty] / counts[nonempty, None]).astype(np.float32)
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            # reseed each empty cluster from the farthest remaining point
            order = np.argsort(-dist, kind="stable")
            for e, src in zip(empty, order[:empty.size]):
                centers[e] = x[src]
        assign, dist = _assign(x, centers)
        errors.append(float(dist.mean()))
    return centers, errors


def pq_train(base: VectorDataset, m: int, iters: int = 12, seed: int = 0) -> PqCodebook:
    """Train per-subspace 256-centroid codebooks; deterministic per seed.

    Trains on a uniform sample of at most 100k vectors when the base is
    larger.
    """
    if base.dim % m != 0:
        raise PqError(f"m={m} does not divide dim={base.dim}")
    if base.count < KS:
        raise PqError(f"need at least {KS} vectors to train, got {base.count}")
    if iters < 0:
        raise PqError("iters must be >= 0")
    rng = np.random.default_rng(seed)
    data = base.data
    if base.count > TRAIN_SAMPLE_LIMIT:
        pick = rng.choice(base.count, TRAIN_SAMPLE_LIMIT, replace=False)
        pick.sort()
        data = data[pick]
    data = data.astype(np.float32)
    cents = np.empty((m, KS, base.dim // m), dtype=np.float32)
    all_errors = []
    for s, x in enumerate(_subspaces(data, m)):
        cents[s], errs = _lloyd(np.ascontiguousarray(x), iters, rng)
        all_errors.append(tuple(errs))
    return PqCodebook(centroids=cents, training_errors=tuple(all_errors))


def pq_encode(base: VectorDataset, book: PqCodebook, chunk: int = 32768) -> PqCodes:
    """Per-subspace nearest-centroid codes; ties go to the smaller index."""
    if base.count and base.dim != book.dim:
        raise PqError(f"dim mismatch: data {base.dim} vs codebook {book.dim}")
    codes = np.empty((base.count, book.m), dtype=np.uint8)
    if base.count == 0:
        return PqCodes(codes=codes)
    data = base.data.astype(np.float32)
    for s, x in enumerate(_subspaces(data, book.m)):
        assign, _ = _assign(np.ascontiguousarray(x), book.centroids[s], chunk)
        codes[:, s] = assign.astype(np.uint8)
    return PqCodes(codes=codes)


def reconstruct(codes: PqCodes, book: PqCodebook) -> np.ndarray:
    """Decode PQ codes back to float32 vectors (centroid concatenation)."""
    out = np.empty((codes.count, book.dim), dtype=np.float32)
    sub = book.sub_dim
    for s in range(book.m):
        out[:, s * sub:(s + 1) * sub] = book.centroids[s][codes.codes[:, s]]
    return out


def adc_table(query: np.ndarray, book: PqCodebook) -> np.ndarray:
    """(m, 256) float32 table of squared distances from each query subvector
    to every centroid."""
    query = np.asarray(query, dtype=np.float32).ravel()
    if query.shape[0] != book.dim:
        raise PqError(f"query dim {query.shape[0]} != codebook dim {book.dim}")
    q = query.reshape(book.m, 1, book.sub_dim)
    table = np.sum((book.centroids - q) ** 2, axis=2, dtype=np.float32)
    return table


def adc_distance(code: np.ndarray, table: np.ndarray) -> float:
    """Approximate squared distance of one code: sum of table lookups."""
    code = np.asarray(code)
    m = table.shape[0]
    if code.shape[0] != m:
        raise PqError(f"code length {code.shape[0]} != m {m}")
    if code.max(initial=0) >= KS or code.min(initial=0) < 0:
        raise PqError("code byte out of range")
    return float(np.sum(table[np.arange(m), code], dtype=np.float32))


def adc_distance_batch(codes: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Vectorized adc_distance over a (n, m) code matrix -> (n,) float32."""
    m = table.shape[0]
    return np.sum(table[np.arange(m), codes], axis=1, dtype=np.float32)
