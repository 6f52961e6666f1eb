"""Shared test scaffolding: hand-built toy graphs with exact PQ codebooks,
and an independent reference best-first implementation used as the oracle
for engine equivalence (plain sorted lists, no heaps, no pipeline)."""

import numpy as np

from pageann.dataset import VectorDataset
from pageann.index import GraphIndex
from pageann.pq import PqCodebook, PqCodes
from pageann.search import SearchContext
from pageann.storage import MemoryBackend


def toy_index(vectors, edges, entry_point=0):
    """GraphIndex over explicit vectors/edges; PQ centroids are the vectors
    themselves so PQ distances equal exact distances."""
    vectors = np.asarray(vectors, dtype=np.float32)
    n, dim = vectors.shape
    assert n <= 256
    centroids = np.full((1, 256, dim), 1e9, dtype=np.float32)
    centroids[0, :n] = vectors
    book = PqCodebook(centroids=centroids)
    codes = PqCodes(codes=np.arange(n, dtype=np.uint8)[:, None])
    r = max(len(v) for v in edges.values()) if edges else 1
    neighbors = np.full((n, r), -1, dtype=np.int32)
    counts = np.zeros(n, dtype=np.int32)
    for node, nbrs in edges.items():
        neighbors[node, :len(nbrs)] = nbrs
        counts[node] = len(nbrs)
    return GraphIndex(base=VectorDataset(vectors, "f32"), neighbors=neighbors,
                      neighbor_counts=counts, entry_point=entry_point, R=r,
                      book=book, codes=codes)


def ctx_and_backend(idx):
    return SearchContext.from_graph_index(idx), MemoryBackend.from_graph_index(idx)


def reference_best_first(idx, query, L, k, max_steps=100_000, early_exit=False):
    """Independent best-first search: candidate list as a plain sorted list
    of (pq_dist, id, expanded), exact distances re-ranked separately.

    Mirrors the documented contract: (distance, id) ordering, capacity-L
    list with worst-entry eviction, termination on exhaustion of unexpanded
    entries (optionally also when the best unexpanded PQ distance exceeds
    the k-th exact).
    """
    from pageann.pq import adc_distance_batch, adc_table

    q64 = np.asarray(query, dtype=np.float64).ravel()
    vecs = idx.base.as_float()
    table = adc_table(query, idx.book)

    def pq_dist(node):
        return float(adc_distance_batch(idx.codes.codes[node:node + 1], table)[0])

    cand = [(pq_dist(idx.entry_point), idx.entry_point, False)]
    inserted = {idx.entry_point}
    exact = []  # (dist, id)
    steps = 0
    order = []
    while steps < max_steps:
        unexpanded = [(d, i) for d, i, e in cand if not e]
        if not unexpanded:
            break
        best_d, best_i = min(unexpanded)
        if early_exit:
            kth = sorted(exact)[k - 1][0] if len(exact) >= k else float("inf")
            if best_d > kth:
                break
        cand = [(d, i, True if i == best_i else e) for d, i, e in cand]
        steps += 1
        order.append(best_i)
        ed = float(np.dot(q64 - vecs[best_i], q64 - vecs[best_i]))
        exact.append((ed, best_i))
        for nb in idx.neighbors[best_i, :idx.neighbor_counts[best_i]]:
            nb = int(nb)
            if nb < 0 or nb in inserted:
                continue
            inserted.add(nb)
            cand.append((pq_dist(nb), nb, False))
        cand.sort(key=lambda t: (t[0], t[1]))
        cand = cand[:L]
    top = sorted(exact)[:k]
    return ([i for _, i in top], [d for d, _ in top], steps, order)
