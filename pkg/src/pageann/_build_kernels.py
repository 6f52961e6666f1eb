"""Numba kernels for graph construction: best-first search over the working
graph, alpha-pruned neighbor selection, and chunk insertion.

Chunks of nodes are searched in parallel against a frozen view of the
adjacency (reads only), then inserted sequentially in node order, so the
result is deterministic regardless of thread count.
"""

import numpy as np
from numba import get_thread_id, njit, prange


@njit(cache=True, fastmath=True, inline="always")
def _dist_to(vecs, i, q):
    s = np.float32(0.0)
    for t in range(q.shape[0]):
        d = vecs[i, t] - q[t]
        s += d * d
    return s


@njit(cache=True, fastmath=True, inline="always")
def _dist_rows(vecs, i, j):
    s = np.float32(0.0)
    for t in range(vecs.shape[1]):
        d = vecs[i, t] - vecs[j, t]
        s += d * d
    return s


@njit(cache=True, fastmath=True)
def _greedy_search(vecs, adj, counts, entry, q, L, marks, mark_val, vis_ids, vis_d):
    """Best-first search with a capacity-L sorted candidate list.

    Records expanded nodes (ids + exact distances) into vis_ids/vis_d and
    returns how many were recorded. marks[node] == mark_val marks insertion.
    """
    cand_ids = np.empty(L, np.int32)
    cand_d = np.empty(L, np.float32)
    cand_exp = np.zeros(L, np.bool_)
    cand_ids[0] = entry
    cand_d[0] = _dist_to(vecs, entry, q)
    n_cand = 1
    marks[entry] = mark_val
    n_vis = 0
    vis_cap = vis_ids.shape[0]
    while n_vis < vis_cap:
        best = -1
        for idx in range(n_cand):
            if not cand_exp[idx]:
                best = idx
                break
        if best < 0:
            break
        cand_exp[best] = True
        node = cand_ids[best]
        vis_ids[n_vis] = node
        vis_d[n_vis] = cand_d[best]
        n_vis += 1
        for e in range(counts[node]):
            nb = adj[node, e]
            if nb < 0 or marks[nb] == mark_val:
                continue
            marks[nb] = mark_val
            dnb = _dist_to(vecs, nb, q)
            if n_cand == L and dnb >= cand_d[L - 1]:
                continue
            lo = 0
            hi = n_cand
            while lo < hi:
                mid = (lo + hi) >> 1
                if cand_d[mid] <= dnb:
                    lo = mid + 1
                else:
                    hi = mid
            if lo >= L:
                continue
            end = n_cand if n_cand < L else L - 1
            for t in range(end, lo, -1):
                cand_ids[t] = cand_ids[t - 1]
                cand_d[t] = cand_d[t - 1]
                cand_exp[t] = cand_exp[t - 1]
            cand_ids[lo] = nb
            cand_d[lo] = dnb
            cand_exp[lo] = False
            if n_cand < L:
                n_cand += 1
    return n_vis


@njit(cache=True, parallel=True, fastmath=True)
def _search_chunk(vecs, adj, counts, entry, chunk_ids, L, marks, mark_base,
                  vis_ids, vis_d, vis_n):
    for t in prange(chunk_ids.shape[0]):
        tid = get_thread_id()
        node = chunk_ids[t]
        vis_n[t] = _greedy_search(
            vecs, adj, counts, entry, vecs[node], L,
            marks[tid], mark_base + t, vis_ids[t], vis_d[t],
        )


@njit(cache=True, fastmath=True)
def _robust_prune(vecs, node, cand_ids, cand_d, n_cand, alpha, r, out_ids):
    """Alpha pruning over distance-sorted unique candidates; returns count."""
    alive = np.ones(n_cand, np.bool_)
    n_out = 0
    for idx in range(n_cand):
        if not alive[idx]:
            continue
        p = cand_ids[idx]
        out_ids[n_out] = p
        n_out += 1
        if n_out == r:
            break
        for j in range(idx + 1, n_cand):
            if alive[j]:
                if alpha * _dist_rows(vecs, p, cand_ids[j]) <= cand_d[j]:
                    alive[j] = False
    return n_out


@njit(cache=True, fastmath=True)
def _prune_node_in_place(vecs, adj, counts, node, alpha, r,
                         scratch_ids, scratch_d, prune_out):
    """Re-prune a node whose list overflowed back down to at most r."""
    c = counts[node]
    for t in range(c):
        scratch_ids[t] = adj[node, t]
        scratch_d[t] = _dist_rows(vecs, node, adj[node, t])
    order = np.argsort(scratch_d[:c], kind="mergesort")
    s_ids = scratch_ids[:c][order]
    s_d = scratch_d[:c][order]
    n_out = _robust_prune(vecs, node, s_ids, s_d, c, alpha, r, prune_out)
    for t in range(n_out):
        adj[node, t] = prune_out[t]
    counts[node] = n_out


@njit(cache=True, fastmath=True)
def _insert_chunk(vecs, adj, counts, chunk_ids, vis_ids, vis_d, vis_n,
                  alpha, r, cap, entry):
    """Apply one chunk's search results: prune, write lists, reverse edges.

    Runs sequentially in node order so insertion is order-deterministic.
    """
    max_cand = vis_ids.shape[1] + cap
    cand_ids = np.empty(max_cand, np.int32)
    cand_d = np.empty(max_cand, np.float32)
    out_ids = np.empty(cap, np.int32)
    prune_out = np.empty(cap, np.int32)
    scratch_ids = np.empty(cap + 1, np.int32)
    scratch_d = np.empty(cap + 1, np.float32)
    for ci in range(chunk_ids.shape[0]):
        node = chunk_ids[ci]
        nv = vis_n[ci]
        n_cand = 0
        for t in range(nv):
            v = vis_ids[ci, t]
            if v != node:
                cand_ids[n_cand] = v
                cand_d[n_cand] = vis_d[ci, t]
                n_cand += 1
        # merge current neighbors not already among the visited
        for e in range(counts[node]):
            nb = adj[node, e]
            if nb == node or nb < 0:
                continue
            seen = False
            for t in range(n_cand):
                if cand_ids[t] == nb:
                    seen = True
                    break
            if not seen:
                cand_ids[n_cand] = nb
                cand_d[n_cand] = _dist_rows(vecs, node, nb)
                n_cand += 1
        if n_cand == 0:
            # isolated start: fall back to the entry point (or its successor)
            fallback = entry if entry != node else (node + 1) % vecs.shape[0]
            out_ids[0] = fallback
            n_sel = 1
        else:
            order = np.argsort(cand_d[:n_cand], kind="mergesort")
            s_ids = cand_ids[:n_cand][order]
            s_d = cand_d[:n_cand][order]
            n_sel = _robust_prune(vecs, node, s_ids, s_d, n_cand, alpha, r, out_ids)
        for t in range(n_sel):
            adj[node, t] = out_ids[t]
        counts[node] = n_sel
        # reverse edges with overflow re-pruning at cap
        for e in range(n_sel):
            j = out_ids[e]
            cj = counts[j]
            present = False
            for t in range(cj):
                if adj[j, t] == node:
                    present = True
                    break
            if present:
                continue
            adj[j, cj] = node
            counts[j] = cj + 1
            if cj + 1 >= cap:
                _prune_node_in_place(vecs, adj, counts, j, alpha, r,
                                     scratch_ids, scratch_d, prune_out)


@njit(cache=True, fastmath=True)
def _final_prune(vecs, adj, counts, alpha, r, cap):
    """Clamp any list still above r after the last pass."""
    prune_out = np.empty(cap, np.int32)
    scratch_ids = np.empty(cap + 1, np.int32)
    scratch_d = np.empty(cap + 1, np.float32)
    for node in range(vecs.shape[0]):
        if counts[node] > r:
            _prune_node_in_place(vecs, adj, counts, node, alpha, r,
                                 scratch_ids, scratch_d, prune_out)
