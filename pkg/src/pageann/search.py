"""Strict and dependency-relaxed query engines over a page-resident graph.

Both engines keep a bounded candidate list of PQ distances and a result
queue of exact distances. The strict engine serializes each step: pop the
best unexpanded candidate, read its page, wait, score it and its neighbors.
The relaxed engine pipelines with one-step staleness: at each step it first
selects the next expansion from the heap as it stood before the in-flight
page landed (and submits that read into the free half of its double
buffer), then scores the page that just completed, and only awaits the new
read at the top of the next step. A drain re-check on the freshest heap
decides whether a tentatively converged search must continue.

Engines are generators yielding sim effects, so the same decision logic
runs on the virtual clock (simulated backends) and on real backends through
the blocking driver; expansion choices never depend on I/O timing, which
makes results reproducible across drivers and worker counts.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import replace
from dataclasses import dataclass, field

import numpy as np

from .dataset import ELEM_DTYPES
from .heaps import BoundedCandidateList, ResultQueue
from .index import GraphIndex, read_index_header, read_pq_section
from .iostack import WORKER_LEVEL, DirectIoStack, ThreadedIoStack
from .layout import NEIGHBOR_SENTINEL
from .pq import PqCodebook, PqCodes, adc_distance_batch, adc_table
from .sim import AwaitIo, Compute, ComputeModel, QueryBegin, QueryEnd, SimExecutor, Submit

STRICT = "strict"
RELAXED = "relaxed"


class SearchError(Exception):
    pass


@dataclass(frozen=True)
class SearchParams:
    L: int
    k: int = 10
    max_steps: int = 100_000
    engine: str = STRICT
    # optional aggressive convergence test: stop once the best unexpanded PQ
    # distance exceeds the k-th best exact distance. Off by default: it cuts
    # steps ~4x but truncates discovery of neighbors that sit hops behind the
    # current frontier, costing recall.
    early_exit: bool = False

    def __post_init__(self):
        if self.k < 1 or self.L < self.k:
            raise SearchError("need 1 <= k <= L")
        if self.max_steps < 1:
            raise SearchError("max_steps must be >= 1")
        if self.engine not in (STRICT, RELAXED):
            raise SearchError(f"unknown engine {self.engine!r}")


@dataclass
class StepRecord:
    step: int
    expanded_id: int
    source_epoch: int
    pipelined: bool = False   # selected while another page was in flight
    io_wait_us: float = 0.0
    compute_us: float = 0.0
    io_submit_us: float = 0.0
    io_complete_us: float = 0.0


@dataclass
class QueryTrace:
    query_id: int
    engine: str
    rows: list = field(default_factory=list)
    io_intervals: list = field(default_factory=list)
    compute_intervals: list = field(default_factory=list)
    start_us: float = 0.0
    end_us: float = 0.0
    max_steps_hit: bool = False

    @property
    def steps(self) -> int:
        return len(self.rows)


@dataclass
class SearchResult:
    query_id: int
    ids: np.ndarray
    distances: np.ndarray
    trace: QueryTrace


class SearchContext:
    """Immutable per-batch search state: PQ payload plus page layout info."""

    def __init__(self, dim: int, elem: str, r: int, entry_point: int,
                 book: PqCodebook, codes: PqCodes):
        self.dim = dim
        self.elem = elem
        self.elem_dtype = np.dtype(ELEM_DTYPES[elem])
        self.R = r
        self.entry_point = entry_point
        self.book = book
        self.codes = codes
        self._vec_bytes = dim * self.elem_dtype.itemsize

    @classmethod
    def from_file(cls, index_path) -> "SearchContext":
        header = read_index_header(index_path)
        book, codes = read_pq_section(index_path, header)
        return cls(header.dim, header.elem, header.R, header.entry_point,
                   book, codes)

    @classmethod
    def from_graph_index(cls, idx: GraphIndex) -> "SearchContext":
        return cls(idx.dim, idx.base.elem, idx.R, idx.entry_point,
                   idx.book, idx.codes)

    def parse_page(self, page):
        """(float64 vector, neighbor id int64 array) from one 4KB buffer."""
        vec = np.frombuffer(page, dtype=self.elem_dtype, count=self.dim)
        count = int(np.frombuffer(page, dtype=np.uint32, count=1,
                                  offset=self._vec_bytes)[0])
        ids = np.frombuffer(page, dtype=np.uint32, count=count,
                            offset=self._vec_bytes + 4)
        ids = ids[ids != NEIGHBOR_SENTINEL].astype(np.int64)
        return vec.astype(np.float64), ids

    def query_table(self, query: np.ndarray) -> np.ndarray:
        return adc_table(query, self.book)


def _exact_distance(query64: np.ndarray, vec64: np.ndarray) -> float:
    d = query64 - vec64
    return float(np.dot(d, d))


class _QueryState:
    """Candidate/result bookkeeping shared by both engines."""

    def __init__(self, ctx: SearchContext, query: np.ndarray, params: SearchParams):
        self.ctx = ctx
        self.params = params
        self.query64 = np.asarray(query, dtype=np.float64).ravel()
        if self.query64.shape[0] != ctx.dim:
            raise SearchError(f"query dim {self.query64.shape[0]} != index dim {ctx.dim}")
        self.table = ctx.query_table(query)
        self.candidates = BoundedCandidateList(params.L)
        self.results = ResultQueue(params.k)
        self.visited = {ctx.entry_point}
        self.discovered = {ctx.entry_point: 0}
        entry_code = ctx.codes.codes[ctx.entry_point]
        entry_dist = float(np.sum(self.table[np.arange(ctx.book.m), entry_code],
                                  dtype=np.float32))
        self.candidates.insert(entry_dist, ctx.entry_point)

    def should_expand(self) -> bool:
        """Convergence test: exhaustion of the bounded candidate list, plus
        the optional PQ-vs-exact early exit."""
        best = self.candidates.peek_best_unexpanded()
        if best is None:
            return False
        if self.params.early_exit and best[0] > self.results.kth_distance():
            return False
        return True

    def pop_next(self):
        return self.candidates.pop_best_unexpanded()

    def score_page(self, node_id: int, page, discovery_step: int) -> int:
        """Exact distance to the result queue, PQ distances of unvisited
        neighbors into the candidate list; returns the neighbor count."""
        vec, nbr_ids = self.ctx.parse_page(page)
        self.results.insert(_exact_distance(self.query64, vec), node_id)
        fresh = [int(n) for n in nbr_ids if n not in self.visited]
        if not fresh:
            return 0
        self.visited.update(fresh)
        dists = adc_distance_batch(self.ctx.codes.codes[fresh], self.table)
        if self.candidates.is_full():
            worst_d = self.candidates.worst_key()[0]
            keep = dists <= worst_d
        else:
            keep = np.ones(len(fresh), dtype=bool)
        for nid, d, ok in zip(fresh, dists.tolist(), keep.tolist()):
            self.discovered[nid] = discovery_step
            if ok:
                self.candidates.insert(d, nid)
        return len(fresh)

    def final(self, query_id: int, trace: QueryTrace) -> SearchResult:
        items = self.results.sorted_items()
        ids = np.array([i for _, i in items], dtype=np.int32)
        dists = np.array([d for d, _ in items], dtype=np.float64)
        return SearchResult(query_id, ids, dists, trace)


def strict_engine(query_id, query, ctx: SearchContext, params: SearchParams,
                  trace: QueryTrace):
    """Serialized best-first search: select, read+wait, score, repeat."""
    st = _QueryState(ctx, query, params)
    step = 0
    buffer_slot = 0
    while True:
        if not st.should_expand():
            break
        if step >= params.max_steps:
            trace.max_steps_hit = True
            break
        dist, node = st.pop_next()
        step += 1
        row = StepRecord(step, node, st.discovered[node])
        yield Compute("select", 0, row)
        epoch = yield Submit(node, buffer_slot, row)
        page = yield AwaitIo(epoch, row)
        n_new = st.score_page(node, page, step)
        yield Compute("process", n_new, row)
        trace.rows.append(row)
        buffer_slot ^= 1
    return st.final(query_id, trace)


def relaxed_engine(query_id, query, ctx: SearchContext, params: SearchParams,
                   trace: QueryTrace):
    """Pipelined search with one-step staleness and double buffering.

    Selection for step i+1 happens before the step-i page is scored, so it
    sees the heap as of step i-1 (one step stale). When no selection was
    possible, the freshest heap is re-checked after scoring (drain), which
    restarts the pipeline instead of terminating early.
    """
    st = _QueryState(ctx, query, params)
    step = 1
    buffer_slot = 0
    dist, node = st.pop_next()  # entry point; heap is never empty here
    row = StepRecord(step, node, st.discovered[node])
    yield Compute("select", 0, row)
    epoch = yield Submit(node, buffer_slot, row)
    in_flight = (node, epoch, row)

    while in_flight is not None:
        node, epoch, row = in_flight
        page = yield AwaitIo(epoch, row)
        # (a) select the next expansion on the stale heap and keep the
        # pipeline busy before (b) scoring the page that just landed
        in_flight = None
        submitted_stale = False
        if st.should_expand():
            if step >= params.max_steps:
                trace.max_steps_hit = True
            else:
                _, nxt = st.pop_next()
                step += 1
                nrow = StepRecord(step, nxt, st.discovered[nxt], pipelined=True)
                yield Compute("select", 0, nrow)
                buffer_slot ^= 1
                nepoch = yield Submit(nxt, buffer_slot, nrow)
                in_flight = (nxt, nepoch, nrow)
                submitted_stale = True
        # (b) score the completed page
        n_new = st.score_page(node, page, row.step)
        yield Compute("process", n_new, row)
        trace.rows.append(row)
        # drain: the fresh discoveries may reopen a tentatively converged search
        if not submitted_stale and in_flight is None:
            if st.should_expand():
                if step >= params.max_steps:
                    trace.max_steps_hit = True
                else:
                    _, nxt = st.pop_next()
                    step += 1
                    nrow = StepRecord(step, nxt, st.discovered[nxt], pipelined=False)
                    yield Compute("select", 0, nrow)
                    buffer_slot ^= 1
                    nepoch = yield Submit(nxt, buffer_slot, nrow)
                    in_flight = (nxt, nepoch, nrow)
    return st.final(query_id, trace)


_ENGINES = {STRICT: strict_engine, RELAXED: relaxed_engine}


def worker_loop(items, ctx: SearchContext, params: SearchParams):
    """Process (query_id, vector) pairs start-to-finish on one worker."""
    engine = _ENGINES[params.engine]
    out = []
    for query_id, query in items:
        trace = QueryTrace(query_id, params.engine)
        yield QueryBegin(trace)
        result = yield from engine(query_id, query, ctx, params, trace)
        yield QueryEnd(trace)
        out.append(result)
    return out


def drive_blocking(gen, iostack, worker_id: int):
    """Run one worker generator against a real (blocking) I/O stack,
    measuring compute and wait times with the real clock."""
    now_us = lambda: time.perf_counter() * 1e6
    to_send = None
    trace = None
    submit_t = {}
    mark = now_us()
    while True:
        try:
            effect = gen.send(to_send)
        except StopIteration as stop:
            return stop.value
        t = now_us()
        to_send = None
        if isinstance(effect, Compute):
            if effect.row is not None:
                effect.row.compute_us += t - mark
            if trace is not None:
                trace.compute_intervals.append((mark, t))
        elif isinstance(effect, Submit):
            epoch = iostack.submit(worker_id, effect.node_id, effect.buffer_slot)
            submit_t[epoch] = t
            to_send = epoch
        elif isinstance(effect, AwaitIo):
            buf = iostack.await_completion(worker_id, effect.epoch)
            t_done = now_us()
            t_submit = submit_t.pop(effect.epoch, t)
            if effect.row is not None:
                effect.row.io_wait_us += t_done - t
                effect.row.io_submit_us = t_submit
                effect.row.io_complete_us = t_done
            if trace is not None:
                trace.io_intervals.append((t_submit, t_done))
            to_send = buf
        elif isinstance(effect, QueryBegin):
            trace = effect.trace
            trace.start_us = t
        elif isinstance(effect, QueryEnd):
            effect.trace.end_us = t
            trace = None
        mark = now_us()


def search_strict(query, ctx: SearchContext, backend, params: SearchParams,
                  query_id: int = 0) -> SearchResult:
    """Single-query strict search over any backend (synchronous reads)."""
    gen = worker_loop([(query_id, query)], ctx, replace(params, engine=STRICT))
    stack = DirectIoStack(backend, workers=1)
    return drive_blocking(gen, stack, 0)[0]


def search_relaxed(query, ctx: SearchContext, backend, params: SearchParams,
                   query_id: int = 0) -> SearchResult:
    """Single-query relaxed search; on blocking backends the pipeline's reads
    execute at await time (identical results, no timing overlap)."""
    gen = worker_loop([(query_id, query)], ctx, replace(params, engine=RELAXED))
    stack = DirectIoStack(backend, workers=1)
    return drive_blocking(gen, stack, 0)[0]


@dataclass
class BatchResult:
    ids: np.ndarray          # (n_queries, k) int32, -1 padded
    distances: np.ndarray    # (n_queries, k) float64, inf padded
    traces: list
    qps: float
    wall_us: float
    metrics: object
    engine: str
    io_mode: str


def run_query_batch(queries, ctx: SearchContext, backend, params: SearchParams,
                    workers: int = 1, io_mode: str = WORKER_LEVEL,
                    compute_model: ComputeModel | None = None,
                    poll_interval_us: float = 5.0) -> BatchResult:
    """Run a query matrix, one worker owning each query start-to-finish.

    Virtual backends (memory/simulated) run on the deterministic virtual
    clock; the file backend runs on real threads and the real clock.
    """
    if workers < 1:
        raise SearchError("workers must be >= 1")
    qmat = np.asarray(queries)
    n = qmat.shape[0]
    workers = min(workers, max(n, 1))
    assignments = [[] for _ in range(workers)]
    for qid in range(n):
        assignments[qid % workers].append((qid, qmat[qid]))

    if getattr(backend, "is_virtual", False):
        gens = [worker_loop(items, ctx, params) for items in assignments]
        executor = SimExecutor(backend, workers, compute_model, io_mode,
                               poll_interval_us)
        out = executor.run(gens)
        results = [r for worker_out in out["results"] for r in worker_out]
        wall_us = max(out["wall_us"], 1e-9)
        metrics = out["metrics"]
    else:
        stack = ThreadedIoStack(backend, workers, mode=io_mode,
                                poll_interval_us=poll_interval_us)
        results_by_worker = [None] * workers
        t0 = time.perf_counter()

        def run_worker(w):
            try:
                gen = worker_loop(assignments[w], ctx, params)
                results_by_worker[w] = drive_blocking(gen, stack, w)
            finally:
                stack.deregister(w)

        threads = [threading.Thread(target=run_worker, args=(w,))
                   for w in range(workers)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        wall_us = max((time.perf_counter() - t0) * 1e6, 1e-9)
        metrics = stack.metrics
        stack.close()
        results = [r for worker_out in results_by_worker for r in worker_out]

    results.sort(key=lambda r: r.query_id)
    ids = np.full((n, params.k), -1, dtype=np.int32)
    dists = np.full((n, params.k), np.inf, dtype=np.float64)
    for r in results:
        m = len(r.ids)
        ids[r.query_id, :m] = r.ids
        dists[r.query_id, :m] = r.distances
    return BatchResult(
        ids=ids, distances=dists,
        traces=[r.trace for r in results],
        qps=n / (wall_us / 1e6),
        wall_us=wall_us,
        metrics=metrics,
        engine=params.engine,
        io_mode=io_mode,
    )


def _interval_overlap(a, b) -> float:
    """Total time where one interval from each sorted list is active."""
    total = 0.0
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += hi - lo
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return total


def overlap_report(traces) -> dict:
    """Aggregate compute/I/O occupancy and their overlap across traces."""
    traces = list(traces)
    if not traces or all(not t.rows for t in traces):
        raise SearchError("no populated traces to report on")
    tot_overlap = tot_wall = tot_compute = tot_io = 0.0
    for tr in traces:
        wall = tr.end_us - tr.start_us
        tot_wall += wall
        tot_overlap += _interval_overlap(tr.io_intervals, tr.compute_intervals)
        tot_compute += sum(b - a for a, b in tr.compute_intervals)
        tot_io += sum(b - a for a, b in tr.io_intervals)
    tot_wall = max(tot_wall, 1e-9)
    return {
        "overlap_ratio": tot_overlap / tot_wall,
        "compute_busy": tot_compute / tot_wall,
        "io_busy": tot_io / tot_wall,
        "wall_time_us": tot_wall,
    }


def freshness_utilization(trace: QueryTrace) -> float:
    """Fraction of steps whose expansion was discovered by the immediately
    preceding step."""
    if not trace.rows:
        raise SearchError("empty trace")
    fresh = sum(1 for r in trace.rows if r.source_epoch == r.step - 1)
    return fresh / len(trace.rows)


def save_traces(traces, path) -> None:
    """Dump step traces as CSV rows."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["query_id", "step", "expanded_id", "source_epoch",
                    "io_wait_us", "compute_us"])
        for tr in traces:
            for r in tr.rows:
                w.writerow([tr.query_id, r.step, r.expanded_id, r.source_epoch,
                            f"{r.io_wait_us:.3f}", f"{r.compute_us:.3f}"])
