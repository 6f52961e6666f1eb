"""Deterministic discrete-event execution of search workers on a virtual
microsecond clock.

Search engines are generators that perform their real Python work and yield
effect markers (Compute, Submit, AwaitIo, QueryBegin/End). This executor
charges virtual time for compute via a ComputeModel, routes page reads
through a virtual-clock dispatcher over the same slot/signal protocol as the
threaded I/O stack, and resumes workers in (time, sequence) order, so a run
is bit-reproducible for a fixed seed and worker count.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .iostack import (BATCH_BARRIER, SLOT_IN_FLIGHT, WORKER_LEVEL,
                      IoStackError, _SlotTable)


@dataclass(frozen=True)
class ComputeModel:
    """Virtual per-step compute costs: selection/submission is the serial
    part of a step, page scoring scales with the neighbor count."""

    select_us: float = 15.0
    process_fixed_us: float = 10.0
    process_per_neighbor_us: float = 0.8

    def duration(self, kind: str, neighbors: int) -> float:
        if kind == "select":
            return self.select_us
        return self.process_fixed_us + self.process_per_neighbor_us * neighbors

    def step_compute_us(self, neighbors: int) -> float:
        return self.duration("select", 0) + self.duration("process", neighbors)


# --- effects yielded by engine generators ---

@dataclass
class Compute:
    kind: str          # "select" | "process"
    neighbors: int
    row: object        # StepRecord the duration is charged to (may be None)


@dataclass
class Submit:
    node_id: int
    buffer_slot: int
    row: object


@dataclass
class AwaitIo:
    epoch: int
    row: object


@dataclass
class QueryBegin:
    trace: object


@dataclass
class QueryEnd:
    trace: object


class VirtualDispatcher:
    """Slot-table dispatcher on the virtual clock.

    worker_level: a request is forwarded at the next poll tick and its
    completion is delivered at the backend's completion time. batch_barrier:
    a round forwards only when every active worker has submitted, and all
    completions of the round are published at the round's slowest completion.
    """

    def __init__(self, backend, workers: int, mode: str = WORKER_LEVEL,
                 poll_interval_us: float = 5.0):
        if mode not in (WORKER_LEVEL, BATCH_BARRIER):
            raise IoStackError(f"unknown io mode {mode!r}")
        if not backend.is_virtual:
            raise IoStackError(f"backend kind {backend.kind!r} has no virtual clock")
        self.backend = backend
        self.mode = mode
        self.table = _SlotTable(workers)
        self._tick = poll_interval_us
        self._active = set(range(workers))
        self._pending_round: dict[int, tuple[int, int, float]] = {}

    @property
    def metrics(self):
        return self.table.metrics

    def _next_tick(self, now: float) -> float:
        return math.ceil((now - 1e-9) / self._tick) * self._tick

    def submit(self, worker_id: int, node_id: int, buffer_slot: int, now: float):
        """Returns (epoch, deliveries); a delivery is
        (deliver_time, worker_id, epoch, node_id, submit_time)."""
        epoch = self.table.begin_submit(worker_id, node_id, buffer_slot)
        if self.mode == WORKER_LEVEL:
            self.table.slots[worker_id].state = SLOT_IN_FLIGHT
            completion = self.backend.submit(node_id, self._next_tick(now))
            return epoch, [(completion, worker_id, epoch, node_id, now)]
        self._pending_round[worker_id] = (node_id, epoch, now)
        return epoch, self._maybe_release_round(now)

    def deactivate(self, worker_id: int, now: float):
        """Worker finished all its work; it leaves the barrier group."""
        self._active.discard(worker_id)
        if self.mode == BATCH_BARRIER:
            return self._maybe_release_round(now)
        return []

    def _maybe_release_round(self, now: float):
        if not self._pending_round:
            return []
        if set(self._pending_round) != self._active:
            return []
        t_fwd = self._next_tick(now)
        round_items = []
        for w in sorted(self._pending_round):
            node, epoch, t_sub = self._pending_round[w]
            self.table.slots[w].state = SLOT_IN_FLIGHT
            round_items.append((w, epoch, node, t_sub,
                                self.backend.submit(node, t_fwd)))
        release = max(item[4] for item in round_items)
        self._pending_round.clear()
        return [(release, w, epoch, node, t_sub)
                for w, epoch, node, t_sub, _ in round_items]

    def deliver(self, worker_id: int, epoch: int, node_id: int) -> None:
        """Copy the page into the worker's buffer, then set the flag."""
        page = self.backend.page_view(node_id)
        self.table.complete(worker_id, epoch, page)

    def consume(self, worker_id: int, epoch: int):
        self.table.check_epoch(worker_id, epoch)
        return self.table.consume(worker_id)

    def is_done(self, worker_id: int, epoch: int) -> bool:
        sig = self.table.signals[worker_id]
        return sig.done and sig.epoch == epoch


class SimExecutor:
    """Runs worker generators to completion on the virtual clock."""

    def __init__(self, backend, workers: int, compute_model: ComputeModel | None = None,
                 io_mode: str = WORKER_LEVEL, poll_interval_us: float = 5.0):
        self.model = compute_model or ComputeModel()
        self.dispatcher = VirtualDispatcher(backend, workers, io_mode, poll_interval_us)
        self.workers = workers

    def run(self, worker_gens) -> dict:
        """Drive the generators; returns results, wall time, and metrics."""
        if len(worker_gens) != self.workers:
            raise IoStackError("one generator per worker required")
        heap = []
        seq = 0

        def schedule(t, kind, w, payload):
            nonlocal seq
            heapq.heappush(heap, (t, seq, kind, w, payload))
            seq += 1

        for w in range(self.workers):
            schedule(0.0, "resume", w, None)

        awaiting = {}             # worker -> (epoch, row, t_wait_start)
        ready = {}                # worker -> {epoch: (submit_t, deliver_t)}
        current_trace = {}        # worker -> QueryTrace
        results = [None] * self.workers
        live = set(range(self.workers))
        wall = 0.0

        def schedule_deliveries(deliveries):
            for t, w, epoch, node, t_sub in deliveries:
                schedule(t, "deliver", w, (epoch, node, t_sub))

        def resolve_await(w, now, submit_t, deliver_t):
            epoch, row, t_start = awaiting.pop(w)
            wait = now - t_start
            if row is not None:
                row.io_wait_us += wait
                row.io_submit_us = submit_t
                row.io_complete_us = deliver_t
            self.dispatcher.metrics.record_wait(wait)
            return self.dispatcher.consume(w, epoch)

        while heap:
            now, _, kind, w, payload = heapq.heappop(heap)
            wall = max(wall, now)
            if kind == "deliver":
                epoch, node, t_sub = payload
                self.dispatcher.deliver(w, epoch, node)
                trace = current_trace.get(w)
                if trace is not None:
                    trace.io_intervals.append((t_sub, now))
                if w in awaiting and awaiting[w][0] == epoch:
                    buf = resolve_await(w, now, t_sub, now)
                    schedule(now, "resume", w, buf)
                else:
                    ready.setdefault(w, {})[epoch] = (t_sub, now)
                continue
            gen = worker_gens[w]
            to_send = payload
            while True:
                try:
                    effect = gen.send(to_send)
                except StopIteration as stop:
                    results[w] = stop.value
                    live.discard(w)
                    current_trace.pop(w, None)
                    schedule_deliveries(self.dispatcher.deactivate(w, now))
                    break
                if isinstance(effect, Compute):
                    dur = self.model.duration(effect.kind, effect.neighbors)
                    if effect.row is not None:
                        effect.row.compute_us += dur
                    trace = current_trace.get(w)
                    if trace is not None:
                        trace.compute_intervals.append((now, now + dur))
                    schedule(now + dur, "resume", w, None)
                    break
                if isinstance(effect, Submit):
                    epoch, deliveries = self.dispatcher.submit(
                        w, effect.node_id, effect.buffer_slot, now)
                    schedule_deliveries(deliveries)
                    to_send = epoch
                    continue
                if isinstance(effect, AwaitIo):
                    done = ready.get(w, {}).pop(effect.epoch, None)
                    if done is not None:
                        submit_t, deliver_t = done
                        awaiting[w] = (effect.epoch, effect.row, now)
                        to_send = resolve_await(w, now, submit_t, deliver_t)
                        continue
                    awaiting[w] = (effect.epoch, effect.row, now)
                    break
                if isinstance(effect, QueryBegin):
                    effect.trace.start_us = now
                    current_trace[w] = effect.trace
                    to_send = None
                    continue
                if isinstance(effect, QueryEnd):
                    effect.trace.end_us = now
                    current_trace.pop(w, None)
                    to_send = None
                    continue
                raise IoStackError(f"unknown effect {effect!r}")

        if live:
            raise IoStackError(f"workers {sorted(live)} never finished (deadlock?)")
        return {
            "results": results,
            "wall_us": wall,
            "metrics": self.dispatcher.metrics,
        }
