"""Per-worker I/O stack: request slots, completion signals, and double
buffers, with a dispatcher that forwards requests to the storage backend.

One slot, one signal, and two 4KB buffers per worker. A worker submits into
its own slot (single producer), the dispatcher writes the page into the
worker's designated buffer and only then sets the completion flag with the
matching epoch; the worker checks the flag before touching the buffer. Under
CPython the lock plus the GIL give the required buffer-before-flag /
flag-before-buffer ordering.

Two completion modes exist: worker_level (a worker resumes as soon as its
own read lands) and batch_barrier (every worker in the group waits for the
round's slowest read — the straggler-amplifying mode kept for comparison).
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .layout import PAGE_SIZE

SLOT_EMPTY = 0
SLOT_SUBMITTED = 1
SLOT_IN_FLIGHT = 2

WORKER_LEVEL = "worker_level"
BATCH_BARRIER = "batch_barrier"


class IoStackError(Exception):
    pass


class ProtocolViolation(IoStackError):
    """A worker broke the slot protocol (e.g. submit while busy)."""


class StaleEpoch(IoStackError):
    """await_completion called with an epoch that is not outstanding."""


class PoisonedCompletion(IoStackError):
    """The backend failed while serving this request."""


@dataclass
class RequestSlot:
    state: int = SLOT_EMPTY
    node_id: int = -1
    epoch: int = 0
    buffer_slot: int = 0


@dataclass
class CompletionSignal:
    done: bool = False
    epoch: int = 0
    error: str | None = None


class WorkerBufferPool:
    """workers x 2 x 4KB buffers; buffer ownership alternates per request."""

    def __init__(self, workers: int):
        self._bufs = np.zeros((workers, 2, PAGE_SIZE), dtype=np.uint8)

    def view(self, worker_id: int, buffer_slot: int) -> np.ndarray:
        return self._bufs[worker_id, buffer_slot]


@dataclass
class IoMetrics:
    submissions: int = 0
    completions: int = 0
    waits_us: list = field(default_factory=list)

    def record_wait(self, wait_us: float) -> None:
        self.waits_us.append(wait_us)

    def percentile(self, q: float) -> float:
        if not self.waits_us:
            return 0.0
        return float(np.percentile(np.array(self.waits_us), q))

    def mean_wait(self) -> float:
        if not self.waits_us:
            return 0.0
        return float(np.mean(self.waits_us))


class _SlotTable:
    """Slot/signal state machine shared by every dispatcher flavor."""

    def __init__(self, workers: int):
        self.workers = workers
        self.slots = [RequestSlot() for _ in range(workers)]
        self.signals = [CompletionSignal() for _ in range(workers)]
        self.buffers = WorkerBufferPool(workers)
        self.metrics = IoMetrics()

    def begin_submit(self, worker_id: int, node_id: int, buffer_slot: int) -> int:
        slot = self.slots[worker_id]
        if slot.state != SLOT_EMPTY:
            raise ProtocolViolation(
                f"worker {worker_id} submitted while slot state={slot.state}"
            )
        slot.epoch += 1
        slot.state = SLOT_SUBMITTED
        slot.node_id = node_id
        slot.buffer_slot = buffer_slot
        self.metrics.submissions += 1
        return slot.epoch

    def check_epoch(self, worker_id: int, epoch: int) -> None:
        slot = self.slots[worker_id]
        if slot.epoch != epoch or slot.state == SLOT_EMPTY:
            raise StaleEpoch(
                f"worker {worker_id} awaits epoch {epoch}, slot at {slot.epoch}"
            )

    def complete(self, worker_id: int, epoch: int, page, error: str | None = None) -> None:
        """Buffer write happens-before the flag write; callers hold the lock."""
        slot = self.slots[worker_id]
        sig = self.signals[worker_id]
        if page is not None:
            buf = self.buffers.view(worker_id, slot.buffer_slot)
            buf[:] = np.frombuffer(page, dtype=np.uint8, count=PAGE_SIZE)
        sig.error = error
        sig.epoch = epoch
        sig.done = True
        self.metrics.completions += 1

    def consume(self, worker_id: int) -> np.ndarray:
        """Return the buffer after a successful completion; frees the slot."""
        slot = self.slots[worker_id]
        sig = self.signals[worker_id]
        err = sig.error
        sig.done = False
        slot.state = SLOT_EMPTY
        if err is not None:
            raise PoisonedCompletion(err)
        return self.buffers.view(worker_id, slot.buffer_slot)


class DirectIoStack:
    """Synchronous pass-through: await executes the read on the caller.

    Same protocol surface as the threaded stack; used with zero-latency and
    serial backends where the dispatcher machinery would only add overhead.
    """

    def __init__(self, backend, workers: int):
        self.backend = backend
        self.table = _SlotTable(workers)

    @property
    def metrics(self) -> IoMetrics:
        return self.table.metrics

    def submit(self, worker_id: int, node_id: int, buffer_slot: int) -> int:
        return self.table.begin_submit(worker_id, node_id, buffer_slot)

    def await_completion(self, worker_id: int, epoch: int,
                         mode: str = WORKER_LEVEL) -> np.ndarray:
        self.table.check_epoch(worker_id, epoch)
        slot = self.table.slots[worker_id]
        slot.state = SLOT_IN_FLIGHT
        t0 = time.perf_counter()
        try:
            page = self.backend.read_page(slot.node_id)
        except Exception as e:  # surface as a poisoned completion
            self.table.complete(worker_id, epoch, None, error=str(e))
        else:
            self.table.complete(worker_id, epoch, page)
        self.metrics.record_wait((time.perf_counter() - t0) * 1e6)
        return self.table.consume(worker_id)

    def close(self):
        pass


class ThreadedIoStack:
    """Dispatcher thread polling the slot array; reads run on a small pool.

    In batch_barrier mode the dispatcher forwards a round only once every
    registered worker has an outstanding request, then publishes all
    completions together after the slowest read of the round.
    """

    def __init__(self, backend, workers: int, mode: str = WORKER_LEVEL,
                 poll_interval_us: float = 50.0, io_threads: int = 8):
        if mode not in (WORKER_LEVEL, BATCH_BARRIER):
            raise IoStackError(f"unknown mode {mode!r}")
        self.backend = backend
        self.mode = mode
        self.table = _SlotTable(workers)
        self._poll_s = poll_interval_us / 1e6
        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._active = set(range(workers))
        self._stop = False
        self._pool = ThreadPoolExecutor(max_workers=io_threads)
        self._thread = threading.Thread(target=self._dispatch_loop, daemon=True)
        self._thread.start()

    @property
    def metrics(self) -> IoMetrics:
        return self.table.metrics

    def deregister(self, worker_id: int) -> None:
        """A finished worker must leave the barrier group."""
        with self._cv:
            self._active.discard(worker_id)
            self._cv.notify_all()

    def submit(self, worker_id: int, node_id: int, buffer_slot: int) -> int:
        with self._cv:
            epoch = self.table.begin_submit(worker_id, node_id, buffer_slot)
            self._cv.notify_all()
            return epoch

    def await_completion(self, worker_id: int, epoch: int,
                         mode: str | None = None) -> np.ndarray:
        t0 = time.perf_counter()
        with self._cv:
            self.table.check_epoch(worker_id, epoch)
            sig = self.table.signals[worker_id]
            while not (sig.done and sig.epoch == epoch):
                if self._stop:
                    raise IoStackError("iostack closed while awaiting")
                self._cv.wait(timeout=0.5)
            self.metrics.record_wait((time.perf_counter() - t0) * 1e6)
            return self.table.consume(worker_id)

    def _dispatch_loop(self):
        while True:
            with self._cv:
                if self._stop:
                    return
                submitted = [w for w in range(self.table.workers)
                             if self.table.slots[w].state == SLOT_SUBMITTED]
                if self.mode == BATCH_BARRIER:
                    waiting_on = self._active - set(submitted)
                    if waiting_on or not submitted:
                        submitted = []
                for w in submitted:
                    self.table.slots[w].state = SLOT_IN_FLIGHT
            if not submitted:
                time.sleep(self._poll_s)
                continue
            if self.mode == BATCH_BARRIER:
                futures = [(w, self._pool.submit(self._read, w)) for w in submitted]
                done = [(w, f.result()) for w, f in futures]
                with self._cv:
                    for w, (page, err) in done:
                        self.table.complete(w, self.table.slots[w].epoch, page, err)
                    self._cv.notify_all()
            else:
                for w in submitted:
                    self._pool.submit(self._read_and_complete, w)
            time.sleep(self._poll_s)

    def _read(self, worker_id: int):
        try:
            return self.backend.read_page(self.table.slots[worker_id].node_id), None
        except Exception as e:
            return None, str(e)

    def _read_and_complete(self, worker_id: int):
        page, err = self._read(worker_id)
        with self._cv:
            self.table.complete(worker_id, self.table.slots[worker_id].epoch, page, err)
            self._cv.notify_all()

    def close(self):
        with self._cv:
            self._stop = True
            self._cv.notify_all()
        self._thread.join(timeout=5.0)
        self._pool.shutdown(wait=True)
