"""Page-granular read backends: a real file backend, an in-memory
zero-latency backend, and a simulated backend that models device bandwidth,
queue depth, base latency, and a two-point heavy tail in virtual
microseconds.

The simulated model per device: a request is admitted once fewer than
queue_depth requests are in service, occupies the transfer engine for
4096/bandwidth microseconds (engine transfers one page at a time), and
completes at max(admission + base_latency, engine_free) plus the tail term.
Requests are striped across devices by a multiplicative hash of node_id.
A tail delays only its own completion, never the transfer engine.
"""

from __future__ import annotations

import heapq
import mmap
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .index import IndexHeader, read_index_header
from .layout import PAGE_SIZE


class StorageError(Exception):
    pass


class NoTraffic(StorageError):
    """Throughput report requested before any read was served."""


@dataclass(frozen=True)
class StorageProfile:
    device_count: int = 1
    queue_depth: int = 16
    base_latency_us: float = 80.0
    tail_probability: float = 0.02
    tail_latency_us: float = 1000.0
    bandwidth_mbps: float = 3200.0
    seed: int = 0
    # deterministic straggler injection for isolation experiments
    inject_tail_node_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.device_count < 1 or self.queue_depth < 1:
            raise StorageError("device_count and queue_depth must be >= 1")
        if not (0.0 <= self.tail_probability < 1.0):
            raise StorageError("tail_probability must be in [0, 1)")
        if self.base_latency_us <= 0 or self.tail_latency_us < 0:
            raise StorageError("latencies must be positive")
        if self.bandwidth_mbps <= 0:
            raise StorageError("bandwidth must be positive")

    @property
    def service_time_us(self) -> float:
        # 1 MB/s == 1 byte/us, so a 4096B transfer takes 4096/bw microseconds
        return PAGE_SIZE / self.bandwidth_mbps


_PROFILE_KEYS = {
    "device_count": int,
    "queue_depth": int,
    "base_latency_us": float,
    "tail_probability": float,
    "tail_latency_us": float,
    "bandwidth_mb_per_s": float,
    "seed": int,
}


def load_profile(path) -> StorageProfile:
    """Parse a key=value profile file (durations in us, bandwidth in MB/s)."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise StorageError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in _PROFILE_KEYS:
                raise StorageError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _PROFILE_KEYS[key](raw.strip())
            except ValueError as e:
                raise StorageError(f"{path}:{lineno}: bad value for {key}") from e
    if "bandwidth_mb_per_s" in values:
        values["bandwidth_mbps"] = values.pop("bandwidth_mb_per_s")
    return StorageProfile(**values)


def save_profile(profile: StorageProfile, path) -> None:
    with open(path, "w") as f:
        f.write(f"device_count={profile.device_count}\n")
        f.write(f"queue_depth={profile.queue_depth}\n")
        f.write(f"base_latency_us={profile.base_latency_us}\n")
        f.write(f"tail_probability={profile.tail_probability}\n")
        f.write(f"tail_latency_us={profile.tail_latency_us}\n")
        f.write(f"bandwidth_mb_per_s={profile.bandwidth_mbps}\n")
        f.write(f"seed={profile.seed}\n")


def _device_of(node_id: int, device_count: int) -> int:
    return ((node_id * 2654435761) & 0xFFFFFFFF) % device_count


class _Counters:
    def __init__(self):
        self.pages_read = 0
        self.first_us = None
        self.last_us = None
        self._lock = threading.Lock()

    def record(self, start_us: float, end_us: float) -> None:
        with self._lock:
            self.pages_read += 1
            if self.first_us is None or start_us < self.first_us:
                self.first_us = start_us
            if self.last_us is None or end_us > self.last_us:
                self.last_us = end_us


class _BackendBase:
    """Shared counters and the throughput report."""

    kind = "?"
    is_virtual = False

    def __init__(self, header: IndexHeader | None, count: int):
        self.header = header
        self.count = count
        self._counters = _Counters()

    def _check_id(self, node_id: int) -> None:
        if not (0 <= node_id < self.count):
            raise StorageError(f"node id {node_id} out of range [0, {self.count})")

    def throughput_report(self) -> dict:
        c = self._counters
        if c.pages_read == 0:
            raise NoTraffic("no reads served yet")
        wall = max(c.last_us - c.first_us, 1e-9)
        bytes_read = c.pages_read * PAGE_SIZE
        return {
            "pages_read": c.pages_read,
            "bytes_read": bytes_read,
            "wall_time_us": wall,
            "achieved_bandwidth_mbps": bytes_read / wall,
        }

    def close(self):
        pass


class FileBackend(_BackendBase):
    """Buffered page reads from the index file via mmap; optional O_DIRECT."""

    kind = "file"

    def __init__(self, index_path, direct: bool = False):
        header = read_index_header(index_path)
        super().__init__(header, header.count)
        self._direct = direct
        if direct:
            self._fd = os.open(index_path, os.O_RDONLY | os.O_DIRECT)
            self._buf = mmap.mmap(-1, PAGE_SIZE)  # page-aligned scratch
            self._mm = None
        else:
            self._fd = os.open(index_path, os.O_RDONLY)
            self._mm = mmap.mmap(self._fd, 0, prot=mmap.PROT_READ)

    def read_page(self, node_id: int) -> bytes:
        self._check_id(node_id)
        t0 = time.perf_counter() * 1e6
        off = self.header.page_offset(node_id)
        if self._direct:
            data = os.preadv(self._fd, [self._buf], off)
            if data != PAGE_SIZE:
                raise StorageError(f"short read at page {node_id}")
            out = bytes(self._buf)
        else:
            out = bytes(self._mm[off:off + PAGE_SIZE])
        self._counters.record(t0, time.perf_counter() * 1e6)
        return out

    def close(self):
        if self._mm is not None:
            self._mm.close()
        os.close(self._fd)


class MemoryBackend(_BackendBase):
    """Zero-latency page source; also usable on the virtual clock."""

    kind = "memory"
    is_virtual = True

    def __init__(self, pages: np.ndarray, header: IndexHeader | None = None):
        if pages.ndim != 2 or pages.shape[1] != PAGE_SIZE or pages.dtype != np.uint8:
            raise StorageError("pages must be a (count, 4096) uint8 array")
        super().__init__(header, pages.shape[0])
        self._pages = pages

    @classmethod
    def from_file(cls, index_path) -> "MemoryBackend":
        header = read_index_header(index_path)
        fd = os.open(index_path, os.O_RDONLY)
        try:
            mm = mmap.mmap(fd, 0, prot=mmap.PROT_READ)
        finally:
            os.close(fd)
        pages = np.frombuffer(mm, dtype=np.uint8,
                              count=header.count * PAGE_SIZE,
                              offset=header.page_base)
        return cls(pages.reshape(header.count, PAGE_SIZE), header)

    @classmethod
    def from_graph_index(cls, idx) -> "MemoryBackend":
        """Build the page array straight from an in-memory GraphIndex."""
        from .layout import pack_page
        pages = np.empty((idx.count, PAGE_SIZE), dtype=np.uint8)
        for i in range(idx.count):
            nbrs = idx.neighbors[i, :idx.neighbor_counts[i]]
            page = pack_page(idx.base.data[i].tobytes(), nbrs, idx.R)
            pages[i] = np.frombuffer(page, dtype=np.uint8)
        return cls(pages)

    def page_view(self, node_id: int) -> np.ndarray:
        self._check_id(node_id)
        return self._pages[node_id]

    def read_page(self, node_id: int) -> bytes:
        t0 = time.perf_counter() * 1e6
        out = self.page_view(node_id).tobytes()
        self._counters.record(t0, time.perf_counter() * 1e6)
        return out

    def submit(self, node_id: int, now_us: float) -> float:
        """Virtual-clock submission: completes instantly."""
        self._check_id(node_id)
        self._counters.record(now_us, now_us)
        return now_us


class SimulatedBackend(_BackendBase):
    """Latency-modeled reads over real page data on a virtual clock.

    submit() computes the completion timestamp analytically; read_page()
    additionally advances an internal serial clock so single-threaded callers
    get reproducible latencies without an external scheduler.
    """

    kind = "simulated"
    is_virtual = True

    def __init__(self, pages: MemoryBackend, profile: StorageProfile):
        super().__init__(pages.header, pages.count)
        self._pages = pages
        self.profile = profile
        self._rng = np.random.default_rng(profile.seed)
        self._engine_free = [0.0] * profile.device_count
        self._in_service = [[] for _ in range(profile.device_count)]
        self._now = 0.0
        self._last_submit = 0.0
        self.issued = 0
        self.completed = 0

    @classmethod
    def from_file(cls, index_path, profile: StorageProfile) -> "SimulatedBackend":
        return cls(MemoryBackend.from_file(index_path), profile)

    def page_view(self, node_id: int) -> np.ndarray:
        return self._pages.page_view(node_id)

    def _tail_term(self, node_id: int) -> float:
        p = self.profile
        if node_id in p.inject_tail_node_ids:
            return p.tail_latency_us
        if p.tail_probability > 0.0 and self._rng.random() < p.tail_probability:
            return p.tail_latency_us
        return 0.0

    def submit(self, node_id: int, now_us: float) -> float:
        """Completion timestamp for a read submitted at now_us.

        Submissions must arrive in nondecreasing virtual time.
        """
        self._check_id(node_id)
        if now_us < self._last_submit - 1e-9:
            raise StorageError("submissions must be in nondecreasing virtual time")
        self._last_submit = now_us
        p = self.profile
        dev = _device_of(node_id, p.device_count)
        served = self._in_service[dev]
        while served and served[0] <= now_us:
            heapq.heappop(served)
        if len(served) < p.queue_depth:
            admit = now_us
        else:
            admit = heapq.heappop(served)
        self._engine_free[dev] = max(self._engine_free[dev], admit) + p.service_time_us
        completion = max(admit + p.base_latency_us, self._engine_free[dev])
        completion += self._tail_term(node_id)
        heapq.heappush(served, completion)
        self.issued += 1
        self.completed += 1
        self._counters.record(now_us, completion)
        return completion

    def read_page(self, node_id: int) -> bytes:
        """Serial blocking read: submits at the internal clock and advances it."""
        completion = self.submit(node_id, self._now)
        self._now = completion
        return self._pages.page_view(node_id).tobytes()

    @property
    def now_us(self) -> float:
        return self._now


def open_backend(kind: str, index_path=None, profile: StorageProfile | None = None,
                 direct: bool = False):
    """Open a page-read backend.

    kind "file" needs a valid index file; "simulated" needs a profile (and an
    index file for page payloads); "memory" is the zero-latency variant used
    by quality runs and tests.
    """
    if kind == "file":
        if index_path is None:
            raise StorageError("file backend requires an index path")
        return FileBackend(index_path, direct=direct)
    if kind == "memory":
        if index_path is None:
            raise StorageError("memory backend requires an index path")
        return MemoryBackend.from_file(index_path)
    if kind == "simulated":
        if index_path is None or profile is None:
            raise StorageError("simulated backend requires an index path and a profile")
        return SimulatedBackend.from_file(index_path, profile)
    raise StorageError(f"unknown backend kind {kind!r}")
