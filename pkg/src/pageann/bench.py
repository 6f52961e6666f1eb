"""Experiment harness: QPS-recall sweeps, worker-level vs batch-barrier I/O
comparisons, and the I/O-to-compute calibration used by the pipelined-gain
experiments. All emitters write plain CSV; on simulated backends every
number derives from the virtual clock, so outputs are bit-reproducible for
a fixed seed and worker count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from .dataset import GroundTruth, load_ground_truth, load_vectors, recall_at_k
from .iostack import BATCH_BARRIER, WORKER_LEVEL
from .search import (
    RELAXED,
    STRICT,
    SearchContext,
    SearchParams,
    overlap_report,
    run_query_batch,
)
from .sim import ComputeModel
from .storage import (
    MemoryBackend,
    SimulatedBackend,
    StorageProfile,
    load_profile,
    open_backend,
)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class BenchConfig:
    index_path: str
    query_path: str
    query_format: str = "fvecs"
    gt_ids_path: str | None = None
    gt_dist_path: str | None = None
    backend: str = "memory"
    profile_path: str | None = None
    engine: str = RELAXED
    l_sweep: tuple = (10, 20, 40, 80)
    k: int = 10
    workers: int = 8
    io_mode: str = WORKER_LEVEL
    output_path: str = "out.csv"
    seed: int = 0
    query_limit: int | None = None
    select_us: float = 15.0
    process_fixed_us: float = 10.0
    process_per_neighbor_us: float = 0.8
    poll_interval_us: float = 5.0

    def __post_init__(self):
        if not self.l_sweep:
            raise ConfigError("L sweep must be non-empty")
        if list(self.l_sweep) != sorted(self.l_sweep):
            raise ConfigError("L sweep must be ascending")
        if self.engine not in (STRICT, RELAXED):
            raise ConfigError(f"unknown engine {self.engine!r}")
        if self.io_mode not in (WORKER_LEVEL, BATCH_BARRIER):
            raise ConfigError(f"unknown io_mode {self.io_mode!r}")

    def compute_model(self) -> ComputeModel:
        return ComputeModel(self.select_us, self.process_fixed_us,
                            self.process_per_neighbor_us)


_CONFIG_TYPES = {
    "index_path": str, "query_path": str, "query_format": str,
    "gt_ids_path": str, "gt_dist_path": str, "backend": str,
    "profile_path": str, "engine": str, "k": int, "workers": int,
    "io_mode": str, "output_path": str, "seed": int, "query_limit": int,
    "select_us": float, "process_fixed_us": float,
    "process_per_neighbor_us": float, "poll_interval_us": float,
}


def load_config(path) -> BenchConfig:
    """key=value config; l_sweep is a comma-separated ascending list."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key == "l_sweep":
            try:
                values[key] = tuple(int(x) for x in raw.split(",") if x.strip())
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad l_sweep") from e
        elif key in _CONFIG_TYPES:
            try:
                values[key] = _CONFIG_TYPES[key](raw)
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}") from e
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    if "index_path" not in values or "query_path" not in values:
        raise ConfigError(f"{path}: index_path and query_path are required")
    return BenchConfig(**values)


def _open_bench_backend(cfg: BenchConfig):
    profile = None
    if cfg.backend == "simulated":
        if cfg.profile_path is None:
            raise ConfigError("simulated backend requires profile_path")
        profile = load_profile(cfg.profile_path)
    return open_backend(cfg.backend, cfg.index_path, profile)


def _load_queries(cfg: BenchConfig) -> np.ndarray:
    q = load_vectors(cfg.query_path, cfg.query_format)
    data = q.data
    if cfg.query_limit is not None:
        data = data[:cfg.query_limit]
    return data


def _load_gt(cfg: BenchConfig) -> GroundTruth:
    if cfg.gt_ids_path is None or cfg.gt_dist_path is None:
        raise ConfigError("ground truth paths are required for recall output")
    return load_ground_truth(cfg.gt_ids_path, cfg.gt_dist_path)


def run_sweep(cfg: BenchConfig) -> list[dict]:
    """One row per L: recall@k, QPS, mean steps, overlap ratio, p99 wait."""
    ctx = SearchContext.from_file(cfg.index_path)
    queries = _load_queries(cfg)
    gt = _load_gt(cfg)
    if gt.query_count < queries.shape[0]:
        raise ConfigError("ground truth has fewer rows than queries")
    rows = []
    for L in cfg.l_sweep:
        backend = _open_bench_backend(cfg)
        params = SearchParams(L=max(L, cfg.k), k=cfg.k, engine=cfg.engine)
        out = run_query_batch(queries, ctx, backend, params,
                              workers=cfg.workers, io_mode=cfg.io_mode,
                              compute_model=cfg.compute_model(),
                              poll_interval_us=cfg.poll_interval_us)
        rep = overlap_report(out.traces)
        rows.append({
            "L": L,
            "recall_at_k": recall_at_k(out.ids, gt, cfg.k),
            "qps": out.qps,
            "mean_steps": float(np.mean([t.steps for t in out.traces])),
            "overlap_ratio": rep["overlap_ratio"],
            "p99_io_wait_us": out.metrics.percentile(99),
        })
        backend.close()
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["L", "recall_at_k", "qps", "mean_steps", "overlap_ratio",
                    "p99_io_wait_us"])
        for r in rows:
            w.writerow([r["L"], f"{r['recall_at_k']:.6f}", f"{r['qps']:.4f}",
                        f"{r['mean_steps']:.3f}", f"{r['overlap_ratio']:.6f}",
                        f"{r['p99_io_wait_us']:.3f}"])


def run_compare_io(cfg: BenchConfig) -> list[dict]:
    """Same query batch under both completion modes; paired metrics."""
    ctx = SearchContext.from_file(cfg.index_path)
    queries = _load_queries(cfg)
    L = cfg.l_sweep[-1]
    rows = []
    for mode in (WORKER_LEVEL, BATCH_BARRIER):
        backend = _open_bench_backend(cfg)
        params = SearchParams(L=max(L, cfg.k), k=cfg.k, engine=cfg.engine)
        out = run_query_batch(queries, ctx, backend, params,
                              workers=cfg.workers, io_mode=mode,
                              compute_model=cfg.compute_model(),
                              poll_interval_us=cfg.poll_interval_us)
        rows.append({
            "io_mode": mode,
            "workers": cfg.workers,
            "qps": out.qps,
            "p50_wait_us": out.metrics.percentile(50),
            "p99_wait_us": out.metrics.percentile(99),
        })
        backend.close()
    return rows


def write_compare_csv(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["io_mode", "workers", "qps", "p50_wait_us", "p99_wait_us"])
        for r in rows:
            w.writerow([r["io_mode"], r["workers"], f"{r['qps']:.4f}",
                        f"{r['p50_wait_us']:.3f}", f"{r['p99_wait_us']:.3f}"])


def calibrate_profile(pages: MemoryBackend, ctx: SearchContext,
                      queries: np.ndarray, compute_model: ComputeModel,
                      target_ratio: float = 1.0,
                      base_profile: StorageProfile | None = None,
                      probe_queries: int = 48, iters: int = 4,
                      params: SearchParams | None = None) -> StorageProfile:
    """Fixed-point adjustment of base latency until the strict engine's mean
    per-step I/O time lands on target_ratio x mean per-step compute time."""
    profile = base_profile or StorageProfile(device_count=4, queue_depth=16,
                                             tail_probability=0.0)
    params = params or SearchParams(L=64, k=10)
    probe = queries[:probe_queries]
    for _ in range(iters):
        backend = SimulatedBackend(pages, profile)
        out = run_query_batch(probe, ctx, backend, params, workers=1,
                              compute_model=compute_model)
        io = np.mean([r.io_complete_us - r.io_submit_us
                      for t in out.traces for r in t.rows])
        comp = np.mean([r.compute_us for t in out.traces for r in t.rows])
        err = target_ratio * comp - io
        new_base = max(profile.base_latency_us + err, 1.0)
        profile = dc_replace(profile, base_latency_us=new_base)
    return profile


def measured_io_compute_ratio(traces) -> float:
    io = np.mean([r.io_complete_us - r.io_submit_us
                  for t in traces for r in t.rows])
    comp = np.mean([r.compute_us for t in traces for r in t.rows])
    return float(io / comp)
