"""Compute/IO-balanced graph degree selection.

Builds sample indices at candidate degrees, profiles per-step compute and
I/O durations of the strict engine on the target backend, and picks the
degree minimizing est_steps * max(t_compute, t_io) — with a two-stage
pipeline the per-step cost is the slower stage, and total cost scales with
the step count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import VectorDataset
from .index import BuildParams, GraphIndex, build_index
from .layout import PageOverflow, max_degree_for_page
from .pq import pq_encode, pq_train
from .search import SearchContext, SearchParams, run_query_batch
from .sim import ComputeModel

DEFAULT_DEGREE_GRID = (32, 64, 128, 192, 256)


class TunerError(Exception):
    pass


@dataclass(frozen=True)
class DegreeProfile:
    degree: int
    t_compute_us: float
    t_io_us: float
    est_steps: float

    def __post_init__(self):
        if self.t_compute_us <= 0 or self.t_io_us <= 0 or self.est_steps <= 0:
            raise TunerError("profile durations and steps must be positive")

    @property
    def ratio(self) -> float:
        return self.t_io_us / self.t_compute_us


@dataclass(frozen=True)
class TunerReport:
    profiles: tuple
    selected_degree: int
    objective_values: dict


def default_m(dim: int) -> int:
    """Subspace count giving sub_dim in {4, 8, 16}, else scalar quantization."""
    for sub in (4, 8, 16):
        if dim % sub == 0 and dim // sub >= 1:
            return dim // sub
    return dim


def build_sample_index(base_sample: VectorDataset, degree: int,
                       seed: int = 0, alpha: float = 1.2,
                       l_build: int | None = None) -> GraphIndex:
    """Real-edge index over the sample at the requested degree."""
    cap = max_degree_for_page(base_sample.dim, base_sample.elem_size)
    if degree > cap:
        raise PageOverflow(f"degree {degree} exceeds page capacity {cap}")
    book = pq_train(base_sample, m=default_m(base_sample.dim), iters=8, seed=seed)
    codes = pq_encode(base_sample, book)
    params = BuildParams(R=degree, L_build=l_build, alpha=alpha, seed=seed)
    return build_index(base_sample, book, codes, params)


def _trimmed_mean(values, trim: float = 0.05) -> float:
    values = np.sort(np.asarray(values, dtype=np.float64))
    n = len(values)
    cut = int(n * trim)
    trimmed = values[cut:n - cut] if n - 2 * cut > 0 else values
    return float(trimmed.mean())


def profile_degree(idx: GraphIndex, backend, sample_queries: np.ndarray,
                   params: SearchParams | None = None,
                   compute_model: ComputeModel | None = None,
                   workers: int = 8) -> DegreeProfile:
    """Strict-engine timing profile: trimmed-mean per-step compute and I/O."""
    queries = np.asarray(sample_queries)
    if queries.shape[0] < 100:
        raise TunerError(f"need >= 100 sample queries, got {queries.shape[0]}")
    params = params or SearchParams(L=64, k=10)
    ctx = SearchContext.from_graph_index(idx)
    out = run_query_batch(queries, ctx, backend, params, workers=workers,
                          compute_model=compute_model)
    compute = []
    io = []
    steps = []
    for tr in out.traces:
        steps.append(tr.steps)
        for r in tr.rows:
            compute.append(r.compute_us)
            io.append(r.io_complete_us - r.io_submit_us)
    return DegreeProfile(
        degree=idx.R,
        t_compute_us=_trimmed_mean(compute),
        t_io_us=max(_trimmed_mean(io), 1e-9),
        est_steps=float(np.mean(steps)),
    )


def objective(profile: DegreeProfile) -> float:
    """Pipeline cost model: steps times the slower stage."""
    return profile.est_steps * max(profile.t_compute_us, profile.t_io_us)


def select_degree(profiles) -> TunerReport:
    """Argmin of the objective; ties go to the smaller degree."""
    profiles = tuple(profiles)
    if len(profiles) < 2:
        raise TunerError("need at least 2 profiles to select a degree")
    values = {p.degree: objective(p) for p in profiles}
    selected = min(profiles, key=lambda p: (objective(p), p.degree)).degree
    return TunerReport(profiles=profiles, selected_degree=selected,
                       objective_values=values)


def save_report(report: TunerReport, csv_path, selected_path=None) -> None:
    """CSV of profiles plus a one-line selected-degree file."""
    import csv as _csv
    with open(csv_path, "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["degree", "t_compute_us", "t_io_us", "ratio",
                    "est_steps", "objective"])
        for p in report.profiles:
            w.writerow([p.degree, f"{p.t_compute_us:.3f}", f"{p.t_io_us:.3f}",
                        f"{p.ratio:.4f}", f"{p.est_steps:.2f}",
                        f"{report.objective_values[p.degree]:.3f}"])
    if selected_path is not None:
        with open(selected_path, "w") as f:
            f.write(f"{report.selected_degree}\n")
