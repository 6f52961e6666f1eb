import numpy as np
import pytest

from pageann.dataset import gen_synthetic
from pageann.layout import PageOverflow, fill_ratio
from pageann.search import SearchContext, SearchParams, run_query_batch
from pageann.sim import ComputeModel
from pageann.storage import MemoryBackend, SimulatedBackend, StorageProfile
from pageann.tuner import (
    DegreeProfile,
    TunerError,
    build_sample_index,
    objective,
    profile_degree,
    select_degree,
)


@pytest.fixture(scope="module")
def sample():
    return gen_synthetic(2500, 32, "f32", seed=50, clusters=12)


@pytest.fixture(scope="module")
def queries(sample):
    rng = np.random.default_rng(51)
    pick = rng.choice(sample.count, 120, replace=False)
    return (sample.data[pick] + rng.normal(0, 0.02, (120, 32))).astype(np.float32)


class TestBuildSampleIndex:
    def test_degrees_give_valid_indices_with_increasing_fill(self, sample):
        fills = []
        for degree in (8, 16, 32):
            idx = build_sample_index(sample, degree, seed=50)
            assert idx.R == degree
            assert idx.neighbor_counts.max() <= degree
            fills.append(fill_ratio(sample.dim, sample.elem_size, degree))
        assert fills[0] < fills[1] < fills[2]

    def test_degree_above_page_capacity(self, sample):
        with pytest.raises(PageOverflow):
            build_sample_index(sample, 2000, seed=50)

    def test_deterministic(self, sample):
        a = build_sample_index(sample, 12, seed=7)
        b = build_sample_index(sample, 12, seed=7)
        np.testing.assert_array_equal(a.neighbors, b.neighbors)


class TestProfileDegree:
    def test_requires_100_queries(self, sample, queries):
        idx = build_sample_index(sample, 12, seed=50)
        backend = MemoryBackend.from_graph_index(idx)
        with pytest.raises(TunerError):
            profile_degree(idx, backend, queries[:50])

    def test_zero_latency_is_compute_bound(self, sample, queries):
        idx = build_sample_index(sample, 12, seed=50)
        backend = MemoryBackend.from_graph_index(idx)
        prof = profile_degree(idx, backend, queries,
                              compute_model=ComputeModel(), workers=4)
        assert prof.ratio < 0.2

    def test_calibrated_latency_gives_expected_ratio(self, sample, queries):
        idx = build_sample_index(sample, 12, seed=50)
        model = ComputeModel(select_us=10.0, process_fixed_us=5.0,
                             process_per_neighbor_us=1.0)
        mem = MemoryBackend.from_graph_index(idx)
        probe = profile_degree(idx, mem, queries, compute_model=model, workers=1)
        target_io = 10.0 * probe.t_compute_us
        sprof = StorageProfile(device_count=8, queue_depth=32, tail_probability=0.0,
                               base_latency_us=target_io - 1.28,
                               bandwidth_mbps=3200.0)
        backend = SimulatedBackend(MemoryBackend.from_graph_index(idx), sprof)
        prof = profile_degree(idx, backend, queries, compute_model=model, workers=1)
        assert 8.0 <= prof.ratio <= 12.0

    def test_doubling_devices_halves_io_at_saturation(self, sample, queries):
        idx = build_sample_index(sample, 12, seed=50)
        model = ComputeModel(select_us=2.0, process_fixed_us=1.0,
                             process_per_neighbor_us=0.1)
        t_io = {}
        for devices in (1, 2):
            sprof = StorageProfile(device_count=devices, queue_depth=8,
                                   tail_probability=0.0, base_latency_us=20.0,
                                   bandwidth_mbps=40.0, seed=3)  # ~102us/page
            backend = SimulatedBackend(MemoryBackend.from_graph_index(idx), sprof)
            prof = profile_degree(idx, backend, queries,
                                  compute_model=model, workers=32)
            t_io[devices] = prof.t_io_us
        ratio = t_io[1] / t_io[2]
        assert 1.5 <= ratio <= 2.5


class TestSelectDegree:
    def _p(self, degree, tc, tio, steps):
        return DegreeProfile(degree, tc, tio, steps)

    def test_balanced_beats_io_bound(self):
        d1 = self._p(150, 100.0, 420.0, 50.0)   # ratio 4.2
        d2 = self._p(250, 180.0, 198.0, 46.0)   # ratio 1.1
        report = select_degree([d1, d2])
        assert report.selected_degree == 250

    def test_tie_goes_to_smaller_degree(self):
        d1 = self._p(64, 100.0, 100.0, 50.0)
        d2 = self._p(128, 100.0, 100.0, 50.0)
        assert select_degree([d1, d2]).selected_degree == 64

    def test_needs_two_profiles(self):
        with pytest.raises(TunerError):
            select_degree([self._p(64, 1.0, 1.0, 10.0)])

    def test_more_io_pressure_never_lowers_degree(self):
        # profiles come from one storage setup: the per-step I/O time is the
        # same 4KB read at every degree (small jitter), steps fall with degree
        rng = np.random.default_rng(9)
        for _ in range(30):
            profiles = []
            t_io = rng.uniform(50.0, 400.0)
            steps = 220.0 * (1.0 + rng.uniform(0, 0.2))
            for d in (32, 64, 128, 256):
                tc = 20.0 + d * rng.uniform(0.5, 1.5)
                jitter = 1.0 + rng.uniform(-0.03, 0.03)
                profiles.append(self._p(d, tc, t_io * jitter, steps))
                steps *= rng.uniform(0.70, 0.85)
            base_sel = select_degree(profiles).selected_degree
            for c in (1.5, 3.0, 10.0):
                scaled = [self._p(p.degree, p.t_compute_us, p.t_io_us * c,
                                  p.est_steps) for p in profiles]
                assert select_degree(scaled).selected_degree >= base_sel

    def test_objective_invariant_to_uniform_rescale(self):
        profiles = [self._p(32, 50.0, 120.0, 80.0), self._p(64, 90.0, 120.0, 55.0),
                    self._p(128, 170.0, 120.0, 40.0)]
        base = select_degree(profiles)
        scaled = [self._p(p.degree, p.t_compute_us * 7.5, p.t_io_us * 7.5,
                          p.est_steps) for p in profiles]
        again = select_degree(scaled)
        assert again.selected_degree == base.selected_degree
        for d, v in base.objective_values.items():
            assert again.objective_values[d] == pytest.approx(v * 7.5)

    def test_selected_matches_end_to_end_smoke(self, sample, queries):
        """The chosen degree's measured batch latency is near the best."""
        model = ComputeModel(select_us=8.0, process_fixed_us=4.0,
                             process_per_neighbor_us=0.9)
        sprof = StorageProfile(device_count=2, queue_depth=16,
                               tail_probability=0.0, base_latency_us=120.0,
                               bandwidth_mbps=800.0, seed=1)
        profiles = []
        walls = {}
        for degree in (8, 24):
            idx = build_sample_index(sample, degree, seed=50)
            backend = SimulatedBackend(MemoryBackend.from_graph_index(idx), sprof)
            profiles.append(profile_degree(idx, backend, queries,
                                           compute_model=model, workers=4))
            val_backend = SimulatedBackend(MemoryBackend.from_graph_index(idx), sprof)
            ctx = SearchContext.from_graph_index(idx)
            out = run_query_batch(queries, ctx, val_backend,
                                  SearchParams(L=64, k=10, engine="relaxed"),
                                  workers=4, compute_model=model)
            walls[degree] = out.wall_us
        report = select_degree(profiles)
        best = min(walls, key=walls.get)
        assert walls[report.selected_degree] <= walls[best] * 1.10
