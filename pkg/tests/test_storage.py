import numpy as np
import pytest

from pageann.layout import PAGE_SIZE
from pageann.storage import (
    MemoryBackend,
    NoTraffic,
    SimulatedBackend,
    StorageError,
    StorageProfile,
    load_profile,
    open_backend,
    save_profile,
)


def _sim(path, **kw):
    return open_backend("simulated", path, StorageProfile(**kw))


class TestFileBackend:
    def test_identity_read(self, tiny_index):
        b = open_backend("file", tiny_index["path"])
        h = b.header
        raw = tiny_index["path"].read_bytes()
        page0 = raw[h.page_base:h.page_base + PAGE_SIZE]
        assert b.read_page(0) == page0
        b.close()

    def test_out_of_range(self, tiny_index):
        b = open_backend("file", tiny_index["path"])
        with pytest.raises(StorageError):
            b.read_page(10_000)
        b.close()

    def test_report_counters(self, tiny_index):
        b = open_backend("file", tiny_index["path"])
        with pytest.raises(NoTraffic):
            b.throughput_report()
        for i in range(10):
            b.read_page(i)
        rep = b.throughput_report()
        assert rep["pages_read"] == 10
        assert rep["bytes_read"] == 40960
        b.close()


class TestMemoryBackend:
    def test_matches_file_pages(self, tiny_index):
        f = open_backend("file", tiny_index["path"])
        m = open_backend("memory", tiny_index["path"])
        for i in (0, 5, 399):
            assert m.read_page(i) == f.read_page(i)
        f.close()

    def test_virtual_submit_instant(self, tiny_index):
        m = open_backend("memory", tiny_index["path"])
        assert m.submit(3, 125.0) == 125.0


class TestSimulatedModel:
    def test_deterministic_replay(self, tiny_index):
        seq = [5, 1, 200, 42, 5, 7] * 20
        lat1 = []
        lat2 = []
        for out in (lat1, lat2):
            b = _sim(tiny_index["path"], seed=9, tail_probability=0.2,
                     tail_latency_us=500.0)
            for n in seq:
                t0 = b.now_us
                b.read_page(n)
                out.append(b.now_us - t0)
        assert lat1 == lat2

    def test_payload_matches_memory(self, tiny_index):
        b = _sim(tiny_index["path"], tail_probability=0.0)
        m = open_backend("memory", tiny_index["path"])
        assert b.read_page(17) == m.read_page(17)

    def test_no_tail_latency_bounds(self, tiny_index):
        qd = 8
        prof = StorageProfile(device_count=1, queue_depth=qd,
                              base_latency_us=80.0, tail_probability=0.0,
                              bandwidth_mbps=100.0)  # service = 40.96us
        b = SimulatedBackend(MemoryBackend.from_file(tiny_index["path"]), prof)
        comps = [b.submit(7, 0.0) for _ in range(qd)]
        svc = prof.service_time_us
        for i, c in enumerate(sorted(comps)):
            assert c >= prof.base_latency_us
            assert c <= prof.base_latency_us + svc * qd

    def test_single_read_floor(self, tiny_index):
        prof = StorageProfile(base_latency_us=10.0, tail_probability=0.0,
                              bandwidth_mbps=50.0)  # service 81.92us > base
        b = SimulatedBackend(MemoryBackend.from_file(tiny_index["path"]), prof)
        c = b.submit(3, 0.0)
        assert c >= prof.service_time_us

    def test_tail_count_within_binomial_ci(self, tiny_index):
        p = 0.05
        n_reads = 64 * 200
        prof = StorageProfile(device_count=4, queue_depth=64,
                              base_latency_us=80.0, tail_probability=p,
                              tail_latency_us=5000.0, bandwidth_mbps=3200.0,
                              seed=123)
        b = SimulatedBackend(MemoryBackend.from_file(tiny_index["path"]), prof)
        tails = 0
        t = 0.0
        for i in range(n_reads):
            c = b.submit(i % 400, t)
            if c - t >= prof.tail_latency_us:
                tails += 1
            t += 100.0  # low load so queueing never mimics a tail
        mean = n_reads * p
        sd = (n_reads * p * (1 - p)) ** 0.5
        assert abs(tails - mean) <= 2.58 * sd

    def test_saturated_throughput_matches_devices(self, tiny_index):
        for devices in (1, 2):
            prof = StorageProfile(device_count=devices, queue_depth=32,
                                  base_latency_us=80.0, tail_probability=0.0,
                                  bandwidth_mbps=500.0, seed=5)
            b = SimulatedBackend(MemoryBackend.from_file(tiny_index["path"]), prof)
            rng = np.random.default_rng(7)
            for n in rng.integers(0, 400, 20_000):
                b.submit(int(n), 0.0)
            rep = b.throughput_report()
            expect = devices * prof.bandwidth_mbps
            assert abs(rep["achieved_bandwidth_mbps"] - expect) / expect < 0.10

    def test_doubling_devices_scales(self, tiny_index):
        rates = {}
        for devices in (2, 4):
            prof = StorageProfile(device_count=devices, queue_depth=32,
                                  base_latency_us=80.0, tail_probability=0.02,
                                  tail_latency_us=800.0, bandwidth_mbps=500.0,
                                  seed=5)
            b = SimulatedBackend(MemoryBackend.from_file(tiny_index["path"]), prof)
            rng = np.random.default_rng(7)
            for n in rng.integers(0, 400, 20_000):
                b.submit(int(n), 0.0)
            rates[devices] = b.throughput_report()["achieved_bandwidth_mbps"]
        ratio = rates[4] / rates[2]
        assert ratio >= 1.8
        assert ratio <= 2.05

    def test_conservation(self, tiny_index):
        b = _sim(tiny_index["path"], seed=3)
        for i in range(500):
            b.read_page(i % 400)
        assert b.issued == 500
        assert b.completed == 500
        assert b.throughput_report()["pages_read"] == 500

    def test_monotone_submission_guard(self, tiny_index):
        b = _sim(tiny_index["path"])
        b.submit(0, 100.0)
        with pytest.raises(StorageError):
            b.submit(0, 50.0)

    def test_injected_straggler(self, tiny_index):
        prof = StorageProfile(device_count=1, queue_depth=16,
                              base_latency_us=80.0, tail_probability=0.0,
                              tail_latency_us=1000.0, bandwidth_mbps=3200.0,
                              inject_tail_node_ids=frozenset({42}))
        b = SimulatedBackend(MemoryBackend.from_file(tiny_index["path"]), prof)
        c_normal = b.submit(7, 0.0)
        c_tail = b.submit(42, 0.0)
        assert c_tail - c_normal >= prof.tail_latency_us * 0.9


class TestProfileConfig:
    def test_round_trip(self, tmp_path):
        prof = StorageProfile(device_count=4, queue_depth=8, base_latency_us=120.0,
                              tail_probability=0.01, tail_latency_us=900.0,
                              bandwidth_mbps=1500.0, seed=77)
        p = tmp_path / "prof.cfg"
        save_profile(prof, p)
        back = load_profile(p)
        assert back == prof

    def test_comments_and_blank_lines(self, tmp_path):
        p = tmp_path / "prof.cfg"
        p.write_text("# storage profile\n\ndevice_count=2\nbandwidth_mb_per_s=100\n")
        prof = load_profile(p)
        assert prof.device_count == 2
        assert prof.bandwidth_mbps == 100.0

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "prof.cfg"
        p.write_text("warp_count=3\n")
        with pytest.raises(StorageError):
            load_profile(p)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "prof.cfg"
        p.write_text("device_count=lots\n")
        with pytest.raises(StorageError):
            load_profile(p)

    def test_invalid_profile_values(self):
        with pytest.raises(StorageError):
            StorageProfile(device_count=0)
        with pytest.raises(StorageError):
            StorageProfile(tail_probability=1.5)
        with pytest.raises(StorageError):
            StorageProfile(bandwidth_mbps=-3.0)


class TestOpenBackend:
    def test_unknown_kind(self, tiny_index):
        with pytest.raises(StorageError):
            open_backend("gpu", tiny_index["path"])

    def test_simulated_requires_profile(self, tiny_index):
        with pytest.raises(StorageError):
            open_backend("simulated", tiny_index["path"], None)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            open_backend("file", tmp_path / "nope.idx")
