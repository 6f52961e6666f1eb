import numpy as np
import pytest

from pageann.dataset import VectorDataset, gen_synthetic, squared_l2
from pageann.pq import (
    PqCodes,
    PqError,
    adc_distance,
    adc_distance_batch,
    adc_table,
    pq_encode,
    pq_train,
    reconstruct,
)


@pytest.fixture(scope="module")
def blobs():
    return gen_synthetic(2000, 16, "f32", seed=11, clusters=6)


@pytest.fixture(scope="module")
def book(blobs):
    return pq_train(blobs, m=4, iters=8, seed=2)


class TestTrain:
    def test_deterministic(self, blobs):
        a = pq_train(blobs, m=4, iters=5, seed=3)
        b = pq_train(blobs, m=4, iters=5, seed=3)
        np.testing.assert_array_equal(a.centroids, b.centroids)

    def test_256_distinct_vectors_zero_error(self):
        rng = np.random.default_rng(0)
        # distinct in every subspace so each point can own a centroid
        data = rng.permutation(256).astype(np.float32).reshape(256, 1)
        data = np.hstack([data, data + 1000.0])
        ds = VectorDataset(data.astype(np.float32), "f32")
        book = pq_train(ds, m=2, iters=25, seed=1)
        codes = pq_encode(ds, book)
        recon = reconstruct(codes, book)
        err = np.sum((recon - ds.data) ** 2)
        assert err == 0.0

    def test_m_equals_dim_boundary(self, blobs):
        book = pq_train(blobs, m=16, iters=2, seed=5)
        assert book.sub_dim == 1
        assert book.m == 16

    def test_monotone_objective(self, book):
        for errs in book.training_errors:
            diffs = np.diff(np.array(errs))
            assert np.all(diffs <= 1e-6)

    def test_errors(self, blobs):
        with pytest.raises(PqError):
            pq_train(blobs, m=5, iters=2, seed=0)  # 5 does not divide 16
        small = VectorDataset(np.zeros((100, 16), dtype=np.float32), "f32")
        with pytest.raises(PqError):
            pq_train(small, m=4, iters=2, seed=0)


class TestEncode:
    def test_exact_centroid_vector(self, book):
        j = 37
        vec = np.hstack([book.centroids[s][j] for s in range(book.m)])
        ds = VectorDataset(vec[None, :].astype(np.float32), "f32")
        codes = pq_encode(ds, book)
        assert np.all(codes.codes[0] == j)

    def test_matches_exhaustive_argmin_oracle(self, blobs, book):
        sample = VectorDataset(blobs.data[:50], "f32")
        codes = pq_encode(sample, book)
        sub = book.sub_dim
        for row in range(50):
            for s in range(book.m):
                seg = sample.data[row, s * sub:(s + 1) * sub].astype(np.float32)
                d = np.sum((book.centroids[s] - seg) ** 2, axis=1)
                assert codes.codes[row, s] == int(np.argmin(d))

    def test_empty_dataset(self, book):
        empty = VectorDataset(np.zeros((0, 16), dtype=np.float32), "f32")
        codes = pq_encode(empty, book)
        assert codes.count == 0

    def test_dim_mismatch(self, book):
        bad = VectorDataset(np.zeros((4, 8), dtype=np.float32), "f32")
        with pytest.raises(PqError):
            pq_encode(bad, book)

    def test_idempotent_encoding(self, blobs, book):
        codes = pq_encode(VectorDataset(blobs.data[:100], "f32"), book)
        recon = reconstruct(codes, book)
        codes2 = pq_encode(VectorDataset(recon, "f32"), book)
        np.testing.assert_array_equal(codes.codes, codes2.codes)


class TestAdc:
    def test_zero_at_matching_centroid(self, book):
        s, c = 2, 99
        q = np.hstack([book.centroids[i][c if i == s else 0] for i in range(book.m)])
        table = adc_table(q, book)
        assert table[s, c] == 0.0

    def test_non_negative(self, book):
        rng = np.random.default_rng(9)
        table = adc_table(rng.normal(size=16), book)
        assert np.all(table >= 0)

    def test_table_matches_direct_oracle(self, book):
        rng = np.random.default_rng(10)
        q = rng.normal(size=16).astype(np.float32)
        table = adc_table(q, book)
        sub = book.sub_dim
        for s in range(book.m):
            seg = q[s * sub:(s + 1) * sub]
            expect = np.sum((book.centroids[s] - seg) ** 2, axis=1)
            np.testing.assert_allclose(table[s], expect, rtol=1e-5)

    def test_dim_mismatch(self, book):
        with pytest.raises(PqError):
            adc_table(np.zeros(8), book)

    def test_adc_equals_reconstruction_distance(self, blobs, book):
        rng = np.random.default_rng(12)
        q = rng.normal(size=16).astype(np.float32)
        table = adc_table(q, book)
        codes = pq_encode(VectorDataset(blobs.data[:200], "f32"), book)
        recon = reconstruct(codes, book)
        exact = squared_l2(q[None, :], recon)[0]
        approx = adc_distance_batch(codes.codes, table)
        np.testing.assert_allclose(approx, exact, rtol=1e-3, atol=1e-4)

    def test_single_lookup_m1(self, blobs):
        book = pq_train(blobs, m=1, iters=3, seed=4)
        table = adc_table(blobs.data[0], book)
        code = np.array([7], dtype=np.uint8)
        assert adc_distance(code, table) == pytest.approx(float(table[0, 7]))

    def test_self_distance_of_representable_vector(self, book):
        vec = np.hstack([book.centroids[s][3] for s in range(book.m)])
        ds = VectorDataset(vec[None, :].astype(np.float32), "f32")
        codes = pq_encode(ds, book)
        table = adc_table(vec, book)
        assert adc_distance(codes.codes[0], table) == 0.0

    def test_code_out_of_range(self, book):
        table = adc_table(np.zeros(16, dtype=np.float32), book)
        with pytest.raises(PqError):
            adc_distance(np.array([0, 1, 2], dtype=np.int32), table)
        with pytest.raises(PqError):
            adc_distance(np.array([0, 1, 2, 300], dtype=np.int32), table)
