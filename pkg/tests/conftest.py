import numpy as np
import pytest

from pageann.dataset import gen_synthetic
from pageann.index import BuildParams, build_index, write_index
from pageann.pq import pq_encode, pq_train


@pytest.fixture(scope="session")
def tiny_index(tmp_path_factory):
    """A small on-disk index shared by storage/iostack/search tests."""
    base = gen_synthetic(400, 8, "f32", seed=33, clusters=4)
    book = pq_train(base, m=2, iters=4, seed=33)
    codes = pq_encode(base, book)
    idx = build_index(base, book, codes, BuildParams(R=8, L_build=24, seed=33))
    path = tmp_path_factory.mktemp("idx") / "tiny.idx"
    write_index(idx, path)
    return {"path": path, "base": base, "index": idx}


@pytest.fixture(scope="session")
def blob_index(tmp_path_factory):
    """A 4k-vector index with enough structure for engine-quality tests."""
    base = gen_synthetic(4000, 32, "f32", seed=44, clusters=16)
    book = pq_train(base, m=8, iters=8, seed=44)
    codes = pq_encode(base, book)
    idx = build_index(base, book, codes,
                      BuildParams(R=24, L_build=48, alpha=1.2, seed=44))
    path = tmp_path_factory.mktemp("idx") / "blob.idx"
    write_index(idx, path)
    return {"path": path, "base": base, "index": idx}
