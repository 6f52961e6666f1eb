"""pageann: a desk-scale, storage-resident graph ANN engine.

One 4KB page per node (full-precision vector + bounded neighbor list),
PQ-guided best-first traversal with exact re-ranking, a dependency-relaxed
pipelined engine that overlaps page reads with scoring, per-worker
asynchronous I/O completion, and sampling-based graph-degree selection.
"""

from .dataset import (
    GroundTruth,
    VectorDataset,
    brute_force_knn,
    gen_synthetic,
    load_ground_truth,
    load_vectors,
    recall_at_k,
    save_ground_truth,
    write_vectors,
)
from .heaps import BoundedCandidateList, MinMaxHeap, ResultQueue
from .index import (
    BuildParams,
    GraphIndex,
    IndexHeader,
    build_index,
    load_index,
    medoid,
    reachability,
    read_index_header,
    write_index,
)
from .layout import (
    PAGE_SIZE,
    fill_ratio,
    max_degree_for_page,
    node_payload_bytes,
    payload_no_count,
)
from .pq import PqCodebook, PqCodes, adc_distance, adc_table, pq_encode, pq_train
from .search import (
    BatchResult,
    SearchContext,
    SearchParams,
    SearchResult,
    freshness_utilization,
    overlap_report,
    run_query_batch,
    save_traces,
    search_relaxed,
    search_strict,
)
from .sim import ComputeModel
from .storage import StorageProfile, load_profile, open_backend, save_profile
from .tuner import (
    DegreeProfile,
    TunerReport,
    build_sample_index,
    profile_degree,
    select_degree,
)

__version__ = "0.1.0"
