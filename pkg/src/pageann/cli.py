"""Command-line interface.

Subcommands: gen (synthetic dataset), gt (brute-force ground truth),
build (PQ + graph index), tune (degree selection), search (query batch),
sweep (QPS-recall CSV), compare-io (worker-level vs batch-barrier CSV).

Exit codes: 0 success, 2 configuration/usage error, 3 data/file error,
4 runtime error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _cmd_gen(args) -> int:
    from .dataset import gen_synthetic, write_vectors
    ds = gen_synthetic(args.count, args.dim, args.elem, args.seed,
                       args.clusters, args.spread, args.noise_rank)
    fmt = args.format or ("bvecs" if args.elem == "u8" else "fvecs")
    write_vectors(ds, args.out, fmt)
    print(f"wrote {ds.count} x {ds.dim} {ds.elem} vectors to {args.out}")
    return EXIT_OK


def _cmd_gt(args) -> int:
    from .dataset import brute_force_knn, load_vectors, save_ground_truth
    base = load_vectors(args.base, args.base_format)
    queries = load_vectors(args.queries, args.query_format)
    gt = brute_force_knn(base, queries, args.k)
    save_ground_truth(gt, args.out_ids, args.out_dists)
    print(f"wrote ground truth for {gt.query_count} queries (k={gt.k})")
    return EXIT_OK


def _cmd_build(args) -> int:
    from .dataset import load_vectors
    from .index import BuildParams, build_index, write_index
    from .pq import pq_encode, pq_train
    from .tuner import default_m
    base = load_vectors(args.base, args.base_format)
    m = args.m or default_m(base.dim)
    book = pq_train(base, m=m, iters=args.pq_iters, seed=args.seed)
    codes = pq_encode(base, book)
    params = BuildParams(R=args.degree, L_build=args.l_build,
                         alpha=args.alpha, seed=args.seed)
    idx = build_index(base, book, codes, params)
    write_index(idx, args.out)
    print(f"built index: {idx.count} nodes, R={idx.R}, entry={idx.entry_point}")
    return EXIT_OK


def _cmd_tune(args) -> int:
    from .dataset import load_vectors, VectorDataset
    from .search import SearchParams
    from .storage import MemoryBackend, SimulatedBackend, load_profile
    from .tuner import build_sample_index, profile_degree, save_report, select_degree
    base = load_vectors(args.base, args.base_format)
    rng = np.random.default_rng(args.seed)
    if base.count > args.sample_size:
        pick = rng.choice(base.count, args.sample_size, replace=False)
        pick.sort()
        sample = VectorDataset(base.data[pick], base.elem)
    else:
        sample = base
    queries = load_vectors(args.queries, args.query_format).data
    profile = load_profile(args.profile) if args.profile else None
    degrees = [int(d) for d in args.degrees.split(",")]
    profiles = []
    for degree in degrees:
        idx = build_sample_index(sample, degree, seed=args.seed)
        pages = MemoryBackend.from_graph_index(idx)
        backend = pages if profile is None else SimulatedBackend(pages, profile)
        prof = profile_degree(idx, backend, queries,
                              SearchParams(L=args.L, k=args.k),
                              workers=args.workers)
        profiles.append(prof)
        print(f"degree {degree}: compute {prof.t_compute_us:.1f}us, "
              f"io {prof.t_io_us:.1f}us, ratio {prof.ratio:.2f}, "
              f"steps {prof.est_steps:.1f}")
    report = select_degree(profiles)
    save_report(report, args.out_csv, args.out_selected)
    print(f"selected degree: {report.selected_degree}")
    return EXIT_OK


def _cmd_search(args) -> int:
    from .dataset import VectorDataset, load_vectors, save_ground_truth, GroundTruth
    from .search import SearchContext, SearchParams, run_query_batch, save_traces
    from .storage import load_profile, open_backend
    ctx = SearchContext.from_file(args.index)
    queries = load_vectors(args.queries, args.query_format).data
    if args.limit:
        queries = queries[:args.limit]
    profile = load_profile(args.profile) if args.profile else None
    backend = open_backend(args.backend, args.index, profile)
    params = SearchParams(L=args.L, k=args.k, engine=args.engine)
    out = run_query_batch(queries, ctx, backend, params, workers=args.workers,
                          io_mode=args.io_mode)
    gt = GroundTruth(neighbor_ids=out.ids, distances=out.distances)
    save_ground_truth(gt, args.out_ids, args.out_dists)
    if args.traces:
        save_traces(out.traces, args.traces)
    print(f"searched {queries.shape[0]} queries at {out.qps:.1f} qps "
          f"({args.backend} backend)")
    backend.close()
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .bench import load_config, run_sweep, write_sweep_csv
    cfg = load_config(args.config)
    rows = run_sweep(cfg)
    write_sweep_csv(rows, cfg.output_path)
    for r in rows:
        print(f"L={r['L']}: recall {r['recall_at_k']:.4f}, qps {r['qps']:.1f}, "
              f"steps {r['mean_steps']:.1f}, overlap {r['overlap_ratio']:.3f}")
    print(f"wrote {cfg.output_path}")
    return EXIT_OK


def _cmd_compare_io(args) -> int:
    from .bench import load_config, run_compare_io, write_compare_csv
    cfg = load_config(args.config)
    rows = run_compare_io(cfg)
    write_compare_csv(rows, cfg.output_path)
    for r in rows:
        print(f"{r['io_mode']}: qps {r['qps']:.1f}, p50 {r['p50_wait_us']:.1f}us, "
              f"p99 {r['p99_wait_us']:.1f}us")
    print(f"wrote {cfg.output_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pageann",
                                description="storage-resident graph ANN engine")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic blob dataset")
    g.add_argument("--count", type=int, required=True, help="number of vectors")
    g.add_argument("--dim", type=int, required=True, help="vector dimension")
    g.add_argument("--elem", choices=["u8", "i8", "f32"], default="f32",
                   help="element type")
    g.add_argument("--seed", type=int, default=0, help="RNG seed")
    g.add_argument("--clusters", type=int, default=8, help="number of blobs")
    g.add_argument("--spread", type=float, default=None,
                   help="per-coordinate blob sigma (default scales with range)")
    g.add_argument("--noise-rank", type=int, default=None,
                   help="confine cluster noise to a random subspace of this "
                        "dimension (default: isotropic)")
    g.add_argument("--format", choices=["fvecs", "bvecs"], default=None,
                   help="output format (default matches elem)")
    g.add_argument("--out", required=True, help="output vector file")
    g.set_defaults(fn=_cmd_gen)

    t = sub.add_parser("gt", help="exact ground truth by brute force")
    t.add_argument("--base", required=True, help="base vector file")
    t.add_argument("--base-format", default="fvecs", help="base file format")
    t.add_argument("--queries", required=True, help="query vector file")
    t.add_argument("--query-format", default="fvecs", help="query file format")
    t.add_argument("--k", type=int, default=10, help="neighbors per query")
    t.add_argument("--out-ids", required=True, help="output ivecs id file")
    t.add_argument("--out-dists", required=True, help="output fvecs distance file")
    t.set_defaults(fn=_cmd_gt)

    b = sub.add_parser("build", help="train PQ and build the graph index")
    b.add_argument("--base", required=True, help="base vector file")
    b.add_argument("--base-format", default="fvecs", help="base file format")
    b.add_argument("--degree", type=int, required=True, help="max graph degree R")
    b.add_argument("--l-build", type=int, default=None,
                   help="construction beam width (default max(2R, 64))")
    b.add_argument("--alpha", type=float, default=1.2, help="pruning slack")
    b.add_argument("--m", type=int, default=None,
                   help="PQ subspaces (default targets sub_dim 4)")
    b.add_argument("--pq-iters", type=int, default=10, help="k-means iterations")
    b.add_argument("--seed", type=int, default=0, help="build seed")
    b.add_argument("--out", required=True, help="output index file")
    b.set_defaults(fn=_cmd_build)

    u = sub.add_parser("tune", help="profile degrees and select the best")
    u.add_argument("--base", required=True, help="base vector file")
    u.add_argument("--base-format", default="fvecs", help="base file format")
    u.add_argument("--queries", required=True, help="sample query file")
    u.add_argument("--query-format", default="fvecs", help="query file format")
    u.add_argument("--sample-size", type=int, default=100_000,
                   help="vectors sampled for the trial indices")
    u.add_argument("--degrees", default="32,64,128", help="comma list of degrees")
    u.add_argument("--profile", default=None,
                   help="storage profile (omit for in-memory)")
    u.add_argument("--L", type=int, default=64, help="profiling beam width")
    u.add_argument("--k", type=int, default=10, help="results per query")
    u.add_argument("--workers", type=int, default=8, help="profiling workers")
    u.add_argument("--seed", type=int, default=0, help="sampling/build seed")
    u.add_argument("--out-csv", required=True, help="profile table CSV")
    u.add_argument("--out-selected", default=None,
                   help="one-line selected-degree file")
    u.set_defaults(fn=_cmd_tune)

    s = sub.add_parser("search", help="run a query batch against an index")
    s.add_argument("--index", required=True, help="index file")
    s.add_argument("--queries", required=True, help="query vector file")
    s.add_argument("--query-format", default="fvecs", help="query file format")
    s.add_argument("--backend", choices=["file", "memory", "simulated"],
                   default="file", help="storage backend")
    s.add_argument("--profile", default=None, help="storage profile config")
    s.add_argument("--engine", choices=["strict", "relaxed"], default="relaxed",
                   help="search engine")
    s.add_argument("--L", type=int, default=64, help="beam width")
    s.add_argument("--k", type=int, default=10, help="results per query")
    s.add_argument("--workers", type=int, default=8, help="concurrent workers")
    s.add_argument("--io-mode", choices=["worker_level", "batch_barrier"],
                   default="worker_level", help="completion mode")
    s.add_argument("--limit", type=int, default=None, help="first N queries only")
    s.add_argument("--out-ids", required=True, help="output ivecs result ids")
    s.add_argument("--out-dists", required=True, help="output fvecs distances")
    s.add_argument("--traces", default=None, help="optional step-trace CSV")
    s.set_defaults(fn=_cmd_search)

    w = sub.add_parser("sweep", help="QPS-recall sweep over L values")
    w.add_argument("--config", required=True, help="key=value config file")
    w.set_defaults(fn=_cmd_sweep)

    c = sub.add_parser("compare-io", help="worker_level vs batch_barrier run")
    c.add_argument("--config", required=True, help="key=value config file")
    c.set_defaults(fn=_cmd_compare_io)
    return p


def main(argv=None) -> int:
    from .bench import ConfigError
    from .dataset import DatasetError
    from .index import GraphIndexError
    from .layout import LayoutError
    from .pq import PqError
    from .storage import StorageError
    from .tuner import TunerError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, StorageError, GraphIndexError, LayoutError,
            PqError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TunerError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # anything unexpected
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
