"""Command-line interface: cluster, eval, gen, stability, bench.

Exit codes: 0 success, 2 argument/spec errors, 3 input format errors,
4 runtime failures. Diagnostics go to stderr; results go to the requested
output files, with small JSON summaries on stdout.

Option precedence: command-line flags beat values from an optional
``--config`` file (one ``key = value`` per line, keys matching the long
flag names), which beat the ``UMICLUST_THREADS`` environment variable,
which beats built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import bench_scaling, sweep_workload
from .dataio import (
    IngestOptions,
    MatrixFormatError,
    downsample_depth,
    read_labels,
    read_matrix,
    write_csv,
    write_labels,
    write_mtx,
    write_report,
)
from .metrics import adjusted_rand_index, coassignment_stability, huberts_index, rand_index
from .sampler import SamplerConfig, run
from .state import Hyperparams, StructureError
from .synthgen import SynthSpec, generate

__all__ = ["main"]


def _fail(code: int, message: str) -> int:
    print(f"umiclust: error: {message}", file=sys.stderr)
    return code


def _resolve_threads(value: str) -> int:
    if value == "auto":
        n = os.cpu_count() or 1
        print(f"umiclust: using {n} threads", file=sys.stderr)
        return n
    n = int(value)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    return n


def _add_sampler_flags(p: argparse.ArgumentParser) -> None:
    env_threads = os.environ.get("UMICLUST_THREADS", "1")
    p.add_argument("--top-genes", type=int, default=None, help="keep only the k most variable genes")
    p.add_argument("--alpha", type=float, default=0.5, help="cluster-count concentration")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="profile Dirichlet hyperparameter")
    p.add_argument("--lambda-bar", dest="lam_bar", type=float, default=1.0, help="subcluster Dirichlet hyperparameter")
    p.add_argument("--iters", type=int, default=200, help="number of MCMC iterations")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--k-init", type=int, default=1)
    p.add_argument("--splits-per-iter", type=int, default=1)
    p.add_argument("--merges-per-iter", type=int, default=1)
    p.add_argument("--local-gibbs-iters", type=int, default=1)
    p.add_argument("--threads", type=str, default=env_threads, help="worker threads, or 'auto'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimator", choices=["map", "last"], default="map")


def _add_input_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="matrix path (or 10x directory)")
    p.add_argument("--format", choices=["mtx", "tenx_dir", "csv"], default="mtx")
    p.add_argument("--transpose", action="store_true", help="rows index cells instead of genes")


def _config_from_args(args: argparse.Namespace, n_threads: int) -> SamplerConfig:
    return SamplerConfig(
        hp=Hyperparams(alpha=args.alpha, lam=args.lam, lam_bar=args.lam_bar),
        n_iterations=args.iters,
        local_gibbs_iters=args.local_gibbs_iters,
        split_moves_per_iter=args.splits_per_iter,
        merge_moves_per_iter=args.merges_per_iter,
        k_init=args.k_init,
        seed=args.seed,
        n_threads=n_threads,
        burn_in=args.burn_in,
        estimator=args.estimator,
    )


def _run_clustering(args: argparse.Namespace, seed: int | None = None):
    opts = IngestOptions(format=args.format, top_k_genes=args.top_genes, transpose=args.transpose)
    matrix = read_matrix(args.input, opts)
    config = _config_from_args(args, _resolve_threads(args.threads))
    if seed is not None:
        config.seed = seed
    return run(matrix, config), matrix


def cmd_cluster(args: argparse.Namespace) -> int:
    report, matrix = _run_clustering(args)
    if args.out_labels:
        write_labels(args.out_labels, report.labels, cell_names=matrix.cell_names)
    if args.out_report:
        write_report(args.out_report, report, labels_path=args.out_labels)
    print(json.dumps({"final_k": report.final_k, "iterations": len(report.trace)}))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    p1 = read_labels(args.labels_a)
    p2 = read_labels(args.labels_b)
    if len(p1) != len(p2):
        raise MatrixFormatError(
            f"label files disagree on length: {len(p1)} vs {len(p2)}"
        )
    print(
        json.dumps(
            {
                "ari": adjusted_rand_index(p1, p2),
                "ri": rand_index(p1, p2),
                "hi": huberts_index(p1, p2),
            }
        )
    )
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    reads = (
        (args.reads_min, args.reads_max)
        if args.reads_min is not None and args.reads_max is not None
        else args.reads
    )
    spec = SynthSpec(
        n_clusters=args.clusters,
        n_cells=args.cells,
        n_genes=args.genes,
        reads_per_cell=reads,
        lambda_gen=args.lambda_gen,
        separation=args.separation,
        seed=args.seed,
    )
    matrix, truth, _ = generate(spec)
    if args.downsample:
        matrix = downsample_depth(matrix, args.downsample, seed=args.seed)
    if args.out_matrix.endswith(".csv"):
        write_csv(args.out_matrix, matrix)
    else:
        write_mtx(args.out_matrix, matrix)
    write_labels(args.out_labels, truth)
    print(json.dumps({"cells": matrix.n_cells, "genes": matrix.n_genes, "nnz": len(matrix.data)}))
    return 0


def cmd_stability(args: argparse.Namespace) -> int:
    if args.runs < 2:
        raise StructureError("stability needs at least 2 runs")
    partitions = []
    for r in range(args.runs):
        report, _ = _run_clustering(args, seed=args.seed + r)
        partitions.append(report.labels)
    stability = coassignment_stability(partitions)
    if args.out_stability:
        with open(args.out_stability, "w", encoding="utf-8") as fh:
            fh.write("cell,stability\n")
            for i, s in enumerate(stability):
                fh.write(f"{i},{s:.6f}\n")
    qs = np.quantile(stability, [0.0, 0.25, 0.5, 0.75, 1.0])
    print(
        json.dumps(
            {
                "runs": args.runs,
                "seeds": list(range(args.seed, args.seed + args.runs)),
                "quantiles": {
                    "min": qs[0], "q25": qs[1], "median": qs[2], "q75": qs[3], "max": qs[4]
                },
            }
        )
    )
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    thread_counts = [int(t) for t in args.thread_list.split(",") if t.strip()]
    spec = SynthSpec(
        n_clusters=args.clusters,
        n_cells=args.cells,
        n_genes=args.genes,
        reads_per_cell=args.reads,
        separation=0.8,
        seed=args.seed,
    )
    matrix, _, _ = generate(spec)  # generation is not timed
    config = _config_from_args(args, 1)
    workload = sweep_workload(matrix, config, n_sweeps=args.sweeps)
    result = bench_scaling(workload, thread_counts, repetitions=args.reps)
    print(json.dumps(result.to_json_dict()))
    return 0


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise StructureError(f"{path}: line {lineno}: expected 'key = value'")
            key, val = s.split("=", 1)
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config_defaults(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    known = {a.dest: a for a in parser._actions}
    unknown = [k for k in values if k not in known]
    if unknown:
        raise StructureError(f"unknown config file key(s): {', '.join(sorted(unknown))}")
    converted = {}
    for key, raw in values.items():
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            converted[key] = raw.lower() in ("1", "true", "yes")
        elif action.type is not None:
            converted[key] = action.type(raw)
        else:
            converted[key] = raw
    parser.set_defaults(**converted)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="umiclust",
        description="Nonparametric Bayesian clustering of UMI count matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cluster = sub.add_parser("cluster", help="cluster a count matrix")
    _add_input_flags(p_cluster)
    _add_sampler_flags(p_cluster)
    p_cluster.add_argument("--out-labels", default=None)
    p_cluster.add_argument("--out-report", default=None)
    p_cluster.add_argument("--config", default=None, help="key = value defaults file")
    p_cluster.set_defaults(func=cmd_cluster)

    p_eval = sub.add_parser("eval", help="compare two label files")
    p_eval.add_argument("labels_a")
    p_eval.add_argument("labels_b")
    p_eval.set_defaults(func=cmd_eval)

    p_gen = sub.add_parser("gen", help="generate synthetic data")
    p_gen.add_argument("--clusters", type=int, required=True)
    p_gen.add_argument("--cells", type=int, required=True)
    p_gen.add_argument("--genes", type=int, required=True)
    p_gen.add_argument("--reads", type=int, default=1000)
    p_gen.add_argument("--reads-min", type=int, default=None)
    p_gen.add_argument("--reads-max", type=int, default=None)
    p_gen.add_argument("--separation", type=float, default=0.8)
    p_gen.add_argument("--lambda-gen", type=float, default=1.0)
    p_gen.add_argument("--downsample", type=int, default=None, help="thin to this depth per cell")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out-matrix", required=True)
    p_gen.add_argument("--out-labels", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_stab = sub.add_parser("stability", help="repeat clustering and score per-cell stability")
    _add_input_flags(p_stab)
    _add_sampler_flags(p_stab)
    p_stab.add_argument("--runs", type=int, required=True)
    p_stab.add_argument("--out-stability", default=None)
    p_stab.add_argument("--config", default=None)
    p_stab.set_defaults(func=cmd_stability)

    p_bench = sub.add_parser("bench", help="thread-scaling benchmark on synthetic data")
    _add_sampler_flags(p_bench)
    p_bench.add_argument("--cells", type=int, default=20000)
    p_bench.add_argument("--genes", type=int, default=2000)
    p_bench.add_argument("--clusters", type=int, default=5)
    p_bench.add_argument("--reads", type=int, default=1500)
    p_bench.add_argument("--thread-list", default="1,2,4,8")
    p_bench.add_argument("--reps", type=int, default=3)
    p_bench.add_argument("--sweeps", type=int, default=10)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    if getattr(pre, "config", None):
        try:
            values = _read_config_file(pre.config)
            # apply to the subcommand parser that will actually parse
            for action in parser._subparsers._group_actions:  # type: ignore[union-attr]
                subparser = action.choices.get(pre.command)
                if subparser is not None:
                    _apply_config_defaults(subparser, values)
        except OSError as exc:
            return _fail(2, f"cannot read config file: {exc}")
        except StructureError as exc:
            return _fail(2, str(exc))
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MatrixFormatError as exc:
        return _fail(3, str(exc))
    except (StructureError, ValueError) as exc:
        return _fail(2, str(exc))
    except OSError as exc:
        return _fail(4, f"i/o failure: {exc}")
    except RuntimeError as exc:
        return _fail(4, str(exc))


if __name__ == "__main__":
    sys.exit(main())
