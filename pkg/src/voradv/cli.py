"""Command line harness: attack, oracle, closeness and gen-gaussian."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import (DataError, SplitSpec, export_csv, gen_gaussian, jitter,
                   load_dataset, normalize_minmax, split)
from .knn import Query
from .oracle import OracleLimitError, oracle_min_distance, random_small_instance
from .report import QueryRecord, RunRecord, RunReport, two_gaussian_closeness
from .search import AttackConfig, best_first_attack

log = logging.getLogger("voradv")

JOBS_ENV = "VORADV_JOBS"
EXACT_BISECTOR_CAP = 2500


class UsageError(Exception):
    """Invalid flag combination; reported like an argparse error."""


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"{JOBS_ENV}={raw!r} is not an integer") from None


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _time_limit(text: str) -> float | None:
    if text.lower() in ("none", "inf", "0"):
        return None
    return _positive_float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voradv",
        description="Minimum-norm adversarial examples for k-NN classifiers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="certify test points of a dataset")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--format", choices=("libsvm", "csv"), default=None,
                   help="default: csv for *.csv, libsvm otherwise")
    p.add_argument("--label-column", default="-1", help="CSV label column (name or index)")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--mode", choices=("exact", "approx"), default="approx")
    p.add_argument("--m", type=int, default=None, help="approx neighborhood size (default 20)")
    p.add_argument("--distance-target", choices=("facet", "cell"), default="cell")
    p.add_argument("--time-limit", type=_time_limit, default=100.0, metavar="SECONDS",
                   help="per query; 'none' disables")
    p.add_argument("--init", choices=("none", "line-search"), default="line-search")
    p.add_argument("--num-test", type=int, default=100)
    p.add_argument("--num-train", type=int, default=None,
                   help="subsample the generators (default: all remaining points)")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--jitter", type=float, default=1e-9)
    p.add_argument("--output", type=Path, default=None, help="default: standard output")
    p.add_argument("--emit", choices=("json", "csv"), default="json")
    p.add_argument("--jobs", type=int, default=None,
                   help=f"parallel queries (default: ${JOBS_ENV} or 1)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("oracle", help="exhaustive ground truth on small instances")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", type=Path)
    src.add_argument("--random", type=int, metavar="N",
                     help="N random instances (n in [10,25], d in [2,5], k in {1,3,5})")
    p.add_argument("--format", choices=("libsvm", "csv"), default=None)
    p.add_argument("--label-column", default="-1")
    p.add_argument("--k", type=int, default=None, help="required with --dataset")
    p.add_argument("--num-test", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--jitter", type=float, default=1e-9)
    p.add_argument("--cap", type=int, default=100_000, help="maximum number of cells")
    p.add_argument("--count-cells", action="store_true",
                   help="also report nonempty and adversarial cell counts")
    p.add_argument("--compare", action="store_true",
                   help="also run the exact search and report the largest gap")
    p.add_argument("--output", type=Path, default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser(
        "closeness",
        help="analytic class closeness of the two-Gaussian construction",
        description="Class closeness (mean over classes of the minimum KL divergence to "
                    "another class) for datasets from gen-gaussian, where it equals "
                    "2*alpha^2.  Only this analytic case is supported; estimating KL "
                    "divergences from samples of other datasets is not implemented.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--alpha", type=float, nargs="+")
    src.add_argument("--dataset", type=Path, help="CSV written by gen-gaussian")
    p.add_argument("--output", type=Path, default=None)
    p.set_defaults(func=cmd_closeness)

    p = sub.add_parser("gen-gaussian", help="two-Gaussian synthetic dataset as CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--alpha", type=_positive_float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, required=True)
    p.set_defaults(func=cmd_gen_gaussian)
    return parser


def _attack_config(args) -> AttackConfig:
    if args.m is not None and args.mode != "approx":
        raise UsageError("--m only applies to --mode approx")
    m = 20 if args.m is None else args.m
    if m < 1:
        raise UsageError("--m must be positive")
    if args.k < 1 or args.k % 2 == 0:
        raise UsageError("--k must be a positive odd integer")
    return AttackConfig(k=args.k, mode=args.mode, m=m,
                        distance_target=args.distance_target,
                        time_limit=args.time_limit, init=args.init.replace("-", "_"),
                        prune=not args.no_prune, seed=args.seed)


def _label_column(text: str):
    return int(text) if text.lstrip("-").isdigit() else text


def _prepare_run(ds, seed: int, num_test: int, num_train, normalize: bool, jitter_mag: float):
    train, test = split(ds, SplitSpec(seed=seed, num_test=num_test, num_train=num_train))
    gen = ds.subset(train)
    params = None
    if normalize:
        gen, params = normalize_minmax(gen)
    gen = jitter(gen, jitter_mag, seed=seed)
    X = ds.points[test]
    if params is not None:
        X = params.apply(X)
    return gen, params, test, X, ds.labels[test]


def _solve_one(payload):
    ds, x, y, cfg = payload
    return best_first_attack(ds, Query(x, int(y), cfg.k), cfg)


def _run_queries(payloads, jobs: int, progress):
    if jobs <= 1:
        for i, p in enumerate(payloads):
            cert = _solve_one(p)
            progress(i, cert)
            yield cert
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps query order regardless of completion order
        for i, cert in enumerate(pool.map(_solve_one, payloads)):
            progress(i, cert)
            yield cert


def cmd_attack(args) -> int:
    cfg = _attack_config(args)
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    if jobs < 1:
        raise UsageError("--jobs must be positive")
    if args.runs < 1:
        raise UsageError("--runs must be positive")
    ds = load_dataset(args.dataset, args.format, _label_column(args.label_column))
    n_gen = args.num_train or ds.n - args.num_test
    if cfg.mode == "exact" and cfg.k * (n_gen - cfg.k) > EXACT_BISECTOR_CAP:
        raise UsageError(
            f"exact mode would solve QPs with {cfg.k * (n_gen - cfg.k)} constraints per "
            f"cell (cap {EXACT_BISECTOR_CAP}); use --mode approx or --num-train")
    if cfg.k >= n_gen:
        raise UsageError(f"--k {cfg.k} needs more than {cfg.k} generators")
    report = RunReport(
        config={**cfg.to_dict(), "num_test": args.num_test, "num_train": args.num_train,
                "runs": args.runs, "normalize": not args.no_normalize,
                "jitter": args.jitter, "objective": "0.5*|z-x|^2"},
        dataset={"path": str(args.dataset), "fingerprint": ds.fingerprint(),
                 "n": ds.n, "d": ds.d, "classes": list(ds.classes),
                 "normalization": [], "normalization_fit": "generators"})
    for r in range(args.runs):
        seed = args.seed + r
        gen, params, test, X, y = _prepare_run(ds, seed, args.num_test, args.num_train,
                                               not args.no_normalize, args.jitter)
        report.dataset["normalization"].append(None if params is None else params.to_dict())
        run = RunRecord(seed, gen.n)
        payloads = [(gen, x, t, cfg) for x, t in zip(X, y)]

        def progress(i, cert, r=r):
            print(f"[run {r + 1}/{args.runs}] query {i + 1}/{len(payloads)} "
                  f"{cert.status} eps={cert.epsilon:.6g} lb={cert.lower_bound:.6g} "
                  f"cells={cert.cells_visited} t={cert.wall_time:.2f}s", file=sys.stderr)

        for idx, cert in zip(test, _run_queries(payloads, jobs, progress)):
            run.queries.append(QueryRecord(int(idx), ds.classes[ds.labels[idx]], cert))
        report.runs.append(run)
    _emit(report, args.output, args.emit)
    s = report.summary
    print(f"mean eps {s['mean_epsilon']} ci95 {s['ci95']} timeouts {s['timeout_count']}",
          file=sys.stderr)
    return 0


def _emit(report: RunReport, path, emit: str) -> None:
    if path is None:
        report.dump(sys.stdout, emit)
    else:
        report.write(path, emit)


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")


def cmd_oracle(args) -> int:
    instances = []
    if args.random is not None:
        if args.random < 1:
            raise UsageError("--random must be positive")
        for i in range(args.random):
            inst = random_small_instance(args.seed + i)
            instances.append((f"random-{args.seed + i}", inst.dataset, inst.query))
    else:
        if args.k is None:
            raise UsageError("--k is required with --dataset")
        ds = load_dataset(args.dataset, args.format, _label_column(args.label_column))
        gen, _, test, X, y = _prepare_run(ds, args.seed, args.num_test, None,
                                          not args.no_normalize, args.jitter)
        for idx, x, t in zip(test, X, y):
            instances.append((f"query-{int(idx)}", gen, Query(x, int(t), args.k)))
    rows, gaps = [], []
    for name, ds, q in instances:
        res = oracle_min_distance(ds, q, cap=args.cap, count_cells=args.count_cells)
        row = {"name": name, "n": ds.n, "d": ds.d, "k": q.k,
               "epsilon_star": res.epsilon_star if np.isfinite(res.epsilon_star) else "inf",
               "argmin_cell": None if res.argmin_cell is None else list(res.argmin_cell),
               "status": res.status, "cells_solved": res.cells_solved}
        if args.count_cells:
            row["nonempty_cells"] = res.nonempty_cell_count
            row["adversarial_cells"] = res.adversarial_cell_count
        if args.compare:
            cfg = AttackConfig(k=q.k, mode="exact", distance_target="facet", time_limit=None)
            cert = best_first_attack(ds, q, cfg)
            gap = (0.0 if cert.epsilon == res.epsilon_star
                   else abs(cert.epsilon - res.epsilon_star))
            gaps.append(gap)
            row["epsilon_search"] = cert.epsilon if np.isfinite(cert.epsilon) else "inf"
            row["gap"] = gap
        rows.append(row)
        print(f"{name}: eps*={res.epsilon_star:.6g}", file=sys.stderr)
    out = {"schema_version": 1, "instances": rows}
    if args.compare:
        out["max_gap"] = max(gaps) if gaps else 0.0
    _write_json(out, args.output)
    return 0


def _read_meta(dataset: Path) -> dict:
    meta_path = dataset.with_name(dataset.name + ".meta.json")
    if not meta_path.exists():
        raise DataError(f"{dataset}: no {meta_path.name} sidecar; closeness is only "
                        "available analytically for gen-gaussian datasets")
    meta = json.loads(meta_path.read_text())
    if meta.get("generator") != "gaussian":
        raise DataError(f"{dataset} was not produced by gen-gaussian; sample-based KL "
                        "estimation is not supported")
    return meta


def cmd_closeness(args) -> int:
    if args.dataset is not None:
        meta = _read_meta(args.dataset)
        alphas, d = [float(meta["alpha"])], int(meta["d"])
    else:
        alphas, d = args.alpha, 1
    out = []
    for a in alphas:
        if a < 0:
            raise UsageError("--alpha must be non-negative")
        rep = two_gaussian_closeness(a, d)
        out.append({"alpha": a, **rep.to_dict()})
    _write_json(out if len(out) > 1 else out[0], args.output)
    return 0


def cmd_gen_gaussian(args) -> int:
    if args.n <= 0 or args.n % 2:
        raise UsageError("--n must be a positive even number")
    if args.d < 1:
        raise UsageError("--d must be at least 1")
    ds = gen_gaussian(args.n, args.d, args.alpha, args.seed)
    export_csv(ds, args.output)
    meta_path = args.output.with_name(args.output.name + ".meta.json")
    meta_path.write_text(json.dumps(ds.meta, indent=2) + "\n")
    print(f"wrote {args.output} and {meta_path.name}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except (DataError, OracleLimitError, OSError, ValueError) as exc:
        print(f"voradv: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
