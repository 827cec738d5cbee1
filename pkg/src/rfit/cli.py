"""Command line interface: ``rfit gen | influence | fit | bench | report``."""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .errors import EXIT_OK, RfitError, UsageError, exit_code_for
from .influence import max_exact_n, normalize, sample_influence_classical
from .io import (
    emit_instance,
    emit_report,
    ingest,
    load_report,
    write_influence_csv,
    write_plot_data,
)
from .pipeline import DEFAULT_GAMMA, estimate_influence, generate, robust_fit
from .quantum import accounting, build_oracle_table, bv_sample, fwht_spectrum

METHODS = ("exact", "classical", "quantum")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _cmd_gen(args):
    inst = generate(args.kind, args.n, args.inliers, args.sigma, args.spread, args.seed, args.eps)
    emit_instance(inst, args.out)
    print(f"wrote {inst.kind.value} instance with N={inst.n}, eps={inst.eps} to {args.out}")


def _cmd_influence(args):
    inst = ingest(args.in_path)
    infl, meta = estimate_influence(inst, args.method, args.m, args.seed, args.eps)
    write_influence_csv(args.out_csv, infl.alphas, args.gamma, inst.truth_labels)
    desc = ", ".join(f"{k}={v}" for k, v in meta.items())
    print(f"wrote influences for N={inst.n} to {args.out_csv} ({desc})")


def _cmd_fit(args):
    inst = ingest(args.in_path)
    rep = robust_fit(inst, args.method, args.m, args.gamma, args.seed, args.eps)
    if args.report:
        emit_report(rep, args.report, include_timing=args.timing)
    kept = int(rep.inlier_mask.sum())
    print(f"kept {kept}/{inst.n} points, consensus {rep.consensus} at eps={rep.eps}")
    print("refit: " + " ".join(f"{v:.10g}" for v in rep.refit))
    if inst.truth_labels is not None:
        agree = float(np.mean(rep.inlier_mask == inst.truth_labels))
        print(f"label agreement with ground truth: {agree:.4f}")


def _bench_rows(inst, M, seed, classical_iterations):
    n = inst.n
    acc = accounting(n, M)
    rows = [("N", n), ("M", M),
            ("classical queries per iteration", n + 1),
            ("quantum queries per iteration", 1),
            ("classical queries, cached f: M(N+1)", acc["classical_queries"]),
            ("classical queries, NM convention", acc["classical_queries_nm"]),
            ("quantum queries: M", acc["quantum_queries"]),
            ("ratio, cached f (N+1)", acc["ratio"]),
            ("ratio, NM convention (N)", acc["ratio_nm"])]

    t0 = time.perf_counter()
    _, trace = sample_influence_classical(inst.dataset, inst.eps, M=classical_iterations, seed=seed)
    dt = time.perf_counter() - t0
    measured = trace.oracle_queries / classical_iterations
    if measured != n + 1:
        raise UsageError(f"measured {measured} queries per iteration, expected {n + 1}")
    rows += [(f"measured classical queries over {classical_iterations} iteration(s)", trace.oracle_queries),
             ("measured minimax solves", trace.solver_calls),
             ("measured classical seconds per iteration", round(dt / classical_iterations, 3))]

    if n <= max_exact_n():
        t0 = time.perf_counter()
        table = build_oracle_table(inst.dataset, inst.eps)
        _, rec = bv_sample(fwht_spectrum(table), M, seed)
        rows += [("measured quantum queries", rec.queries),
                 ("simulation minimax solves (oracle table)", table.stats.get("solver_calls", 0)),
                 ("simulation seconds", round(time.perf_counter() - t0, 3))]
    else:
        rows.append(("quantum simulation", f"skipped: N={n} exceeds the exact cap {max_exact_n()}"))
    return rows


def _cmd_bench(args):
    inst = ingest(args.in_path)
    rows = _bench_rows(inst, args.m, args.seed, args.classical_iterations)
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")


def _cmd_report(args):
    doc = load_report(args.in_path)
    norm = np.asarray(doc["normalized"], dtype=float)
    gamma = float(doc["gamma"])
    if args.csv:
        write_influence_csv(args.csv, doc["influences"], gamma, doc.get("truth_labels"))
        print(f"wrote {args.csv}")
    if args.plots:
        csv_path, gp_path = write_plot_data(args.plots, normalize(doc["influences"]) if norm.size == 0 else norm,
                                            gamma)
        print(f"wrote {csv_path} and {gp_path}")
    kept = int(np.sum(doc["inlier_mask"]))
    print(f"{doc['kind']}: N={norm.size}, kept {kept}, consensus {doc['consensus']}, "
          f"method {doc['estimator']['method']}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfit", description="Influence-based robust model fitting.")
    p.add_argument("--version", action="version", version=f"rfit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic instance")
    g.add_argument("--kind", required=True, choices=["line", "homography", "triangulation"])
    g.add_argument("--n", required=True, type=_positive_int)
    g.add_argument("--inliers", required=True, type=int)
    g.add_argument("--sigma", type=float, default=None, help="inlier noise (default per kind)")
    g.add_argument("--spread", type=float, default=None, help="outlier box size (default per kind)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eps", type=float, default=None, help="inlier threshold stored in the file")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    i = sub.add_parser("influence", help="compute influences of an instance")
    i.add_argument("--in", dest="in_path", required=True)
    i.add_argument("--method", choices=METHODS, default="exact")
    i.add_argument("--m", type=_positive_int, default=800, help="iterations of the sampled estimators")
    i.add_argument("--eps", type=float, default=None, help="override the instance threshold")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="threshold for label_pred")
    i.add_argument("--out-csv", required=True)
    i.set_defaults(func=_cmd_influence)

    f = sub.add_parser("fit", help="threshold influences and refit by least squares")
    f.add_argument("--in", dest="in_path", required=True)
    f.add_argument("--method", choices=METHODS, default="exact")
    f.add_argument("--m", type=_positive_int, default=800)
    f.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--eps", type=float, default=None)
    f.add_argument("--report", default=None, help="write the JSON report here")
    f.add_argument("--timing", action="store_true", help="include wall-clock timing in the report")
    f.set_defaults(func=_cmd_fit)

    b = sub.add_parser("bench", help="print the oracle query table of both estimators")
    b.add_argument("--in", dest="in_path", required=True)
    b.add_argument("--m", type=_positive_int, default=800)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--classical-iterations", type=_positive_int, default=1,
                   help="classical iterations actually run to measure the per-iteration count")
    b.set_defaults(func=_cmd_bench)

    r = sub.add_parser("report", help="turn a fit report into an influence CSV and plot data")
    r.add_argument("--in", dest="in_path", required=True)
    r.add_argument("--csv", default=None)
    r.add_argument("--plots", default=None, help="directory for the plot CSV and gnuplot stub")
    r.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except RfitError as exc:
        print(f"rfit {args.command}: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"rfit {args.command}: error: {exc}", file=sys.stderr)
        return exit_code_for(UsageError())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
