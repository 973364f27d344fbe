"""Command-line entry point: ``glyphbook {synth,compress,bench,verify}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import tempfile
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

from . import codec, kmedian
from .bitmap import (CapacityError, CorpusSpec, PBMError, extract_glyphs,
                     generate_corpus, read_pbm, write_pbm)
from .estimators import ALGORITHMS, default_threshold, make_estimator
from .metric import CostModel, random_instance, verify_metric_properties

BENCH_COLUMNS = [
    "document", "algorithm", "n_glyphs", "patterns", "objective_bits", "codebook_bits",
    "total_lossy_bits", "total_lossless_bits", "lossy_ratio", "lossless_ratio",
    "misclassified", "error",
]
REDUCTION_COLUMNS = ["document", "baseline", "algorithm", "baseline_patterns", "patterns",
                     "reduction_pct"]

THRESHOLD_ALGOS = ("first_fit", "ff_kmeans")


class CLIError(Exception):
    pass


def _num(x):
    if isinstance(x, Fraction):
        return int(x) if x.denominator == 1 else float(x)
    return x


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _config_echo(args) -> dict:
    skip = {"func"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k not in skip}


def _model(args) -> CostModel:
    return CostModel(Fraction(args.kappa), args.distance, Fraction(args.alpha),
                     Fraction(args.beta))


def _estimator_params(args, algo, glyphs, noise):
    T = (Fraction(args.threshold_bits) if args.threshold_bits is not None
         else default_threshold(glyphs, noise, Fraction(args.kappa)))
    params = dict(kappa=Fraction(args.kappa), connectivity=args.connectivity,
                  distance=args.distance, alpha=Fraction(args.alpha), beta=Fraction(args.beta),
                  epsilon=Fraction(args.epsilon), min_decrease=args.kmeans_min_decrease)
    if algo in THRESHOLD_ALGOS or args.threshold_bits is not None:
        params["threshold_bits"] = T
    if args.kmeans_mode is not None:
        params["kmeans_mode"] = args.kmeans_mode
    return params, T


def _misclassified(labels, truth) -> int:
    """Glyphs whose class's majority truth label differs from their own."""
    groups: dict = {}
    for lab, t in zip(labels, truth):
        groups.setdefault(int(lab), []).append(t)
    bad = 0
    for ts in groups.values():
        top = max(Counter(ts).items(), key=lambda kv: (kv[1], -kv[0]))[0]
        bad += sum(1 for t in ts if t != top)
    return bad


def run_pipeline(page, algo: str, args, noise: float):
    """Extract, partition and build the codebook; returns everything the reports need."""
    glyphs = extract_glyphs(page, args.connectivity)
    if not glyphs:
        book = codec.Codebook([], [], [], [], page.width, page.height)
        return glyphs, None, book, None
    params, T = _estimator_params(args, algo, glyphs, noise)
    est = make_estimator(algo, **params).fit(glyphs)
    book = codec.materialize_codebook(est.partition_, glyphs, page.width, page.height, est.model_)
    return glyphs, est, book, T


# --- synth ---------------------------------------------------------------------

def _corpus_spec(args, seed=None) -> CorpusSpec:
    return CorpusSpec(args.shapes, args.glyphs, args.noise, args.jitter, args.page_width,
                      args.page_height, args.seed if seed is None else seed, args.shape_area)


def cmd_synth(args) -> int:
    spec = _corpus_spec(args)
    page, truth, _ = generate_corpus(spec)
    files = {
        "page.pbm": write_pbm(page, "P4"),
        "truth.json": (json.dumps(truth) + "\n").encode(),
    }
    _write_outputs(args.out, files)
    print(f"wrote {len(truth)} glyphs of {spec.base_shape_count} shapes to {args.out}")
    return 0


def _write_outputs(out, files: dict) -> None:
    """Write all files or none: stage in a temp dir, then move into place."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out))
    try:
        for name, data in files.items():
            (stage / name).write_bytes(data)
        for name in files:
            os.replace(stage / name, out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


# --- compress ------------------------------------------------------------------

def cmd_compress(args) -> int:
    page = read_pbm(args.input)
    glyphs, est, book, T = run_pipeline(page, args.algo, args, args.noise)
    sizes = codec.estimate_sizes(book, glyphs, page, args.mode)
    residuals = codec.all_residuals(book, glyphs) if args.mode == codec.LOSSLESS else None
    recon = codec.reconstruct(book, args.mode, residuals)
    report = {
        "config": _config_echo(args),
        "threshold_bits": None if T is None else _num(T),
        "n_glyphs": len(glyphs),
        "n_patterns": book.n_patterns,
        "objective_bits": None if est is None else _num(est.objective_bits_),
        "sizes": sizes.to_dict(),
        "reconstruction_exact": recon == page,
    }
    if est is not None and hasattr(est, "solution_"):
        report["trace"] = est.solution_.trace_json()
    files = {
        "codebook.pbm": write_pbm(book.strip(), "P4"),
        "codebook.json": _dump_json(book.to_dict()).encode(),
        "reconstruction.pbm": write_pbm(recon, "P4"),
    }
    if residuals is not None:
        files["residuals.json"] = _dump_json(
            [[list(p) for p in r.pixels] for r in residuals]).encode()
    if args.report == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        flat = sizes.to_dict()
        w.writerow(["n_glyphs", "n_patterns", "objective_bits", *flat])
        w.writerow([len(glyphs), book.n_patterns, report["objective_bits"], *flat.values()])
        files["report.csv"] = buf.getvalue().encode()
    else:
        files["report.json"] = _dump_json(report).encode()
    _write_outputs(args.out, files)
    print(f"{len(glyphs)} glyphs -> {book.n_patterns} patterns; "
          f"{args.mode} total {sizes.total_lossless_bits if args.mode == 'lossless' else sizes.total_lossy_bits} bits")
    return 0


# --- bench ---------------------------------------------------------------------

def _documents(args):
    for path in args.inputs:
        yield Path(path).name, (lambda p=path: (read_pbm(p), None)), args.noise
    for i in range(args.synth):
        seed = args.seed + i
        yield (f"synth-{seed}",
               (lambda s=seed: generate_corpus(_corpus_spec(args, s))[:2]),
               args.noise)


def bench_report(args) -> dict:
    algos = args.algo or ["first_fit", "gkm"]
    for a in algos:
        if a not in ALGORITHMS:
            raise CLIError(f"unknown algorithm {a!r}")
    if len(algos) < 2:
        raise CLIError("bench needs at least two algorithms")
    rows = []
    for name, load, noise in _documents(args):
        try:
            page, truth = load()
        except Exception as exc:  # recorded per document, the run continues
            for a in algos:
                rows.append(dict.fromkeys(BENCH_COLUMNS) | {"document": name, "algorithm": a,
                                                            "error": str(exc)})
            continue
        for a in algos:
            row = dict.fromkeys(BENCH_COLUMNS) | {"document": name, "algorithm": a}
            try:
                t0 = time.perf_counter()
                glyphs, est, book, _ = run_pipeline(page, a, args, noise)
                elapsed = time.perf_counter() - t0
                lossy = codec.estimate_sizes(book, glyphs, page, codec.LOSSY)
                lossless = codec.estimate_sizes(book, glyphs, page, codec.LOSSLESS)
                row.update(
                    n_glyphs=len(glyphs), patterns=book.n_patterns,
                    objective_bits=None if est is None else _num(est.objective_bits_),
                    codebook_bits=lossy.codebook_bits,
                    total_lossy_bits=lossy.total_lossy_bits,
                    total_lossless_bits=lossless.total_lossless_bits,
                    lossy_ratio=lossy.lossy_ratio, lossless_ratio=lossless.lossless_ratio,
                    misclassified=(None if truth is None or est is None
                                   else _misclassified(est.labels_, truth)),
                )
                if args.timing:
                    row["wall_time_s"] = round(elapsed, 4)
            except Exception as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)

    reductions = []
    docs = list(dict.fromkeys(r["document"] for r in rows))
    by_key = {(r["document"], r["algorithm"]): r for r in rows}
    for doc in docs:
        for i, base in enumerate(algos):
            for other in algos[i + 1:]:
                a, b = by_key[(doc, base)]["patterns"], by_key[(doc, other)]["patterns"]
                if a is None or b is None or a == 0:
                    continue
                reductions.append({"document": doc, "baseline": base, "algorithm": other,
                                   "baseline_patterns": a, "patterns": b,
                                   "reduction_pct": (a - b) / a * 100})
    averages = []
    for i, base in enumerate(algos):
        for other in algos[i + 1:]:
            vals = [r["reduction_pct"] for r in reductions
                    if r["baseline"] == base and r["algorithm"] == other]
            if vals:
                averages.append({"baseline": base, "algorithm": other, "documents": len(vals),
                                 "mean_reduction_pct": sum(vals) / len(vals)})
    return {"config": _config_echo(args), "algorithms": algos, "rows": rows,
            "reductions": reductions, "averages": averages}


def _bench_csv(report) -> dict:
    cols = BENCH_COLUMNS + (["wall_time_s"] if report["config"].get("timing") else [])
    out = {}
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    w.writerows(report["rows"])
    out["bench.csv"] = buf.getvalue().encode()
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REDUCTION_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(report["reductions"])
    for avg in report["averages"]:
        w.writerow({"document": "AVERAGE", "baseline": avg["baseline"],
                    "algorithm": avg["algorithm"], "reduction_pct": avg["mean_reduction_pct"]})
    out["reductions.csv"] = buf.getvalue().encode()
    return out


def cmd_bench(args) -> int:
    report = bench_report(args)
    if args.report == "csv":
        files = _bench_csv(report)
    else:
        files = {"bench.json": _dump_json(report).encode()}
    _write_outputs(args.out, files)
    for avg in report["averages"]:
        print(f"{avg['baseline']} -> {avg['algorithm']}: mean pattern reduction "
              f"{avg['mean_reduction_pct']:.1f}% over {avg['documents']} documents")
    failed = [r for r in report["rows"] if r["error"]]
    for r in failed:
        print(f"error: {r['document']}/{r['algorithm']}: {r['error']}", file=sys.stderr)
    return 1 if failed else 0


# --- verify --------------------------------------------------------------------

def verify_report(args) -> dict:
    if args.n > kmedian.BRUTE_FORCE_CAP:
        raise CLIError(f"guarantee checks need n <= {kmedian.BRUTE_FORCE_CAP} "
                       f"(brute-force cap); got n={args.n}")
    model = _model(args)
    summary = Counter()
    failures = []
    for i in range(args.seeds):
        seed = args.seed + i
        oracle = random_instance(args.n, seed, model)
        metric = verify_metric_properties(oracle, None)
        for check in metric.checks:
            summary[f"metric.{check.name}"] += check.violations
            if check.violations:
                failures.append({"seed": seed, "check": check.name,
                                 "counterexample": check.counterexample})
        if oracle.n <= 10:
            sm = kmedian.check_supermodularity(oracle)
            summary["supermodularity"] += sm["violations"]
            if sm["violations"]:
                failures.append({"seed": seed, "check": "supermodularity",
                                 "counterexample": sm["counterexample"]})
        sol = kmedian.greedy_k_median(oracle)
        opt = kmedian.brute_force_opt(oracle)
        g = kmedian.check_guarantees(sol, opt, oracle.n)
        summary["decay"] += g.decay_violations
        summary["bound"] += g.bound_violations
        if not g.holds:
            failures.append({"seed": seed, "check": "guarantees", "report": g.as_dict()})
    return {"config": _config_echo(args), "instances": args.seeds,
            "violations": dict(sorted(summary.items())), "failures": failures,
            "passed": not failures}


def cmd_verify(args) -> int:
    report = verify_report(args)
    if args.out:
        _write_outputs(args.out, {"verify.json": _dump_json(report).encode()})
    for key, count in report["violations"].items():
        print(f"{key}: {count} violations")
    for f in report["failures"][:10]:
        print(f"counterexample: {json.dumps(f)}", file=sys.stderr)
    return 0 if report["passed"] else 1


# --- argument parsing ----------------------------------------------------------

def _add_model_args(p):
    p.add_argument("--kappa", default="1", help="bits per ink pixel (rational, e.g. 3/2)")
    p.add_argument("--distance", choices=["ink_hamming", "asymmetric_surrogate"],
                   default="ink_hamming")
    p.add_argument("--alpha", default="1")
    p.add_argument("--beta", default="1")


def _add_algo_args(p, multi=False):
    if multi:
        p.add_argument("--algo", action="append", choices=sorted(ALGORITHMS),
                       help="repeat for each algorithm to compare (default first_fit, gkm)")
    else:
        p.add_argument("--algo", choices=sorted(ALGORITHMS), default="gkm")
    p.add_argument("--threshold-bits", default=None,
                   help="match threshold T; default kappa*max(1, noise*mean boundary*4)")
    p.add_argument("--noise", type=float, default=0.05,
                   help="assumed flip probability, used for the default threshold")
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=8)
    p.add_argument("--epsilon", default="0")
    p.add_argument("--kmeans-min-decrease", type=int, default=1)
    p.add_argument("--kmeans-mode", choices=[kmedian.FIRST_MATCH, kmedian.BEST_MATCH],
                   default=None)
    _add_model_args(p)


def _add_corpus_args(p):
    p.add_argument("--shapes", type=int, default=30)
    p.add_argument("--glyphs", type=int, default=600)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--page-width", type=int, default=1024)
    p.add_argument("--page-height", type=int, default=1024)
    p.add_argument("--shape-area", type=int, default=30)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glyphbook", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic page and its truth labels")
    _add_corpus_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compress", help="build a codebook for one PBM page")
    p.add_argument("input")
    _add_algo_args(p)
    p.add_argument("--mode", choices=[codec.LOSSY, codec.LOSSLESS], default=codec.LOSSLESS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("bench", help="compare algorithms over PBM pages and/or synthetic corpora")
    p.add_argument("inputs", nargs="*")
    _add_algo_args(p, multi=True)
    p.add_argument("--synth", type=int, default=0, help="number of seeded synthetic corpora")
    p.add_argument("--shapes", type=int, default=30)
    p.add_argument("--glyphs", type=int, default=600)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--page-width", type=int, default=1024)
    p.add_argument("--page-height", type=int, default=1024)
    p.add_argument("--shape-area", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timing", action="store_true", help="add wall times (breaks byte-identity)")
    p.add_argument("--out", required=True)
    p.add_argument("--report", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="property and guarantee checks on seeded small instances")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _add_model_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, PBMError, CapacityError, OSError, ValueError) as exc:
        print(f"glyphbook {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
