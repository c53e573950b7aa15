"""Command-line front end: ``sgmfs select | benchmark | validate``.

Exit codes: 0 success, 1 runtime failure (bad data, solver error, failed
property), 2 usage error.

Every CSV written here starts with one ``# {...}`` line holding the run
manifest as JSON (wall-clock timings omitted so reruns are byte-identical);
pass ``comment="#"`` or skip the first line when loading.  JSON outputs carry
the full manifest, timings included.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataFormatError, load_csv, load_mulan, make_split, standardize
from .evaluation import METRICS, ProtocolSplit, evaluate_pipeline, worker_count
from .graph import AUTO, SparseGraph, build_splits, dump_graph_csv, kkt_residual, split_objective, update_graph
from .solver import IllConditionedError, SgmfsConfig, fit

log = logging.getLogger("sgmfs")

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["status", "properties", "manifest"],
    "properties": {
        "status": {"enum": ["pass", "fail"]},
        "iterations": {"type": "integer", "minimum": 0},
        "converged": {"type": "boolean"},
        "properties": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "status", "value", "threshold"],
                "properties": {
                    "name": {"type": "string"},
                    "status": {"enum": ["pass", "fail"]},
                    "value": {"type": "number"},
                    "threshold": {"type": "number"},
                    "detail": {"type": "string"},
                },
            },
        },
        "manifest": {"type": "object"},
    },
}


@dataclass
class RunManifest:
    command: str
    data: list
    config: dict
    split: dict
    seed: int
    proportions: list | None = None
    runs: int | None = None
    version: str = __version__
    timings: dict = field(default_factory=dict)

    def to_dict(self, timings=True):
        out = asdict(self)
        if not timings:
            out.pop("timings")
        return out

    def to_json(self, timings=True):
        return json.dumps(self.to_dict(timings), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return value


def _fraction(text):
    value = _positive_float(text)
    if value > 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return value


def _sigma(text):
    return AUTO if text == AUTO else _positive_float(text)


def parse_proportions(text):
    """``"a:b:step"`` (inclusive range) or a comma list of fractions in (0, 1]."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (_fraction(p) for p in parts)
        if stop < start:
            raise argparse.ArgumentTypeError("range stop is below start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(count)]
    values = [_fraction(p.strip()) for p in text.split(",") if p.strip()]
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _fraction_list(text):
    values = [_fraction(p.strip()) for p in text.split(",") if p.strip()]
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_common(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", required=True, help="CSV file or Mulan ARFF file")
    g.add_argument("--format", choices=("csv", "mulan"), default="csv")
    g.add_argument("--labels-xml", help="Mulan XML label declaration (mulan format)")
    g.add_argument("--label-count", type=_positive_int, help="trailing label columns (csv format)")
    g.add_argument("--no-standardize", action="store_true", help="skip z-scoring of features")
    s = p.add_argument_group("solver")
    s.add_argument("--alpha", type=_positive_float, default=1.0)
    s.add_argument("--beta", type=_positive_float, default=1.0)
    s.add_argument("--gamma", type=_positive_float, default=1.0)
    s.add_argument("--lsd", type=_positive_int, default=None, help="subspace dimension (default ceil(c/2))")
    s.add_argument("--labeled-fraction", type=_fraction, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iters", type=_positive_int, default=100)
    s.add_argument("--tol", type=_positive_float, default=1e-5)
    s.add_argument("--sigma", type=_sigma, default=AUTO, help="graph kernel width or 'auto'")
    s.add_argument("--legacy-c", action="store_true", help="omit alpha from the Q-step matrix")
    s.add_argument("--literal-order", action="store_true", help="W step uses the previous Q")
    s.add_argument("--no-f-guard", action="store_true", help="accept the clamped F step unconditionally")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--dump-graph", metavar="PATH", help="write the final graph M as CSV")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="sgmfs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="rank features on one labeled split")
    _add_common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("benchmark", help="select + ML-kNN sweep over proportions and runs")
    _add_common(p)
    p.add_argument("--proportions", type=parse_proportions, default=parse_proportions("0.02:0.30:0.02"))
    p.add_argument("--runs", type=_positive_int, default=10)
    p.add_argument("--labeled-fractions", type=_fraction_list, default=None,
                   help="comma list; defaults to --labeled-fraction")
    p.add_argument("--train-size", type=_positive_int, default=None)
    p.add_argument("--test-size", type=_positive_int, default=None)
    p.add_argument("--k", type=_positive_int, default=10, help="ML-kNN neighbours")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("validate", help="run the solver and check its invariants")
    _add_common(p)
    p.add_argument("--kkt-iters", type=_positive_int, default=1000,
                   help="graph-only iterations used for the KKT check")
    p.add_argument("--kkt-tol", type=_positive_float, default=1e-3,
                   help="relative KKT residual accepted after --kkt-iters steps")
    p.add_argument("--break-symmetry", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    return parser


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------

def _config(args):
    return SgmfsConfig(
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        lsd=args.lsd,
        max_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
        sigma=args.sigma,
        legacy_c=args.legacy_c,
        literal_order=args.literal_order,
        f_guard=not args.no_f_guard,
    )


def _load(args):
    if args.format == "mulan":
        if not args.labels_xml:
            raise _UsageError("--labels-xml is required with --format mulan")
        return load_mulan(args.data, args.labels_xml), [args.data, args.labels_xml]
    if args.label_count is None:
        raise _UsageError("--label-count is required with --format csv")
    return load_csv(args.data, args.label_count), [args.data]


class _UsageError(Exception):
    pass


def _manifest(args, config, paths, **extra):
    return RunManifest(
        command=args.command,
        data=[str(p) for p in paths],
        config=config.to_dict(),
        split={"labeled_fraction": args.labeled_fraction, "standardize": not args.no_standardize},
        seed=args.seed,
        **extra,
    )


def _write_csv(path, manifest, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + manifest.to_json(timings=False) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x):
    return repr(float(x))


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare(args):
    t0 = time.perf_counter()
    dataset, paths = _load(args)
    if not args.no_standardize:
        dataset, _ = standardize(dataset)
    config = _config(args)
    config.resolve_lsd(dataset.n_samples, dataset.n_labels)
    return dataset, paths, config, time.perf_counter() - t0


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_select(args):
    dataset, paths, config, t_load = _prepare(args)
    split = make_split(dataset, args.labeled_fraction, args.seed)
    t0 = time.perf_counter()
    state, ranking = fit(dataset, split, config)
    t_fit = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(args, config, paths)
    manifest.timings = {"load": t_load, "fit": t_fit}
    t0 = time.perf_counter()
    _write_csv(
        out / "ranking.csv",
        manifest,
        ["feature_index", "score", "rank"],
        [[int(i), _fmt(ranking.scores[i]), r + 1] for r, i in enumerate(ranking.order)],
    )
    _write_csv(
        out / "weights.csv",
        manifest,
        ["feature_index", *dataset.label_names],
        [[i, *map(_fmt, row)] for i, row in enumerate(state.w)],
    )
    if args.dump_graph:
        dump_graph_csv(state.m, args.dump_graph)
    manifest.timings["write"] = time.perf_counter() - t0
    _write_json(
        out / "trace.json",
        {
            "manifest": manifest.to_dict(),
            "objective_trace": [float(v) for v in state.objective_trace],
            "iterations": state.iteration,
            "converged": state.converged,
        },
    )
    log.info("%d iterations, converged=%s; wrote %s", state.iteration, state.converged, out)
    return 0


def cmd_benchmark(args):
    dataset, paths, config, t_load = _prepare_raw(args)
    fractions = args.labeled_fractions or [args.labeled_fraction]
    t0 = time.perf_counter()
    cells = []
    for frac in fractions:
        protocol = ProtocolSplit(frac, args.train_size, args.test_size)
        summary = evaluate_pipeline(
            dataset, protocol, config, args.proportions, args.runs, args.seed,
            k=args.k, workers=worker_count(),
        )
        for row in summary:
            cells.append({
                "labeled_fraction": frac,
                "proportion": row.proportion,
                "metrics": {
                    m: {"mean": getattr(row.mean, m), "std": getattr(row.std, m)} for m in METRICS
                },
                "runs": row.runs,
            })
    manifest = _manifest(args, config, paths, proportions=list(args.proportions), runs=args.runs)
    manifest.split.update(
        labeled_fractions=list(fractions), train_size=args.train_size, test_size=args.test_size, k=args.k
    )
    manifest.timings = {"load": t_load, "sweep": time.perf_counter() - t0}

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        [_fmt(c["labeled_fraction"]), _fmt(c["proportion"]), m,
         _fmt(c["metrics"][m]["mean"]), _fmt(c["metrics"][m]["std"]), c["runs"]]
        for c in cells
        for m in METRICS
    ]
    _write_csv(out / "results.csv", manifest,
               ["labeled_fraction", "proportion", "metric", "mean", "std", "runs"], rows)
    _write_json(out / "results.json", {"manifest": manifest.to_dict(), "cells": cells})
    return 0


def _prepare_raw(args):
    # the benchmark scales each run on its own training part
    t0 = time.perf_counter()
    dataset, paths = _load(args)
    config = _config(args)
    config.resolve_lsd(dataset.n_samples, dataset.n_labels)
    return dataset, paths, config, time.perf_counter() - t0


def _prop(name, value, threshold, detail=""):
    value = float(value)
    ok = bool(np.isfinite(value) and value <= threshold)
    return {"name": name, "status": "pass" if ok else "fail", "value": value,
            "threshold": float(threshold), "detail": detail}


def _constraint_errors(state, labeled, y_l):
    f = state.f
    m = state.m.weights
    q = state.q
    return {
        "f_box": max(0.0, float(-f.min()), float(f.max() - 1.0)),
        "f_labeled": float(np.abs(f[labeled] - y_l).max()) if len(labeled) else 0.0,
        "q_orthonormal": float(np.abs(q.T @ q - np.eye(q.shape[1])).max()),
        "m_symmetric": float(np.abs(m - m.T).max()),
        "m_nonnegative": max(0.0, float(-m.min())),
        "m_zero_diagonal": float(np.abs(np.diag(m)).max()),
    }


CONSTRAINT_LIMITS = {
    "f_box": 0.0,
    "f_labeled": 0.0,
    "q_orthonormal": 1e-8,
    "m_symmetric": 0.0,
    "m_nonnegative": 0.0,
    "m_zero_diagonal": 0.0,
}


def _kkt_check(m, f, q, config, iters, tol):
    """Iterate the graph step at fixed (F, Q); report descent and final KKT residual."""
    splits = build_splits(f, q, config.gamma, config.beta)
    cur = m
    worst_rise = 0.0
    value = split_objective(cur, splits)
    scale = max(1.0, float(np.abs(splits.a).max()), float(np.abs(splits.b).max()))
    for _ in range(iters):
        cur = update_graph(cur, splits)
        new = split_objective(cur, splits)
        worst_rise = max(worst_rise, (new - value) / max(abs(value), 1e-12))
        value = new
        if kkt_residual(cur, splits) <= tol * scale:
            break
    return kkt_residual(cur, splits) / scale, worst_rise


def cmd_validate(args):
    dataset, paths, config, t_load = _prepare(args)
    split = make_split(dataset, args.labeled_fraction, args.seed)
    labeled = np.asarray(split.labeled_indices)
    y_l = dataset.labels[labeled]
    worst = dict.fromkeys(CONSTRAINT_LIMITS, 0.0)

    def track(state):
        for k, v in _constraint_errors(state, labeled, y_l).items():
            worst[k] = max(worst[k], v)

    t0 = time.perf_counter()
    state, _ = fit(dataset, split, config, callback=track)
    t_fit = time.perf_counter() - t0

    if args.break_symmetry:
        broken = np.array(state.m.weights)
        broken[0, 1] += 1.0
        state.m = SparseGraph(broken)
        track(state)

    trace = np.asarray(state.objective_trace)
    rises = np.diff(trace) / np.maximum(np.abs(trace[:-1]), 1e-12)
    props = [
        _prop("objective_finite", 0.0 if np.all(np.isfinite(trace)) else 1.0, 0.0),
        _prop("objective_monotone", rises.max(initial=0.0), 1e-7, "max relative rise per iteration"),
    ]
    for name, limit in CONSTRAINT_LIMITS.items():
        props.append(_prop(name, worst[name], limit, "worst over all iterations"))
    t0 = time.perf_counter()
    kkt, rise = _kkt_check(state.m, state.f, state.q, config, args.kkt_iters, args.kkt_tol)
    props.append(_prop("graph_descent", rise, 1e-9, "graph-only iterations at final F, Q"))
    props.append(_prop("graph_kkt", kkt, args.kkt_tol, "max |M * grad J| relative to max(|A|, |B|, 1)"))
    t_check = time.perf_counter() - t0

    manifest = _manifest(args, config, paths)
    manifest.timings = {"load": t_load, "fit": t_fit, "checks": t_check}
    failed = [p["name"] for p in props if p["status"] == "fail"]
    report = {
        "status": "fail" if failed else "pass",
        "iterations": state.iteration,
        "converged": state.converged,
        "properties": props,
        "manifest": manifest.to_dict(),
    }
    if args.dump_graph:
        dump_graph_csv(state.m, args.dump_graph)
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    if failed:
        print("failed properties: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.error(str(exc))
    except (DataFormatError, IllConditionedError, OSError, ValueError, RuntimeError) as exc:
        print(f"sgmfs {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
