"""``snapdsp`` command line: run suites, verify against tables, project, serve."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import analytics
from .bench import (
    data_path,
    emit_report,
    group_summaries,
    keyed_results,
    load_corpus,
    load_expected,
    paper_corpus_path,
    run_suite,
    verify_against_expected,
)
from .simserver import ServerLevel, SimServer, SimTcpServer

log = logging.getLogger("snapdsp")

GLOBAL_DEFAULTS = {"workers": None, "mode": "both", "corpus": None, "seed": 0, "format": "text"}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="fallback pool width (default: per problem)")
    p.add_argument("--mode", choices=("native", "fallback", "both"), default=argparse.SUPPRESS)
    p.add_argument("--corpus", type=Path, default=argparse.SUPPRESS, help="corpus YAML (default: shipped reference corpus)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--format", choices=("csv", "text"), default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="snapdsp", parents=[common], description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run the corpus and print a report")
    run.add_argument("--jitter", type=float, default=0.0, help="log-normal sigma applied to tactic CPU")
    run.add_argument("--groups", action="store_true", help="append per-group summaries")
    run.add_argument("-o", "--output", type=Path)

    verify = sub.add_parser("verify", parents=[common], help="compare a run with an expected table")
    verify.add_argument("--expected", type=Path, action="append", help="expected CSV (repeatable)")
    verify.add_argument("--tolerance", type=float, default=0.02)

    serve = sub.add_parser("serve", parents=[common], help="expose the simulated server over TCP")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=7711)
    serve.add_argument("--level", type=int, choices=(0, 1, 2), default=2)

    cross = sub.add_parser("crossover", parents=[common], help="smallest branch count where snapshots win")
    cross.add_argument("--t-elab", type=float, default=120.0)
    cross.add_argument("--t-load", type=float, default=75.0)
    cross.add_argument("--t-tactic", type=float, default=0.045)

    proj = sub.add_parser("project", parents=[common], help="scaling table, level comparison, many-drafts projection")
    proj.add_argument("--branches", type=int, nargs="+", default=[14, 21, 28, 35, 42, 56])
    proj.add_argument("--model-only", action="store_true", help="do not replace B=21/28/35 with measured runs")
    proj.add_argument("--levels", action="store_true", help="Level 0/1/2/1+2 comparison")
    proj.add_argument("--drafts", action="store_true", help="100 drafts x 4 holes x 7 tactics")
    proj.add_argument("--theorem", default="mathd_numbertheory_345", help="profile used for --levels")
    return parser


def _corpus(args: argparse.Namespace):
    return load_corpus(args.corpus or paper_corpus_path())


def _write(data: bytes, output: Optional[Path] = None) -> None:
    if output is not None:
        output.write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def cmd_run(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    rows = run_suite(corpus, args.mode, args.workers, args.seed, args.jitter)
    if not rows:
        print("corpus has no problems")
        return 0
    out = emit_report(rows, args.format)
    if args.groups and args.mode == "both":
        lines = ["", "group                count  native_s  fallback_s  speedup  (min-max, median)"]
        for s in group_summaries(corpus, rows):
            lines.append(
                f"{s.key:<20} {s.count:>5} {s.native_s:>9.1f} {s.fallback_s:>11.1f} {s.speedup:>7.1f}x"
                f"  ({s.speedup_min:.1f}-{s.speedup_max:.1f}, {s.speedup_median:.1f})"
            )
        out += ("\n".join(lines) + "\n").encode("utf-8")
    _write(out, args.output)
    return 1 if any(r.error for r in rows) else 0


def cmd_verify(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    rows = run_suite(corpus, "both", args.workers, args.seed)
    keyed = keyed_results(corpus, rows)
    paths = args.expected or [data_path("headline_expected.csv")]
    failed = 0
    for path in paths:
        for v in verify_against_expected(keyed, load_expected(path), args.tolerance):
            print(v.line())
            failed += not v.passed
    print(f"{'FAIL' if failed else 'OK'}: {failed} check(s) failed")
    return 1 if failed else 0


def cmd_serve(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    sim = SimServer(
        [p.profile for p in corpus.problems],
        ServerLevel(args.level),
        batch_latency=corpus.batch_latency,
        dispatch_factor=corpus.dispatch_factor,
        seed=args.seed,
    )
    server = SimTcpServer(sim, args.host, args.port)
    print(f"serving {len(corpus)} profiles at level {args.level} on {args.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_crossover(args: argparse.Namespace) -> int:
    p = analytics.CostParams(t_elab=args.t_elab, t_load=args.t_load, t_tactic=args.t_tactic)
    try:
        b = analytics.crossover_branches(p)
    except analytics.NoCrossover as exc:
        print(f"no crossover: {exc}")
        return 1
    print(f"B={b}")
    return 0


def _measured_by_branches(args: argparse.Namespace) -> dict:
    corpus = _corpus(args)
    e2e = [p for p in corpus.problems if p.group == "end_to_end"]
    measured = {}
    for p in e2e:
        sub = type(corpus)(corpus.version, [p], corpus.defaults)
        row = run_suite(sub, "both", 1 if args.workers is None else args.workers, args.seed)[0]
        if row.error is None:
            measured[row.B] = (row.native_s, row.fallback_s)
    return measured


def cmd_project(args: argparse.Namespace) -> int:
    if args.levels:
        return _project_levels(args)
    if args.drafts:
        ps = analytics.drafts_projection(workers=args.workers or 2)
        seq = analytics.drafts_projection(workers=1)
        print(f"drafts={ps.drafts} branches/draft={ps.branches_per_draft} total={ps.drafts * ps.branches_per_draft}")
        print(f"fallback_hours(W={args.workers or 2})={ps.fallback_hours:.2f}")
        print(f"fallback_hours(W=1)={seq.fallback_hours:.2f}")
        print(f"native_hours={ps.native_hours:.2f}")
        return 0
    measured = {} if args.model_only else _measured_by_branches(args)
    params = analytics.FITTED if args.workers is None else dataclasses.replace(analytics.FITTED, workers=args.workers)
    rows = analytics.projection_table(args.branches, params, measured)
    if args.format == "csv":
        print("B,native_s,fallback_s,speedup,kind")
        for r in rows:
            print(f"{r.branches},{r.native:.3f},{r.fallback:.3f},{r.speedup:.3g},{'measured' if r.measured else 'projected'}")
    else:
        print(f"{'B':>4} {'native_s':>10} {'fallback_s':>11} {'speedup':>8}  kind")
        for r in rows:
            print(f"{r.branches:>4} {r.native:>10.1f} {r.fallback:>11.1f} {r.speedup:>7.1f}x  {'measured' if r.measured else 'projected'}")
    return 0


def _project_levels(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    match = [p for p in corpus.problems if p.theorem_id == args.theorem]
    if not match:
        print(f"unknown theorem {args.theorem}")
        return 1
    prof = match[0].profile
    cpus = [o.cpu_ms / 1000.0 for h in prof.holes for o in h.tactic_outcomes.values()]
    t_tactic = sum(cpus) / len(cpus)
    params = analytics.CostParams(
        t_import=prof.import_seconds,
        t_body=prof.body_seconds,
        t_tactic=t_tactic,
        workers=args.workers or 2,
        holes=prof.hole_count,
        configs=7,
    )
    lv = analytics.level_comparison(
        params,
        fallback_per_branch=prof.fallback_branch_seconds + t_tactic,
        session_overhead=prof.session_overhead_seconds,
    )
    ratios = lv.ratios()
    print(f"{args.theorem}: B={params.branches} W={params.workers} t_import={params.t_import:g} t_body={params.t_body:g}")
    print(f"L0   {lv.l0:>9.1f} s   1.0x")
    print(f"L1   {lv.l1:>9.1f} s   {ratios['L1']:.1f}x")
    print(f"L2   {lv.l2:>9.1f} s   {ratios['L2']:.1f}x")
    print(f"L1+2 {lv.l12_amortized:>9.1f} s/theorem   {ratios['L1+2']:.1f}x")
    print(f"L1 amortized {lv.l1_amortized:.1f} s/theorem")
    back = math.ceil(28 / 2) * (60 + 735)
    print(f"footnote: ceil(28/2)*(60+735) = {back} s (reference 11127 s)")
    return 0


COMMANDS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "serve": cmd_serve,
    "crossover": cmd_crossover,
    "project": cmd_project,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
