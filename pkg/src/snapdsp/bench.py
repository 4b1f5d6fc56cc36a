"""Problem corpora, suite runs, reports, and checks against expected tables."""

from __future__ import annotations

import csv
import io
import logging
import statistics
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import yaml

from .analytics import overhead_fraction
from .orchestrator import DEFAULT_TACTICS, Mode, Portfolio, ProveOutcome, ServerError, run_prove_phase
from .simserver import DEFAULT_BATCH_LATENCY, DEFAULT_DISPATCH_FACTOR, HoleSpec, TacticOutcome, TheoremProfile
from .sketch import SketchDocument, find_sorry_positions

logger = logging.getLogger(__name__)

CORPUS_VERSION = 1
CSV_HEADER = (
    "theorem",
    "H",
    "B",
    "native_s",
    "fallback_s",
    "speedup",
    "overhead_frac",
    "mem_native_gb",
    "mem_fallback_gb",
)


class CorpusError(Exception):
    pass


class ParseError(CorpusError):
    pass


class HoleMismatch(CorpusError):
    pass


class DuplicateId(CorpusError):
    pass


class MissingRow(KeyError):
    pass


@dataclass
class CorpusProblem:
    profile: TheoremProfile
    sketch: str
    group: str = ""
    synthetic: bool = False
    workers: Optional[int] = None

    @property
    def theorem_id(self) -> str:
        return self.profile.theorem_id


@dataclass
class CorpusFile:
    version: int = CORPUS_VERSION
    problems: List[CorpusProblem] = field(default_factory=list)
    defaults: Dict[str, Any] = field(default_factory=dict)

    @property
    def workers(self) -> int:
        return int(self.defaults.get("workers", 1))

    @property
    def batch_latency(self) -> float:
        return float(self.defaults.get("batchLatencySeconds", DEFAULT_BATCH_LATENCY))

    @property
    def dispatch_factor(self) -> float:
        return float(self.defaults.get("dispatchOverheadFactor", DEFAULT_DISPATCH_FACTOR))

    @property
    def portfolio(self) -> Portfolio:
        return Portfolio(tuple(self.defaults.get("portfolio", DEFAULT_TACTICS)))

    def __len__(self) -> int:
        return len(self.problems)


# -- loading ------------------------------------------------------------------------


def _hole_from(raw: Mapping[str, Any]) -> HoleSpec:
    outcomes = {}
    for tactic, spec in (raw.get("tacticOutcomes") or {}).items():
        if isinstance(spec, Mapping):
            closes, cpu = spec["closes"], spec["cpuMs"]
        else:
            closes, cpu = spec
        outcomes[str(tactic)] = TacticOutcome(bool(closes), float(cpu))
    return HoleSpec(int(raw["line"]), int(raw["character"]), outcomes)


def _problem_from(raw: Mapping[str, Any], defaults: Mapping[str, Any], base: Path) -> CorpusProblem:
    def get(key: str, fallback: Any = None) -> Any:
        return raw.get(key, defaults.get(key, fallback))

    if "sketch" in raw:
        sketch = raw["sketch"]
    elif "sketchFile" in raw:
        path = base / raw["sketchFile"]
        if not path.is_file():
            raise ParseError(f"{raw.get('theoremId')}: sketch file {path} not found")
        sketch = path.read_text(encoding="utf-8")
    else:
        raise ParseError(f"{raw.get('theoremId')}: no sketch or sketchFile")
    profile = TheoremProfile(
        theorem_id=str(raw["theoremId"]),
        import_seconds=float(get("importSeconds", 60.0)),
        body_seconds=float(get("bodySeconds", 15.0)),
        fallback_branch_seconds=float(raw["fallbackBranchSeconds"]),
        holes=tuple(_hole_from(h) for h in raw.get("holes") or ()),
        session_overhead_seconds=float(get("sessionOverheadSeconds", 0.0)),
        env_gb=float(get("envGB", 3.0)),
        mctx_kb=float(get("mctxKB", 8.0)),
    )
    workers = raw.get("workers")
    return CorpusProblem(
        profile=profile,
        sketch=sketch,
        group=str(raw.get("group", "")),
        synthetic=bool(raw.get("synthetic", False)),
        workers=int(workers) if workers is not None else None,
    )


def check_holes(problem: CorpusProblem) -> None:
    doc = SketchDocument(f"file:///sketches/{problem.theorem_id}.lean", problem.sketch)
    found = [(s.line, s.character) for s in find_sorry_positions(doc)]
    declared = [h.position for h in problem.profile.holes]
    if found != declared:
        raise HoleMismatch(f"{problem.theorem_id}: declared holes {declared}, sketch has {found}")


def parse_corpus(text: str, base: Union[str, Path] = ".") -> CorpusFile:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ParseError("corpus must be a mapping")
    version = int(raw.get("version", CORPUS_VERSION))
    if version != CORPUS_VERSION:
        raise ParseError(f"unsupported corpus version {version}")
    defaults = dict(raw.get("defaults") or {})
    problems = []
    seen = set()
    for entry in raw.get("problems") or []:
        try:
            problem = _problem_from(entry, defaults, Path(base))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad problem entry {entry.get('theoremId', '?') if isinstance(entry, Mapping) else entry!r}: {exc}") from exc
        if problem.theorem_id in seen:
            raise DuplicateId(problem.theorem_id)
        seen.add(problem.theorem_id)
        check_holes(problem)
        problems.append(problem)
    return CorpusFile(version, problems, defaults)


def load_corpus(path: Union[str, Path]) -> CorpusFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(str(exc)) from exc
    return parse_corpus(text, path.parent)


def paper_corpus_path() -> Path:
    return Path(str(resources.files("snapdsp") / "data" / "paper_corpus.yaml"))


def data_path(name: str) -> Path:
    return Path(str(resources.files("snapdsp") / "data" / name))


def dump_corpus(corpus: CorpusFile) -> str:
    """Serialize a corpus back to YAML (sketches inline)."""
    problems = []
    for p in corpus.problems:
        prof = p.profile
        entry: Dict[str, Any] = {"theoremId": prof.theorem_id, "group": p.group, "synthetic": p.synthetic}
        if p.workers is not None:
            entry["workers"] = p.workers
        entry.update(
            importSeconds=prof.import_seconds,
            bodySeconds=prof.body_seconds,
            sessionOverheadSeconds=prof.session_overhead_seconds,
            fallbackBranchSeconds=prof.fallback_branch_seconds,
            envGB=prof.env_gb,
            mctxKB=prof.mctx_kb,
            holes=[
                {
                    "line": h.line,
                    "character": h.character,
                    "tacticOutcomes": {t: {"closes": o.closes, "cpuMs": o.cpu_ms} for t, o in h.tactic_outcomes.items()},
                }
                for h in prof.holes
            ],
            sketch=p.sketch,
        )
        problems.append(entry)
    doc = {"version": corpus.version, "defaults": corpus.defaults, "problems": problems}
    return yaml.dump(doc, Dumper=_CorpusDumper, sort_keys=False, allow_unicode=True, width=120)


class _CorpusDumper(yaml.SafeDumper):
    pass


def _str_presenter(dumper: yaml.SafeDumper, data: str) -> yaml.Node:
    if "\n" in data:
        return dumper.represent_scalar("tag:yaml.org,2002:str", data, style="|")
    return dumper.represent_scalar("tag:yaml.org,2002:str", data)


def _tactic_map_presenter(dumper: yaml.SafeDumper, data: dict) -> yaml.Node:
    flow = set(data) == {"closes", "cpuMs"}
    return dumper.represent_mapping("tag:yaml.org,2002:map", data, flow_style=flow or None)


_CorpusDumper.add_representer(str, _str_presenter)
_CorpusDumper.add_representer(dict, _tactic_map_presenter)


# -- running ------------------------------------------------------------------------


def _sig3(x: float) -> float:
    return float(f"{x:.3g}")


@dataclass
class ReportRow:
    theorem: str
    H: int
    B: int
    native_s: Optional[float] = None
    fallback_s: Optional[float] = None
    speedup: Optional[float] = None
    overhead_frac: Optional[float] = None
    mem_native_gb: Optional[float] = None
    mem_fallback_gb: Optional[float] = None
    error: Optional[str] = None

    def values(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in CSV_HEADER[1:]}


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def _row_for(problem: CorpusProblem, native: Optional[ProveOutcome], fallback: Optional[ProveOutcome]) -> ReportRow:
    prof = problem.profile
    any_outcome = native or fallback
    row = ReportRow(problem.theorem_id, prof.hole_count, any_outcome.branch_count if any_outcome else 0)
    if native is not None:
        row.native_s = round(native.wall_seconds, 3)
        row.mem_native_gb = round(native.peak_mem_gb, 6) if native.peak_mem_gb is not None else None
    if fallback is not None:
        row.fallback_s = round(fallback.wall_seconds, 3)
        row.mem_fallback_gb = round(fallback.peak_mem_gb, 6)
        per_branch = _mean(fallback.branch_seconds)
        cpu = _mean(fallback.cpu_seconds)
    else:
        cpu = _mean(native.cpu_seconds) if native is not None else 0.0
        per_branch = prof.fallback_branch_seconds + cpu
    if per_branch > 0:
        row.overhead_frac = round(overhead_fraction(per_branch, cpu), 6)
    if native is not None and fallback is not None and native.wall_seconds > 0:
        row.speedup = _sig3(fallback.wall_seconds / native.wall_seconds)
    return row


def run_problem(
    problem: CorpusProblem,
    corpus: CorpusFile,
    mode: str = "both",
    workers: Optional[int] = None,
    seed: int = 0,
    jitter_sigma: float = 0.0,
    portfolio: Optional[Portfolio] = None,
) -> Dict[str, ProveOutcome]:
    portfolio = portfolio or corpus.portfolio
    w = workers if workers is not None else (problem.workers if problem.workers is not None else corpus.workers)
    outcomes = {}
    modes = [Mode.NATIVE, Mode.FALLBACK] if mode == "both" else [Mode(mode)]
    for m in modes:
        outcomes[m.value] = run_prove_phase(
            problem.profile,
            problem.sketch,
            portfolio,
            m,
            workers=w,
            batch_latency=corpus.batch_latency,
            dispatch_factor=corpus.dispatch_factor,
            jitter_sigma=jitter_sigma,
            seed=seed,
        )
    return outcomes


def run_suite(
    corpus: CorpusFile,
    mode: str = "both",
    workers: Optional[int] = None,
    seed: int = 0,
    jitter_sigma: float = 0.0,
    portfolio: Optional[Portfolio] = None,
) -> List[ReportRow]:
    """One row per problem, in corpus order. ``workers`` overrides every
    problem's own fallback width when given."""
    if mode not in ("native", "fallback", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    rows = []
    for problem in corpus.problems:
        try:
            outcomes = run_problem(problem, corpus, mode, workers, seed, jitter_sigma, portfolio)
        except (ServerError, ValueError) as exc:
            logger.error("%s failed: %s", problem.theorem_id, exc)
            rows.append(ReportRow(problem.theorem_id, problem.profile.hole_count, 0, error=str(exc)))
            continue
        rows.append(_row_for(problem, outcomes.get("native"), outcomes.get("fallback")))
    return rows


# -- aggregation --------------------------------------------------------------------


@dataclass
class GroupSummary:
    key: str
    count: int
    mean_holes: float
    mean_branches: float
    native_s: float
    fallback_s: float
    speedup: float
    speedup_min: float
    speedup_max: float
    speedup_median: float

    def as_row(self) -> Dict[str, float]:
        return {"native_s": self.native_s, "fallback_s": self.fallback_s, "speedup": self.speedup}


def summarize(key: str, rows: Sequence[ReportRow]) -> GroupSummary:
    """Means of per-problem values; ``speedup`` is the mean of per-problem ratios."""
    ok = [r for r in rows if r.error is None and r.speedup is not None]
    if not ok:
        raise ValueError(f"group {key} has no complete rows")
    ratios = [r.fallback_s / r.native_s for r in ok]
    return GroupSummary(
        key=key,
        count=len(ok),
        mean_holes=_mean([r.H for r in ok]),
        mean_branches=_mean([r.B for r in ok]),
        native_s=_mean([r.native_s for r in ok]),
        fallback_s=_mean([r.fallback_s for r in ok]),
        speedup=_mean(ratios),
        speedup_min=min(ratios),
        speedup_max=max(ratios),
        speedup_median=statistics.median(ratios),
    )


def group_summaries(corpus: CorpusFile, rows: Sequence[ReportRow]) -> List[GroupSummary]:
    """Per-group summaries plus ``all_handcrafted`` over every non end-to-end problem."""
    by_id = {r.theorem: r for r in rows}
    groups: Dict[str, List[ReportRow]] = {}
    for p in corpus.problems:
        if p.theorem_id in by_id and p.group:
            groups.setdefault(p.group, []).append(by_id[p.theorem_id])
    out = [summarize(k, v) for k, v in groups.items()]
    handcrafted = [by_id[p.theorem_id] for p in corpus.problems if p.group.startswith("holes_") and p.theorem_id in by_id]
    if handcrafted:
        out.append(summarize("all_handcrafted", handcrafted))
    return out


# -- reports ------------------------------------------------------------------------


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(rows: Sequence[ReportRow], format: str = "csv") -> bytes:
    if not rows:
        raise ValueError("nothing to report")
    table = [list(CSV_HEADER)] + [[r.theorem] + [_fmt(v) for v in r.values().values()] for r in rows]
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerows(table)
        return buf.getvalue().encode("utf-8")
    if format == "text":
        widths = [max(len(row[i]) for row in table) for i in range(len(CSV_HEADER))]
        lines = []
        for row in table:
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
        for r in rows:
            if r.error:
                lines.append(f"! {r.theorem}: {r.error}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {format!r}")


def _parse_cell(name: str, text: str) -> Any:
    if text == "":
        return None
    if name in ("H", "B"):
        return int(text)
    return float(text)


def parse_report(data: Union[bytes, str]) -> List[ReportRow]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ParseError(f"unexpected CSV header {reader.fieldnames}")
    return [ReportRow(rec["theorem"], **{k: _parse_cell(k, rec[k]) for k in CSV_HEADER[1:]}) for rec in reader]


# -- verification -------------------------------------------------------------------

_CHECKED = ("native_s", "fallback_s", "speedup")


@dataclass
class Verdict:
    key: str
    field: str
    expected: float
    actual: float
    tolerance: float

    @property
    def rel_error(self) -> float:
        return abs(self.actual - self.expected) / abs(self.expected) if self.expected else abs(self.actual)

    @property
    def passed(self) -> bool:
        # small absolute slack absorbs float noise at tolerance 0
        return self.rel_error <= self.tolerance + 1e-12

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.key} {self.field}: expected {self.expected:g}, got {self.actual:g} "
            f"(rel err {self.rel_error:.4f}, tol {self.tolerance:g})"
        )


def load_expected(path: Union[str, Path]) -> List[Dict[str, Any]]:
    with open(path, newline="", encoding="utf-8") as fh:
        records = [rec for rec in csv.DictReader(row for row in fh if not row.startswith("#"))]
    out = []
    for rec in records:
        entry: Dict[str, Any] = {"theorem": rec["theorem"]}
        for k in _CHECKED + ("tolerance",):
            if rec.get(k):
                entry[k] = float(rec[k])
        out.append(entry)
    return out


def verify_against_expected(
    rows: Mapping[str, Mapping[str, Any]],
    expected: Iterable[Mapping[str, Any]],
    tolerance: float = 0.05,
) -> List[Verdict]:
    """Compare ``rows`` (key -> field values) with expected entries.

    An entry's own ``tolerance`` overrides the default.
    """
    verdicts = []
    for entry in expected:
        key = entry["theorem"]
        if key not in rows:
            raise MissingRow(key)
        actual = rows[key]
        tol = float(entry.get("tolerance", tolerance))
        for name in _CHECKED:
            if entry.get(name) is None:
                continue
            value = actual.get(name)
            verdicts.append(Verdict(key, name, float(entry[name]), float("nan") if value is None else float(value), tol))
    return verdicts


def keyed_results(corpus: CorpusFile, rows: Sequence[ReportRow]) -> Dict[str, Dict[str, Any]]:
    """Rows and group summaries keyed for :func:`verify_against_expected`.

    Group keys are ``group:<name>``.
    """
    keyed: Dict[str, Dict[str, Any]] = {r.theorem: r.values() for r in rows if r.error is None}
    for s in group_summaries(corpus, rows):
        keyed[f"group:{s.key}"] = s.as_row()
    return keyed
