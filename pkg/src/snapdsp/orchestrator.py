"""Prove-phase pipeline: probe, discover holes, capture, batch-branch, collect.

When the server lacks snapshot support every (hole, tactic) pair is rebuilt
independently on a worker pool whose width is bounded by memory.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from . import wireproto as wp
from .simserver import (
    FALLBACK_WORKER_GB,
    ServerLevel,
    SimServer,
    TheoremProfile,
    VirtualClock,
)
from .sketch import SketchDocument, SorrySite, find_sorry_positions, substitute_tactic

logger = logging.getLogger(__name__)

DEFAULT_TACTICS = ("aesop", "norm_num", "omega", "ring", "linarith", "decide", "simp")


class Mode(str, enum.Enum):
    NATIVE = "native"
    FALLBACK = "fallback"


class ServerError(Exception):
    """An RPC kept failing after its retry."""


@dataclass(frozen=True)
class Portfolio:
    tactics: Tuple[str, ...] = DEFAULT_TACTICS

    def __post_init__(self) -> None:
        if not self.tactics or not all(self.tactics):
            raise ValueError("portfolio needs at least one non-empty tactic")

    def __len__(self) -> int:
        return len(self.tactics)


@dataclass
class HoleResult:
    hole_index: int
    closing_tactics: List[str]


@dataclass
class ProveOutcome:
    theorem_id: str
    proved: bool
    per_hole: List[HoleResult]
    wall_seconds: float
    peak_mem_gb: Optional[float]
    branch_count: int
    mode: Mode
    # tactic CPU per branch, and per-branch rebuild time on the fallback path
    cpu_seconds: List[float] = field(default_factory=list)
    branch_seconds: List[float] = field(default_factory=list)

    def closing_sets(self) -> List[frozenset]:
        return [frozenset(h.closing_tactics) for h in self.per_hole]


@dataclass(frozen=True)
class FallbackPlan:
    workers: int = 1
    per_branch_seconds: Optional[float] = None
    ram_gb: Optional[float] = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("fallback pool needs at least one worker")

    @classmethod
    def from_ram(cls, ram_gb: float, worker_gb: float = FALLBACK_WORKER_GB) -> "FallbackPlan":
        return cls(workers=max(1, math.floor(ram_gb / worker_gb)), ram_gb=ram_gb)


def _collect(theorem_id: str, sites: Sequence[SorrySite], portfolio: Portfolio, closes: Dict[Tuple[int, str], bool]) -> List[HoleResult]:
    per_hole = []
    for site in sites:
        closing = [t for t in portfolio.tactics if closes.get((site.hole_index, t), False)]
        per_hole.append(HoleResult(site.hole_index, closing))
    return per_hole


# -- capability probe ---------------------------------------------------------------


def detect_mode(conn: wp.Connection) -> Mode:
    try:
        env = conn.call(wp.PING, {})
    except Exception as exc:  # any transport failure means no snapshots
        logger.info("ping failed (%s); using fallback", exc)
        return Mode.FALLBACK
    if env.error is None and isinstance(env.result, dict) and env.result.get("ok") is True:
        return Mode.NATIVE
    return Mode.FALLBACK


# -- native path ----------------------------------------------------------------


def _virtual_now(conn: wp.Connection) -> float:
    server = getattr(conn, "server", None)
    if server is not None:
        return server.now
    return conn.last_virtual_time or 0.0


def prove_native(
    conn: wp.Connection,
    doc: SketchDocument,
    portfolio: Portfolio = Portfolio(),
    *,
    theorem_id: Optional[str] = None,
    cancel_on_first_success: bool = False,
) -> ProveOutcome:
    """Capture each hole once and dispatch the whole portfolio in one branch call.

    Captures go out in hole order; each hole's batch is sent as soon as its
    capture resolves, so batches for early holes overlap elaboration of later ones.
    """
    theorem_id = theorem_id or doc.uri.rsplit("/", 1)[-1].removesuffix(".lean")
    sites = find_sorry_positions(doc)
    closes: Dict[Tuple[int, str], bool] = {}
    cpu: List[float] = []
    failures: List[str] = []
    finished: List[float] = []
    start = _virtual_now(conn)

    def send(method: str, params: Dict[str, Any], on_result: Callable[[Any], None], attempts: int = 2) -> None:
        def handle(env: wp.RpcEnvelope) -> None:
            if env.error is None:
                on_result(env.result)
            elif attempts > 1:
                logger.debug("retrying %s after %s", method, env.error)
                send(method, params, on_result, attempts - 1)
            else:
                failures.append(f"{method}: {env.error.get('message')}")

        conn.request(method, params, handle)

    def branch_for(site: SorrySite) -> Callable[[Any], None]:
        def on_capture(result: Dict[str, Any]) -> None:
            params: Dict[str, Any] = {
                "snapshotId": result["snapshotId"],
                "configs": [{"tactic": t} for t in portfolio.tactics],
            }
            if cancel_on_first_success:
                params["cancelOnFirstSuccess"] = True

            def on_branch(results: List[Dict[str, Any]]) -> None:
                for tactic, r in zip(portfolio.tactics, results):
                    closes[(site.hole_index, tactic)] = bool(r.get("ok"))
                    cpu.append(float(r.get("cpuSeconds", 0.0)))
                finished.append(_virtual_now(conn))

            send(wp.BRANCH, params, on_branch)

        return on_capture

    try:
        conn.notify(wp.DID_OPEN, {"textDocument": {"uri": doc.uri, "languageId": "lean4", "version": 1, "text": doc.text}})
        for site in sites:
            send(wp.CAPTURE, {"uri": doc.uri, "line": site.line, "character": site.character}, branch_for(site))
        conn.drain()
    except (wp.WireError, OSError) as exc:
        raise ServerError(f"transport failure: {exc}") from exc
    if failures:
        raise ServerError("; ".join(failures))

    per_hole = _collect(theorem_id, sites, portfolio, closes)
    server = getattr(conn, "server", None)
    return ProveOutcome(
        theorem_id=theorem_id,
        proved=bool(per_hole) and all(h.closing_tactics for h in per_hole),
        per_hole=per_hole,
        wall_seconds=(max(finished) if finished else _virtual_now(conn)) - start,
        peak_mem_gb=server.memory_peak() if server is not None else None,
        branch_count=len(sites) * len(portfolio),
        mode=Mode.NATIVE,
        cpu_seconds=cpu,
    )


# -- fallback path -----------------------------------------------------------------


@dataclass(frozen=True)
class BuildResult:
    ok: bool
    error: Optional[str]
    seconds: float
    cpu_seconds: float


class SimBuilder:
    """Stands in for ``lake build`` of one tactic variant of a sketch."""

    def __init__(self, profile: TheoremProfile, per_branch_seconds: Optional[float] = None):
        self.profile = profile
        self.per_branch_seconds = profile.fallback_branch_seconds if per_branch_seconds is None else per_branch_seconds

    def build(self, variant: SketchDocument, site: SorrySite, tactic: str) -> BuildResult:
        offset = variant.offset_of(site.line, site.character)
        if not variant.text.startswith(tactic, offset):
            raise ValueError(f"variant does not carry {tactic!r} at {site.line}:{site.character}")
        k = self.profile.hole_at(site.line, site.character)
        if k is None:
            raise ValueError(f"{self.profile.theorem_id}: no hole at {site.line}:{site.character}")
        outcome = self.profile.holes[k].outcome(tactic)
        cpu = outcome.cpu_ms / 1000.0
        return BuildResult(
            ok=outcome.closes,
            error=None if outcome.closes else f"tactic '{tactic}' failed",
            seconds=self.per_branch_seconds + cpu,
            cpu_seconds=cpu,
        )


@dataclass
class _Job:
    hole_index: int
    tactic: str
    result: BuildResult


class WorkerPool:
    """W-wide pool in virtual time; queued jobs start in FIFO order on the
    earliest free worker."""

    def __init__(self, workers: int, clock: Optional[VirtualClock] = None, worker_gb: float = FALLBACK_WORKER_GB):
        self.workers = workers
        self.clock = clock or VirtualClock()
        self.worker_gb = worker_gb
        self.busy = 0
        self.peak_gb = 0.0
        self.spans: List[Tuple[float, float]] = []

    def run(self, durations: Sequence[float], on_done: Optional[Callable[[int], None]] = None, skip: Optional[Callable[[int], bool]] = None) -> float:
        """Execute jobs and return the makespan.

        ``skip(i)`` is consulted when job i reaches the head of the queue;
        skipped jobs never occupy a worker.
        """
        start = self.clock.now
        queue = list(range(len(durations)))
        queue.reverse()
        end = start

        def launch() -> None:
            while self.busy < self.workers and queue:
                i = queue.pop()
                if skip is not None and skip(i):
                    continue
                self.busy += 1
                self.peak_gb = max(self.peak_gb, self.busy * self.worker_gb)
                t0 = self.clock.now
                self.spans.append((t0, t0 + durations[i]))
                self.clock.after(durations[i], lambda i=i: finish(i), f"build-done job={i}")

        def finish(i: int) -> None:
            nonlocal end
            self.busy -= 1
            end = self.clock.now
            if on_done is not None:
                on_done(i)
            launch()

        launch()
        self.clock.run_until_idle()
        return end - start


def pool_makespan(durations: Sequence[float], workers: int) -> float:
    """Closed-form FIFO list schedule, independent of the event loop."""
    free = [0.0] * min(workers, max(1, len(durations)))
    heapq.heapify(free)
    end = 0.0
    for d in durations:
        t = heapq.heappop(free) + d
        end = max(end, t)
        heapq.heappush(free, t)
    return end


def prove_fallback(
    doc: SketchDocument,
    builder: SimBuilder,
    portfolio: Portfolio = Portfolio(),
    plan: FallbackPlan = FallbackPlan(),
    *,
    theorem_id: Optional[str] = None,
    cancel_on_first_success: bool = False,
) -> ProveOutcome:
    """Rebuild every (hole, tactic) variant on a ``plan.workers``-wide pool."""
    theorem_id = theorem_id or builder.profile.theorem_id
    sites = find_sorry_positions(doc)
    jobs: List[_Job] = []
    for site in sites:
        for tactic in portfolio.tactics:
            variant = substitute_tactic(doc, site, tactic)
            jobs.append(_Job(site.hole_index, tactic, builder.build(variant, site, tactic)))

    closes: Dict[Tuple[int, str], bool] = {}
    closed_holes: set = set()

    def done(i: int) -> None:
        job = jobs[i]
        closes[(job.hole_index, job.tactic)] = job.result.ok
        if job.result.ok:
            closed_holes.add(job.hole_index)

    skip = (lambda i: jobs[i].hole_index in closed_holes) if cancel_on_first_success else None
    pool = WorkerPool(plan.workers)
    wall = pool.run([j.result.seconds for j in jobs], on_done=done, skip=skip)
    ran = [jobs[i] for i in range(len(jobs)) if (jobs[i].hole_index, jobs[i].tactic) in closes]

    per_hole = _collect(theorem_id, sites, portfolio, closes)
    return ProveOutcome(
        theorem_id=theorem_id,
        proved=bool(per_hole) and all(h.closing_tactics for h in per_hole),
        per_hole=per_hole,
        wall_seconds=wall,
        peak_mem_gb=pool.peak_gb,
        branch_count=len(sites) * len(portfolio),
        mode=Mode.FALLBACK,
        cpu_seconds=[j.result.cpu_seconds for j in ran],
        branch_seconds=[j.result.seconds for j in ran],
    )


# -- entry point -------------------------------------------------------------------


def run_prove_phase(
    profile: TheoremProfile,
    sketch_text: str,
    portfolio: Portfolio = Portfolio(),
    mode: Optional[Mode] = None,
    *,
    level: ServerLevel = ServerLevel.LEVEL2,
    workers: int = 1,
    batch_latency: Optional[float] = None,
    dispatch_factor: Optional[float] = None,
    jitter_sigma: float = 0.0,
    seed: int = 0,
    cancel_on_first_success: bool = False,
) -> ProveOutcome:
    """Prove one theorem against a fresh simulated server."""
    kwargs: Dict[str, Any] = {"jitter_sigma": jitter_sigma, "seed": seed}
    if batch_latency is not None:
        kwargs["batch_latency"] = batch_latency
    if dispatch_factor is not None:
        kwargs["dispatch_factor"] = dispatch_factor
    server = SimServer([profile], level, **kwargs)
    conn = wp.PipeConnection(server)
    doc = SketchDocument(f"file:///sketches/{profile.theorem_id}.lean", sketch_text)
    chosen = Mode(mode) if mode is not None else detect_mode(conn)
    if chosen is Mode.NATIVE:
        return prove_native(conn, doc, portfolio, theorem_id=profile.theorem_id, cancel_on_first_success=cancel_on_first_success)
    return prove_fallback(
        doc,
        SimBuilder(profile),
        portfolio,
        FallbackPlan(workers=workers),
        theorem_id=profile.theorem_id,
        cancel_on_first_success=cancel_on_first_success,
    )
