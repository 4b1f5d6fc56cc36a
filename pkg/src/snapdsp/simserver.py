"""Deterministic simulated Lean file-worker.

The server answers the snapshot RPCs against per-theorem cost profiles instead
of running Lean. Every duration is charged to a virtual clock, so an hour of
fallback rebuilds costs microseconds of real time and repeated runs produce
identical traces.
"""

from __future__ import annotations

import enum
import heapq
import io
import itertools
import logging
import random
import socketserver
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import PurePosixPath
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple
from urllib.parse import unquote, urlparse

from . import wireproto as wp

logger = logging.getLogger(__name__)

DEFAULT_BATCH_LATENCY = 1.0
DEFAULT_DISPATCH_FACTOR = 1.20
FALLBACK_WORKER_GB = 3.0


class ServerLevel(enum.IntEnum):
    LEVEL0 = 0  # stock server, rebuild per branch
    LEVEL1 = 1  # import header cache across theorems
    LEVEL2 = 2  # snapshot RPCs

    @classmethod
    def parse(cls, value: Any) -> "ServerLevel":
        if isinstance(value, ServerLevel):
            return value
        text = str(value).lower().replace("level", "").strip()
        return cls(int(text))


class MethodNotFound(wp.RpcError):
    def __init__(self, method: str):
        super().__init__(wp.METHOD_NOT_FOUND, f"method not found: {method}")


class UnknownDocument(wp.RpcError):
    def __init__(self, uri: str):
        super().__init__(wp.UNKNOWN_DOCUMENT, f"no profile registered for {uri}")


class DocumentNotOpen(wp.RpcError):
    def __init__(self, uri: str):
        super().__init__(wp.DOCUMENT_NOT_OPEN, f"document not open: {uri}")


class PositionNotASorry(wp.RpcError):
    def __init__(self, line: int, character: int):
        super().__init__(wp.POSITION_NOT_A_SORRY, f"no sorry at {line}:{character}")


class UnknownSnapshot(wp.RpcError):
    def __init__(self, snapshot_id: str):
        super().__init__(wp.UNKNOWN_SNAPSHOT, f"unknown snapshot: {snapshot_id}")


# -- profiles ------------------------------------------------------------------


@dataclass(frozen=True)
class TacticOutcome:
    closes: bool
    cpu_ms: float


@dataclass(frozen=True)
class HoleSpec:
    line: int
    character: int
    tactic_outcomes: Mapping[str, TacticOutcome]

    def outcome(self, tactic: str) -> TacticOutcome:
        # tactics outside the oracle never close the goal
        return self.tactic_outcomes.get(tactic, TacticOutcome(False, 0.0))

    @property
    def position(self) -> Tuple[int, int]:
        return (self.line, self.character)


@dataclass(frozen=True)
class TheoremProfile:
    """Cost and outcome model for one theorem.

    ``fallback_branch_seconds`` is the per-branch rebuild cost (import plus
    body re-elaboration), excluding tactic CPU.
    """

    theorem_id: str
    import_seconds: float
    body_seconds: float
    fallback_branch_seconds: float
    holes: Tuple[HoleSpec, ...]
    session_overhead_seconds: float = 0.0
    env_gb: float = 3.0
    mctx_kb: float = 8.0

    def __post_init__(self) -> None:
        times = (self.import_seconds, self.body_seconds, self.session_overhead_seconds, self.fallback_branch_seconds)
        if any(t < 0 for t in times):
            raise ValueError(f"{self.theorem_id}: negative duration")
        if self.fallback_branch_seconds < self.import_seconds:
            raise ValueError(f"{self.theorem_id}: fallback rebuild must include the import cost")
        positions = [h.position for h in self.holes]
        if positions != sorted(set(positions)):
            raise ValueError(f"{self.theorem_id}: hole positions must be strictly increasing")

    @property
    def hole_count(self) -> int:
        return len(self.holes)

    def hole_at(self, line: int, character: int) -> Optional[int]:
        for k, hole in enumerate(self.holes):
            if hole.line == line and hole.character == character:
                return k
        return None


def theorem_id_from_uri(uri: str) -> str:
    path = unquote(urlparse(uri).path) if "://" in uri else uri
    return PurePosixPath(path).stem


def import_header(text: str) -> str:
    """Leading ``import`` block, the Level-1 cache key."""
    lines = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("import "):
            lines.append(stripped)
        elif stripped and not stripped.startswith("--"):
            break
    return "\n".join(lines)


# -- virtual time ----------------------------------------------------------------


class VirtualClock:
    """Event queue ordered by (time, insertion sequence)."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._queue: List[Tuple[float, int, Callable[[], None], str]] = []
        self._seq = itertools.count()
        self.trace: List[Tuple[float, str]] = []

    def schedule(self, at: float, action: Callable[[], None], label: str = "") -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        heapq.heappush(self._queue, (at, next(self._seq), action, label))

    def after(self, delay: float, action: Callable[[], None], label: str = "") -> None:
        self.schedule(self.now + delay, action, label)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, action, label = heapq.heappop(self._queue)
        self.now = at
        if label:
            self.trace.append((at, label))
        action()
        return True

    def run_until_idle(self) -> float:
        while self.step():
            pass
        return self.now


@dataclass
class MemoryLedger:
    shared_env_gb: float = 0.0
    per_branch_kb: float = 0.0
    active_branches: int = 0
    peak_gb: float = 0.0

    @property
    def current_gb(self) -> float:
        return self.shared_env_gb + self.active_branches * self.per_branch_kb / 1e6

    def _touch(self) -> None:
        self.peak_gb = max(self.peak_gb, self.current_gb)

    def load_env(self, env_gb: float, per_branch_kb: float) -> None:
        # one Environment per session; it is referenced, never copied
        self.shared_env_gb = max(self.shared_env_gb, env_gb)
        self.per_branch_kb = per_branch_kb
        self._touch()

    def fork(self, n: int) -> None:
        self.active_branches += n
        self._touch()

    def join(self, n: int) -> None:
        self.active_branches -= n


def fallback_peak_gb(workers: int, branches: int, worker_gb: float = FALLBACK_WORKER_GB) -> float:
    return min(workers, branches) * worker_gb


@dataclass(frozen=True)
class SnapshotRecord:
    snapshot_id: str
    theorem_id: str
    hole_index: int
    captured_at: float


@dataclass
class _OpenDocument:
    uri: str
    profile: TheoremProfile
    opened_at: float
    hole_ready: Tuple[float, ...]


# -- the server --------------------------------------------------------------------


class SimServer:
    """Simulated file-worker at a given capability level.

    Handlers raise :class:`~snapdsp.wireproto.RpcError` subclasses; ``feed``
    turns them into error responses on the wire.
    """

    def __init__(
        self,
        profiles: Sequence[TheoremProfile] = (),
        level: ServerLevel = ServerLevel.LEVEL2,
        *,
        batch_latency: float = DEFAULT_BATCH_LATENCY,
        dispatch_factor: float = DEFAULT_DISPATCH_FACTOR,
        jitter_sigma: float = 0.0,
        seed: int = 0,
        header_cache_size: int = 1,
        clock: Optional[VirtualClock] = None,
    ):
        self.level = ServerLevel.parse(level)
        self.profiles: Dict[str, TheoremProfile] = {}
        for p in profiles:
            self.register(p)
        self.batch_latency = batch_latency
        self.dispatch_factor = dispatch_factor
        self.jitter_sigma = jitter_sigma
        self._rng = random.Random(seed)
        self.clock = clock or VirtualClock()
        self.ledger = MemoryLedger()
        self.documents: Dict[str, _OpenDocument] = {}
        self.snapshots: Dict[str, SnapshotRecord] = {}
        self._snapshot_counter = itertools.count()
        self._header_cache: "OrderedDict[str, None]" = OrderedDict()
        self._header_cache_size = header_cache_size

    def register(self, profile: TheoremProfile) -> None:
        self.profiles[profile.theorem_id] = profile

    @property
    def now(self) -> float:
        return self.clock.now

    # handlers -------------------------------------------------------------------

    def handle_ping(self) -> Dict[str, bool]:
        if self.level < ServerLevel.LEVEL2:
            raise MethodNotFound(wp.PING)
        return {"ok": True}

    def handle_open_document(self, uri: str, text: str = "") -> float:
        theorem_id = theorem_id_from_uri(uri)
        profile = self.profiles.get(theorem_id)
        if profile is None:
            raise UnknownDocument(uri)
        t0 = self.now
        import_cost = profile.import_seconds
        if self.level == ServerLevel.LEVEL1:
            key = import_header(text)
            if key in self._header_cache:
                import_cost = 0.0
                self._header_cache.move_to_end(key)
            else:
                self._header_cache[key] = None
                while len(self._header_cache) > self._header_cache_size:
                    self._header_cache.popitem(last=False)
        imports_done = t0 + profile.session_overhead_seconds + import_cost
        n = profile.hole_count
        # a single forward elaboration pass reaches the holes in document order
        ready = tuple(imports_done + profile.body_seconds * (k + 1) / n for k in range(n))
        self.documents[uri] = _OpenDocument(uri, profile, t0, ready)
        self.ledger.load_env(profile.env_gb, profile.mctx_kb)
        self.clock.schedule(imports_done, lambda: None, f"imports-done {theorem_id}")
        for k, at in enumerate(ready):
            self.clock.schedule(at, lambda: None, f"elaborated {theorem_id} hole={k}")
        return t0

    def handle_capture(self, uri: str, line: int, character: int) -> Tuple[Dict[str, str], float]:
        """Return the capture result and the virtual time it becomes available."""
        if self.level < ServerLevel.LEVEL2:
            raise MethodNotFound(wp.CAPTURE)
        doc = self.documents.get(uri)
        if doc is None:
            raise DocumentNotOpen(uri)
        k = doc.profile.hole_at(line, character)
        if k is None:
            raise PositionNotASorry(line, character)
        ready = max(self.now, doc.hole_ready[k])
        snapshot_id = f"snap-{next(self._snapshot_counter)}"
        self.snapshots[snapshot_id] = SnapshotRecord(snapshot_id, doc.profile.theorem_id, k, ready)
        return {"snapshotId": snapshot_id}, ready

    def _hole_for(self, snapshot_id: str) -> HoleSpec:
        record = self.snapshots.get(snapshot_id)
        if record is None:
            raise UnknownSnapshot(snapshot_id)
        return self.profiles[record.theorem_id].holes[record.hole_index]

    def _cpu_seconds(self, outcome: TacticOutcome) -> float:
        cpu = outcome.cpu_ms / 1000.0
        if self.jitter_sigma > 0:
            cpu *= self._rng.lognormvariate(0.0, self.jitter_sigma)
        return cpu

    def evaluate_branches(
        self, snapshot_id: str, configs: Sequence[Mapping[str, Any]], cancel_on_first_success: bool = False
    ) -> Tuple[List[Dict[str, Any]], float]:
        """Results for one batch and the batch's virtual wall duration."""
        if self.level < ServerLevel.LEVEL2:
            raise MethodNotFound(wp.BRANCH)
        hole = self._hole_for(snapshot_id)
        if not configs:
            raise wp.RpcError(wp.INVALID_PARAMS, "configs must be non-empty")
        results = []
        for cfg in configs:
            tactic = cfg.get("tactic") if isinstance(cfg, Mapping) else None
            if not tactic:
                raise wp.RpcError(wp.INVALID_PARAMS, "branch config without tactic")
            outcome = hole.outcome(tactic)
            cpu = self._cpu_seconds(outcome)
            if outcome.closes:
                results.append({"ok": True, "error": None, "cpuSeconds": cpu})
            else:
                results.append({"ok": False, "error": f"tactic '{tactic}' failed", "cpuSeconds": cpu})
        slowest = max(r["cpuSeconds"] for r in results)
        if cancel_on_first_success:
            winners = [r["cpuSeconds"] for r in results if r["ok"]]
            if winners:
                first = min(winners)
                slowest = first
                for r in results:
                    if r["cpuSeconds"] > first:
                        r.update(ok=False, error="cancelled", cpuSeconds=first)
        return results, self.batch_latency + self.dispatch_factor * slowest

    def handle_branch(
        self, snapshot_id: str, configs: Sequence[Mapping[str, Any]], cancel_on_first_success: bool = False
    ) -> Tuple[List[Dict[str, Any]], float]:
        """Run one batch; returns results and the completion time.

        Branch contexts are held in the memory ledger until completion.
        """
        results, duration = self.evaluate_branches(snapshot_id, configs, cancel_on_first_success)
        n = len(results)
        self.ledger.fork(n)
        done = self.now + duration
        self.clock.schedule(done, lambda: self.ledger.join(n), f"branch-done {snapshot_id} n={n}")
        return results, done

    def run_until_idle(self) -> float:
        return self.clock.run_until_idle()

    def memory_peak(self) -> float:
        return self.ledger.peak_gb

    # wire entry point -------------------------------------------------------------

    def feed(self, data: bytes, reply: Callable[[bytes], None]) -> None:
        """Accept framed bytes; answers are passed to ``reply`` at their virtual completion time."""
        stream = io.BytesIO(data)
        while stream.tell() < len(data):
            body = wp.read_frame(stream)
            try:
                env = wp.decode_payload(body)
            except wp.DecodeError as exc:
                self._reply_at(self.now, wp.encode_error(None, wp.PARSE_ERROR, str(exc)), reply)
                continue
            self._dispatch(env, reply)

    def _reply_at(self, at: float, env: wp.RpcEnvelope, reply: Callable[[bytes], None]) -> None:
        def send() -> None:
            env.virtual_time = at
            reply(wp.frame_message(env.to_bytes()))

        self.clock.schedule(at, send, f"reply id={env.id}")

    def _dispatch(self, env: wp.RpcEnvelope, reply: Callable[[bytes], None]) -> None:
        params = env.params if isinstance(env.params, dict) else {}
        try:
            if env.method == wp.DID_OPEN:
                doc = params.get("textDocument", {})
                self.handle_open_document(doc.get("uri", ""), doc.get("text", ""))
                return
            if env.is_notification:
                return
            if env.method == wp.PING:
                self._reply_at(self.now, wp.encode_response(env.id, self.handle_ping()), reply)
            elif env.method == wp.CAPTURE:
                pos = params.get("position", params)
                uri = params.get("textDocument", {}).get("uri", params.get("uri", ""))
                result, at = self.handle_capture(uri, int(pos["line"]), int(pos["character"]))
                self._reply_at(at, wp.encode_response(env.id, result), reply)
            elif env.method == wp.BRANCH:
                results, at = self.handle_branch(
                    params.get("snapshotId", ""),
                    params.get("configs") or [],
                    bool(params.get("cancelOnFirstSuccess", False)),
                )
                self._reply_at(at, wp.encode_response(env.id, results), reply)
            else:
                raise MethodNotFound(str(env.method))
        except wp.RpcError as exc:
            if env.is_notification:
                logger.warning("dropped notification %s: %s", env.method, exc)
                return
            self._reply_at(self.now, wp.encode_error(env.id, exc.code, exc.message), reply)
        except (KeyError, TypeError, ValueError) as exc:
            if not env.is_notification:
                self._reply_at(self.now, wp.encode_error(env.id, wp.INVALID_PARAMS, str(exc)), reply)


# -- TCP exposure -------------------------------------------------------------------


class _FrameHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        sim: SimServer = self.server.sim  # type: ignore[attr-defined]
        lock: threading.Lock = self.server.sim_lock  # type: ignore[attr-defined]
        while True:
            try:
                body = wp.read_frame(self.rfile)
            except wp.StreamClosed:
                return
            except wp.WireError as exc:
                logger.warning("closing connection: %s", exc)
                return
            try:
                expects_reply = not wp.decode_payload(body).is_notification
            except wp.DecodeError:
                expects_reply = True
            out: List[bytes] = []
            # requests are linearised onto the single virtual timeline; time
            # advances only as far as the reply, so a notification costs nothing
            with lock:
                sim.feed(wp.frame_message(body), out.append)
                while expects_reply and not out and sim.clock.step():
                    pass
            for chunk in out:
                self.wfile.write(chunk)
            self.wfile.flush()


class SimTcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, sim: SimServer, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _FrameHandler)
        self.sim = sim
        self.sim_lock = threading.Lock()

    @property
    def port(self) -> int:
        return self.server_address[1]
