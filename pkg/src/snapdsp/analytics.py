"""Closed-form wall-time model for native snapshot dispatch vs. per-branch rebuild."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional


class NoCrossover(ValueError):
    pass


@dataclass(frozen=True)
class CostParams:
    """Seconds throughout. ``t_load`` is the per-branch rebuild cost and
    ``t_elab`` the one-time native elaboration cost."""

    t_elab: float = 0.0
    t_load: float = 0.0
    t_tactic: float = 0.0
    t_import: float = 0.0
    t_body: float = 0.0
    workers: int = 1
    holes: int = 1
    configs: int = 7

    def __post_init__(self) -> None:
        for name in ("t_elab", "t_load", "t_tactic", "t_import", "t_body", "holes", "configs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def branches(self) -> int:
        return self.holes * self.configs

    def with_branches(self, b: int) -> "CostParams":
        """Same costs, ``b`` branches (expressed as b single-config holes)."""
        return replace(self, holes=b, configs=1)


# fitted constants: native ~ 120 + 0.045 B, fallback ~ 75 s per branch
FITTED = CostParams(t_elab=120.0, t_load=75.0 - 0.045, t_tactic=0.045, t_import=60.0, t_body=15.0)


def t_native(p: CostParams) -> float:
    return p.t_elab + p.branches * p.t_tactic


def t_fallback(p: CostParams) -> float:
    # ceiling-batch model; W=1 is exactly B * (t_load + t_tactic)
    return math.ceil(p.branches / p.workers) * (p.t_load + p.t_tactic)


def speedup(p: CostParams) -> float:
    native = t_native(p)
    if native <= 0:
        raise ZeroDivisionError("native time must be positive")
    return t_fallback(p) / native


def crossover_branches(p: CostParams) -> int:
    """Smallest B with t_native < t_fallback on one worker.

    Tactic time is paid per branch on both paths and cancels, leaving
    B * t_load > t_elab. A rebuild no dearer than the tactic itself is
    rejected as a degenerate cost model.
    """
    if p.t_load <= p.t_tactic:
        raise NoCrossover(f"t_load={p.t_load} does not exceed t_tactic={p.t_tactic}")
    return math.floor(p.t_elab / p.t_load) + 1


def overhead_fraction(fallback_per_branch: float, tactic_cpu: float) -> float:
    if fallback_per_branch <= 0:
        raise ValueError("fallback per-branch time must be positive")
    return min(1.0, max(0.0, (fallback_per_branch - tactic_cpu) / fallback_per_branch))


@dataclass(frozen=True)
class LevelComparison:
    l0: float
    l1: float
    l2: float
    l12_amortized: float
    l1_amortized: float

    def ratios(self) -> Dict[str, float]:
        return {
            "L0": 1.0,
            "L1": self.l0 / self.l1,
            "L2": self.l0 / self.l2,
            "L1+2": self.l0 / self.l12_amortized,
        }


def level_comparison(
    p: CostParams,
    *,
    fallback_per_branch: float,
    session_overhead: float = 0.0,
    l0_workers: int = 1,
) -> LevelComparison:
    """Wall time per theorem under each caching level.

    ``fallback_per_branch`` is the measured full-rebuild cost (the rebuild is
    slower than LSP elaboration, so it is an input rather than
    ``t_import + t_body``). ``p.workers`` bounds Level-1 concurrency.
    """
    b = p.branches
    batch = b * p.t_tactic
    return LevelComparison(
        l0=math.ceil(b / l0_workers) * fallback_per_branch,
        l1=p.t_import + math.ceil(b / p.workers) * p.t_body,
        l2=p.t_import + p.t_body + session_overhead + batch,
        l12_amortized=p.t_body + batch,
        l1_amortized=math.ceil(b / p.workers) * p.t_body,
    )


@dataclass(frozen=True)
class ProjectionRow:
    branches: int
    native: float
    fallback: float
    speedup: float
    measured: bool


def projection_table(
    branch_counts: Iterable[int],
    p: CostParams = FITTED,
    measured: Optional[Dict[int, tuple]] = None,
) -> List[ProjectionRow]:
    """Rows of (B, native, fallback, speedup); ``measured`` maps B to
    (native, fallback) pairs that replace the model values."""
    rows = []
    for b in branch_counts:
        if measured and b in measured:
            native, fallback = measured[b]
            rows.append(ProjectionRow(b, native, fallback, fallback / native, True))
            continue
        q = p.with_branches(b)
        rows.append(ProjectionRow(b, t_native(q), t_fallback(q), speedup(q), False))
    return rows


@dataclass(frozen=True)
class DraftsProjection:
    drafts: int
    branches_per_draft: int
    fallback_hours: float
    native_hours: float


def drafts_projection(
    drafts: int = 100,
    holes: int = 4,
    configs: int = 7,
    workers: int = 2,
    p: CostParams = FITTED,
) -> DraftsProjection:
    """Many drafts per theorem: fallback rebuilds every branch of every draft;
    native pays one session (elaboration plus batch) per draft."""
    per_draft = holes * configs
    total = drafts * per_draft
    fallback = t_fallback(replace(p, holes=total, configs=1, workers=workers))
    native = drafts * t_native(replace(p, holes=holes, configs=configs))
    return DraftsProjection(drafts, per_draft, fallback / 3600.0, native / 3600.0)


def body_from_fallback_makespan(makespan: float, branches: int, workers: int, t_import: float) -> float:
    """Invert ceil(B/W) * (t_import + t_body) = makespan for t_body."""
    return makespan / math.ceil(branches / workers) - t_import
