#!/usr/bin/env python3
"""Regenerate src/snapdsp/data/paper_corpus.yaml.

Profiles are calibrated against the simulator itself: session overhead is
solved so the native run hits the target native wall time, and the
per-branch rebuild cost so the fallback makespan hits the target fallback
time. Hand-crafted groups without per-problem data are filled with synthetic
profiles whose group means (native, fallback, mean speedup) and speedup ranges
match the target group rows.

Run from the repository root:  python scripts/build_paper_corpus.py
"""

from __future__ import annotations

import math
import random
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from snapdsp.bench import CorpusFile, CorpusProblem, dump_corpus, parse_corpus
from snapdsp.orchestrator import DEFAULT_TACTICS, Mode, run_prove_phase
from snapdsp.simserver import DEFAULT_BATCH_LATENCY, DEFAULT_DISPATCH_FACTOR, HoleSpec, TacticOutcome, TheoremProfile
from snapdsp.sketch import SketchDocument, find_sorry_positions, template_sketch

OUT = Path(__file__).resolve().parent.parent / "src" / "snapdsp" / "data" / "paper_corpus.yaml"

C = len(DEFAULT_TACTICS)
IMPORT = 60.0
E2E_BODY = 15.0

# relative CPU weight per tactic before rescaling to the problem's mean
TACTIC_WEIGHT = {"aesop": 2.6, "norm_num": 0.9, "omega": 0.6, "ring": 0.5, "linarith": 1.3, "decide": 0.4, "simp": 1.4}

HEADERS = {
    "mathd_numbertheory_345": "theorem mathd_numbertheory_345 :\n    (2000 + 2001 + 2002 + 2003 + 2004 + 2005 + 2006) % 7 = 0 := by",
    "mathd_numbertheory_3": "theorem mathd_numbertheory_3 :\n    (∑ x ∈ Finset.range 10, (x + 1) ^ 2) % 10 = 5 := by",
    "mathd_algebra_478": (
        "theorem mathd_algebra_478 (b h v : ℝ) (h₀ : 0 < b ∧ 0 < h ∧ 0 < v)\n"
        "    (h₁ : v = 1 / 3 * (b * h)) (h₂ : b = 30) (h₃ : h = 13 / 2) : v = 65 := by"
    ),
}

# (id, holes, native s, fallback s, tactic ms, workers, import s)
END_TO_END = [
    ("mathd_numbertheory_345", 5, 132.8, 2641.4, 39, 1, IMPORT),
    ("mathd_numbertheory_3", 3, 116.2, 1572.4, 44, 1, IMPORT),
    # ~56 s per rebuild, below the usual 60 s import; its import is set lower
    ("mathd_algebra_478", 4, 119.9, 1579.6, 64, 1, 50.0),
]

# representative hand-crafted problems: (id, branches, tactic ms, native s per branch, chosen speedup)
REPRESENTATIVE = [
    ("algebra_sqineq_at2malt1", 14, 50, 5.7, 9.0),
    ("amc12b_2021_p3", 28, 54, 3.1, 18.0),
    ("mathd_algebra_137", 14, 62, 7.0, 8.0),
    ("mathd_algebra_171", 14, 31, 7.4, 7.5),
    ("mathd_algebra_176", 14, 25, 12.7, 6.0),
    ("mathd_algebra_33", 21, 46, 3.9, 12.0),
    ("mathd_algebra_398", 21, 51, 6.2, 14.0),
    ("mathd_algebra_419", 21, 28, 7.6, 8.0),
    ("mathd_numbertheory_12", 14, 54, 7.3, 10.5),
    ("mathd_numbertheory_175", 21, 32, 3.8, 16.0),
    ("mathd_numbertheory_299", 14, 27, 13.2, 5.6),
    ("mathd_numbertheory_353", 14, 39, 6.6, 12.0),
    ("mathd_numbertheory_447", 14, 77, 11.0, 7.0),
]

# hardest 4-hole problem: fallback back-computed to 11,127 s, top of the 13.1-50.0x range
NT_328 = ("mathd_numbertheory_328", 4, 11127.0 / 50.0, 11127.0)

# group: (count, native mean, fallback mean, speedup mean, speedup min, speedup max, synthetic max override)
GROUPS = {
    1: (5, 196.0, 1537.0, 7.9, 6.3, 9.6, None),
    2: (19, 136.0, 1291.0, 9.4, 5.6, 19.9, None),
    3: (11, 131.0, 1811.0, 13.8, 6.5, 20.2, None),
    4: (7, 125.0, 3478.0, 24.6, 13.1, 50.0, 32.0),
    5: (3, 141.0, 4436.0, 29.8, 20.1, 45.2, None),
}
HANDCRAFTED_WORKERS = 2


def make_holes(theorem_id: str, sketch: str, tactic_ms: float) -> Tuple[HoleSpec, ...]:
    rng = random.Random(theorem_id)
    sites = find_sorry_positions(SketchDocument("file:///x.lean", sketch))
    raw: List[Dict[str, float]] = []
    for _ in sites:
        raw.append({t: TACTIC_WEIGHT[t] * rng.lognormvariate(0.0, 0.35) for t in DEFAULT_TACTICS})
    mean = sum(sum(h.values()) for h in raw) / (len(raw) * C)
    holes = []
    for site, weights in zip(sites, raw):
        closers = set(rng.sample(DEFAULT_TACTICS, rng.randint(1, 3)))
        outcomes = {
            t: TacticOutcome(t in closers, round(w / mean * tactic_ms, 3)) for t, w in weights.items()
        }
        holes.append(HoleSpec(site.line, site.character, outcomes))
    return tuple(holes)


def _native(profile: TheoremProfile, sketch: str) -> float:
    return run_prove_phase(profile, sketch, mode=Mode.NATIVE).wall_seconds


def _fallback(profile: TheoremProfile, sketch: str, workers: int) -> float:
    return run_prove_phase(profile, sketch, mode=Mode.FALLBACK, workers=workers).wall_seconds


def calibrate(
    theorem_id: str,
    sketch: str,
    holes: Tuple[HoleSpec, ...],
    native: float,
    fallback: float,
    workers: int,
    import_s: float,
    body_s: Optional[float],
) -> TheoremProfile:
    """Solve session overhead (or body time) and per-branch rebuild cost."""
    n = len(holes)
    b = n * C
    rounds = math.ceil(b / workers)
    tail = max(
        DEFAULT_BATCH_LATENCY + DEFAULT_DISPATCH_FACTOR * max(o.cpu_ms for o in h.tactic_outcomes.values()) / 1000.0
        - (n - 1 - k) / n * (body_s or 0.0)
        for k, h in enumerate(holes)
    )
    if body_s is None:
        # whole residual counts as theorem-body elaboration
        body = native - import_s - DEFAULT_BATCH_LATENCY - DEFAULT_DISPATCH_FACTOR * max(
            o.cpu_ms for o in holes[-1].tactic_outcomes.values()
        ) / 1000.0
        session = 0.0
    else:
        body = body_s
        session = native - import_s - body - tail
    mean_cpu = sum(o.cpu_ms for h in holes for o in h.tactic_outcomes.values()) / b / 1000.0
    per_branch = fallback / rounds - mean_cpu

    def build(session: float, body: float, per_branch: float) -> TheoremProfile:
        return TheoremProfile(
            theorem_id=theorem_id,
            import_seconds=import_s,
            body_seconds=round(body, 6),
            fallback_branch_seconds=round(per_branch, 6),
            holes=holes,
            session_overhead_seconds=round(session, 6),
        )

    for _ in range(4):
        profile = build(session, body, per_branch)
        dn = native - _native(profile, sketch)
        df = fallback - _fallback(profile, sketch, workers)
        if abs(dn) < 1e-6 and abs(df) < 1e-6:
            break
        if body_s is None:
            body += dn
        else:
            session += dn
        per_branch += df / rounds
    profile = build(session, body, per_branch)
    assert profile.session_overhead_seconds >= 0 and profile.body_seconds >= 0, theorem_id
    return profile


def spread(m: int, total: float, lo: float, hi: float) -> List[float]:
    """m values from lo to hi (both included when m >= 2) summing to ``total``."""
    if m == 1:
        return [total]
    us = [i / (m - 1) for i in range(m)]
    g_lo, g_hi = 1e-3, 1e3
    for _ in range(200):
        g = math.sqrt(g_lo * g_hi)
        s = sum(lo + (hi - lo) * u**g for u in us)
        if s > total:
            g_lo = g
        else:
            g_hi = g
    vals = [lo + (hi - lo) * u**g for u in us]
    vals[m // 2] += total - sum(vals)
    return vals


def synth_targets(m: int, native_sum: float, speed_sum: float, fallback_sum: float, lo: float, hi: float) -> List[Tuple[float, float]]:
    """(native, fallback) pairs hitting three group sums exactly."""
    s = spread(m, speed_sum, lo, hi)
    mean_s = speed_sum / m
    a = native_sum / m
    var = sum((x - mean_s) ** 2 for x in s)
    bcoef = (fallback_sum - a * speed_sum) / var if var else 0.0
    out = []
    for x in s:
        native = a + bcoef * (x - mean_s)
        out.append((native, native * x))
    return out


def problem(theorem_id: str, group: str, synthetic: bool, holes_n: int, native: float, fallback: float,
            tactic_ms: float, workers: int, import_s: float = IMPORT, body_s: Optional[float] = None) -> CorpusProblem:
    sketch = template_sketch(theorem_id, holes_n, HEADERS.get(theorem_id))
    holes = make_holes(theorem_id, sketch, tactic_ms)
    profile = calibrate(theorem_id, sketch, holes, native, fallback, workers, import_s, body_s)
    return CorpusProblem(profile, sketch, group, synthetic, workers)


def main() -> None:
    problems: List[CorpusProblem] = []
    for tid, h, native, fallback, ms, w, imp in END_TO_END:
        problems.append(problem(tid, "end_to_end", False, h, native, fallback, ms, w, imp, E2E_BODY))

    rng = random.Random(345)
    for h, (count, n_mean, f_mean, s_mean, s_min, s_max, s_max_synth) in GROUPS.items():
        fixed: List[Tuple[str, float, float, float, bool]] = []  # id, native, fallback, ms, synthetic
        for tid, b, ms, per_branch, sp in REPRESENTATIVE:
            if b // C == h:
                native = per_branch * b
                fixed.append((tid, native, native * sp, ms, False))
        if h == 4:
            fixed.append((NT_328[0], NT_328[2], NT_328[3], 45.0, True))
        m = count - len(fixed)
        targets = synth_targets(
            m,
            count * n_mean - sum(f[1] for f in fixed),
            count * s_mean - sum(f[2] / f[1] for f in fixed),
            count * f_mean - sum(f[2] for f in fixed),
            s_min,
            s_max_synth or s_max,
        )
        for tid, native, fallback, ms, synthetic in fixed:
            problems.append(problem(tid, f"holes_{h}", synthetic, h, native, fallback, ms, HANDCRAFTED_WORKERS))
        for i, (native, fallback) in enumerate(targets, 1):
            ms = round(rng.uniform(25.0, 77.0), 1)
            problems.append(problem(f"synthetic_h{h}_{i:02d}", f"holes_{h}", True, h, native, fallback, ms, HANDCRAFTED_WORKERS))

    corpus = CorpusFile(
        defaults={
            "workers": HANDCRAFTED_WORKERS,
            "batchLatencySeconds": DEFAULT_BATCH_LATENCY,
            "dispatchOverheadFactor": DEFAULT_DISPATCH_FACTOR,
            "portfolio": list(DEFAULT_TACTICS),
        },
        problems=problems,
    )
    header = (
        "# Reference corpus: 3 end-to-end runs + 45 hand-crafted prove-phase problems.\n"
        "# Generated by scripts/build_paper_corpus.py; synthetic=true marks profiles whose\n"
        "# parameters were constructed to reproduce target group means rather than\n"
        "# taken from per-problem reference figures. Schema: see README.md.\n"
    )
    text = header + dump_corpus(corpus)
    parse_corpus(text)  # validates hole positions against the sketches
    OUT.write_text(text, encoding="utf-8")
    print(f"wrote {len(problems)} problems to {OUT}")


if __name__ == "__main__":
    main()
