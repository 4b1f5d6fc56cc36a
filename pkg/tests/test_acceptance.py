"""Acceptance criteria, one test each. Every test records a PASS/FAIL line that
is printed in the pytest terminal summary (and directly when run as a script)."""

import csv
import io
import math
import random
import re
import subprocess
import sys
import time

import pytest

from snapdsp import analytics as an
from snapdsp.bench import load_corpus, paper_corpus_path, run_suite
from snapdsp.orchestrator import DEFAULT_TACTICS, FallbackPlan, Mode, Portfolio, pool_makespan, run_prove_phase
from snapdsp.simserver import SimServer, fallback_peak_gb
from snapdsp.sketch import (
    SketchDocument,
    find_sorry_positions,
    header_span,
    splice_header,
    substitute_tactic,
    template_sketch,
)

from conftest import make_problem, random_oracle
from oracles import brute_force_sorry_offsets, event_trace_batch_wall, random_document, utf16_position

RESULTS = []


def record(number, title, checks):
    """``checks`` is a list of (description, ok). Records one line and asserts."""
    failed = [d for d, ok in checks if not ok]
    status = "PASS" if not failed else "FAIL"
    line = f"{status} criterion {number}: {title}"
    if failed:
        line += " | failing: " + "; ".join(failed)
    RESULTS.append(line)
    print(line)
    assert not failed, line


def within(actual, expected, rel):
    return abs(actual - expected) <= rel * abs(expected) + 1e-12


def cli(*args):
    proc = subprocess.run([sys.executable, "-m", "snapdsp.cli", *args], capture_output=True, text=True, check=False)
    return proc.returncode, proc.stdout


def csv_rows(text):
    return {r["theorem"]: r for r in csv.DictReader(io.StringIO(text))}


E2E = {
    "mathd_numbertheory_345": (132.8, 2641.4, 19.9),
    "mathd_numbertheory_3": (116.2, 1572.4, 13.5),
    "mathd_algebra_478": (119.9, 1579.6, 13.2),
}


def test_criterion_01_end_to_end_rows():
    t0 = time.perf_counter()
    code, out = cli("run", "--mode", "both", "--workers", "1", "--format", "csv")
    elapsed = time.perf_counter() - t0
    rows = csv_rows(out)
    checks = [("exit status 0", code == 0), (f"runtime {elapsed:.2f}s < 5s", elapsed < 5.0)]
    for tid, expected in E2E.items():
        r = rows[tid]
        actual = (float(r["native_s"]), float(r["fallback_s"]), float(r["speedup"]))
        for name, a, e in zip(("native", "fallback", "speedup"), actual, expected):
            checks.append((f"{tid} {name} {a} vs {e} (2%)", within(a, e, 0.02)))
    record(1, "end-to-end rows within 2%, under 5 s", checks)


def test_criterion_02_scaling_table():
    code, out = cli("project", "--format", "csv")
    rows = {int(r["B"]): r for r in csv.DictReader(io.StringIO(out))}
    measured = {21: (116, 1572, 13.5), 28: (120, 1580, 13.2), 35: (133, 2641, 19.9)}
    reference_projection = {14: (121, 1050, 8.7), 42: (122, 3150, 25.8), 56: (123, 4200, 34.3)}
    checks = [("exit status 0", code == 0)]
    for b, expected in measured.items():
        r = rows[b]
        checks.append((f"B={b} kind measured", r["kind"] == "measured"))
        for name, e in zip(("native_s", "fallback_s", "speedup"), expected):
            checks.append((f"B={b} {name} {r[name]} vs {e} (5%)", within(float(r[name]), e, 0.05)))
    for b, expected in reference_projection.items():
        r = rows[b]
        model = an.FITTED.with_branches(b)
        fitted = (120 + 0.045 * b, 75.0 * b, (75.0 * b) / (120 + 0.045 * b))
        for name, f, e, ours in zip(("native_s", "fallback_s", "speedup"), fitted, expected, (an.t_native(model), an.t_fallback(model), an.speedup(model))):
            got = float(r[name])
            checks.append((f"B={b} {name} {got} vs model {f:.3f} (2%)", within(got, f, 0.02) and within(ours, f, 1e-9)))
            checks.append((f"B={b} {name} {got} vs reference ~{e} (2%)", within(got, e, 0.02)))
    record(2, "scaling table: measured rows within 5%, projected rows within 2% of the fitted model", checks)


def test_criterion_03_crossover():
    code, out = cli("crossover", "--t-elab", "120", "--t-load", "75", "--t-tactic", "0.045")
    record(3, "crossover prints B=2", [(f"output {out.strip()!r}", code == 0 and out.strip() == "B=2")])


REPRESENTATIVE = {
    # theorem: (branches, tactic cpu ms, native seconds per branch)
    "mathd_numbertheory_3": (21, 44, 5.5),
    "mathd_numbertheory_345": (35, 39, 3.8),
    "mathd_algebra_478": (28, 64, 4.3),
    "algebra_sqineq_at2malt1": (14, 50, 5.7),
    "amc12b_2021_p3": (28, 54, 3.1),
    "mathd_algebra_137": (14, 62, 7.0),
    "mathd_algebra_171": (14, 31, 7.4),
    "mathd_algebra_176": (14, 25, 12.7),
    "mathd_algebra_33": (21, 46, 3.9),
    "mathd_algebra_398": (21, 51, 6.2),
    "mathd_algebra_419": (21, 28, 7.6),
    "mathd_numbertheory_12": (14, 54, 7.3),
    "mathd_numbertheory_175": (21, 32, 3.8),
    "mathd_numbertheory_299": (14, 27, 13.2),
    "mathd_numbertheory_353": (14, 39, 6.6),
    "mathd_numbertheory_447": (14, 77, 11.0),
}


def test_criterion_04_overhead_fraction():
    corpus = load_corpus(paper_corpus_path())
    by_id = {p.theorem_id: p for p in corpus.problems}
    rows = {r.theorem: r for r in run_suite(corpus, "both")}
    checks = [("16 representative profiles present", set(REPRESENTATIVE) <= set(by_id))]
    cpu_means, per_branch = [], []
    for tid, (b, cpu_ms, native_per_branch) in REPRESENTATIVE.items():
        row = rows[tid]
        prof = by_id[tid].profile
        cpus = [o.cpu_ms for h in prof.holes for o in h.tactic_outcomes.values()]
        cpu_means.append(sum(cpus) / len(cpus))
        per_branch.append(row.native_s / row.B)
        checks.append((f"{tid} B={row.B} expected {b}", row.B == b))
        checks.append((f"{tid} overhead {row.overhead_frac:.6f} >= 0.999", row.overhead_frac >= 0.999))
        checks.append((f"{tid} native/branch {row.native_s / row.B:.2f} vs {native_per_branch} (5%)", within(row.native_s / row.B, native_per_branch, 0.05)))
    avg_cpu = sum(cpu_means) / len(cpu_means)
    avg_nb = sum(per_branch) / len(per_branch)
    checks.append((f"average tactic cpu {avg_cpu:.2f} ms vs 45 (5%)", within(avg_cpu, 45, 0.05)))
    checks.append((f"average native/branch {avg_nb:.3f} s vs 6.8 (5%)", within(avg_nb, 6.8, 0.05)))
    record(4, "overhead fraction >= 0.999 on 16 profiles; averages 45 ms and 6.8 s within 5%", checks)


def test_criterion_05_level_comparison():
    code, out = cli("project", "--levels")
    value = {k: float(v) for k, v in re.findall(r"^(L0|L1|L2|L1\+2)\s+([\d.]+)", out, re.M)}
    back = int(re.search(r"= (\d+) s", out).group(1))
    checks = [
        ("exit status 0", code == 0),
        (f"L0 {value['L0']} vs 2641 measured (2%)", within(value["L0"], 2641, 0.02)),
        (f"L1 {value['L1']} vs ~330 estimated (10%)", within(value["L1"], 330, 0.10)),
        (f"L2 {value['L2']} vs 133 measured (2%)", within(value["L2"], 133, 0.02)),
        (f"L1+2 {value['L1+2']} vs ~17 estimated (10%)", within(value["L1+2"], 17, 0.10)),
        (f"footnote {back} == ceil(28/2)*(60+735)", back == math.ceil(28 / 2) * (60 + 735) == 11130),
        (f"footnote {back} vs 11127 (0.1%)", within(back, 11127, 0.001)),
    ]
    record(5, "level comparison and footnote back-computation", checks)


def test_criterion_06_drafts_projection():
    code, out = cli("project", "--drafts")
    fallback = float(re.search(r"fallback_hours\(W=2\)=([\d.]+)", out).group(1))
    native = float(re.search(r"native_hours=([\d.]+)", out).group(1))
    exact = math.ceil(2800 / 2) * 75 / 3600
    checks = [
        ("exit status 0", code == 0),
        (f"fallback {fallback} h == ceil(2800/2)*75 s", abs(fallback - exact) < 0.005),
        (f"fallback {fallback} h vs 29 (5%)", within(fallback, 29, 0.05)),
        (f"native {native} h vs 3.4 (5%)", within(native, 3.4, 0.05)),
    ]
    record(6, "many-drafts projection 29 h / 3.4 h", checks)


def test_criterion_07_oracle_equivalence():
    rng = random.Random(7)
    checks = []
    mismatches = bound_violations = 0
    n = 150
    for trial in range(n):
        h = rng.randint(1, 5)
        w = rng.randint(1, 4)
        profile, text = make_problem(
            f"acc{trial}",
            holes=h,
            oracle=random_oracle(rng, h, p_close=rng.choice([0.1, 0.3, 0.6])),
            import_s=rng.uniform(5, 90),
            body_s=rng.uniform(0, 60),
            fallback_s=rng.uniform(95, 300),
            session_s=rng.uniform(0, 60),
        )
        native = run_prove_phase(profile, text, seed=trial)
        fallback = run_prove_phase(profile, text, mode=Mode.FALLBACK, workers=w)
        if native.proved != fallback.proved or native.closing_sets() != fallback.closing_sets():
            mismatches += 1
        d = fallback.branch_seconds
        if fallback.wall_seconds < sum(d) / w - 1e-9 or fallback.wall_seconds < max(d) - 1e-9 or abs(fallback.wall_seconds - pool_makespan(d, w)) > 1e-6:
            bound_violations += 1
    checks.append((f"{mismatches}/{n} native/fallback result mismatches", mismatches == 0))
    checks.append((f"{bound_violations}/{n} makespan bound violations", bound_violations == 0))

    batch_errors = 0
    for _ in range(150):
        k = rng.randint(1, 10)
        cpus_ms = [rng.uniform(0, 900) for _ in range(k)]
        tactics = [f"t{i}" for i in range(k)]
        profile, text = make_problem("b", oracle=[{t: (rng.random() < 0.5, ms) for t, ms in zip(tactics, cpus_ms)}])
        server = SimServer([profile], batch_latency=1.0)
        server.handle_open_document("file:///sketches/b.lean", text)
        hole = profile.holes[0]
        snap = server.handle_capture("file:///sketches/b.lean", hole.line, hole.character)[0]["snapshotId"]
        _, wall = server.evaluate_branches(snap, [{"tactic": t} for t in tactics])
        expected = event_trace_batch_wall(1.0, 1.2, [ms / 1000 for ms in cpus_ms])
        if abs(wall - expected) > 1e-9 or abs(wall - (1.0 + 1.2 * max(cpus_ms) / 1000)) > 1e-9:
            batch_errors += 1
    checks.append((f"{batch_errors}/150 batch wall mismatches against the event-trace oracle", batch_errors == 0))
    record(7, "native/fallback equivalence, makespan bounds, batch wall oracle", checks)


def test_criterion_08_memory_model():
    checks = []
    peaks = {}
    for b in (7, 14, 35):
        h = b // 7
        oracle = [{t: (False, 45.0) for t in DEFAULT_TACTICS}] * h
        profile, text = make_problem("m", holes=h, oracle=oracle, body_s=0.0, env_gb=3.0, mctx_kb=8.0)
        out = run_prove_phase(profile, text)
        peaks[b] = out.peak_mem_gb
        checks.append((f"B={b} native peak {out.peak_mem_gb} == 3 + B*8e-6", abs(out.peak_mem_gb - (3.0 + b * 8e-6)) < 1e-12))
    slope_a = (peaks[14] - peaks[7]) / 7
    slope_b = (peaks[35] - peaks[14]) / 21
    checks.append((f"affine slope {slope_a:.3e} / {slope_b:.3e} == mctxKB 8e-6 GB", abs(slope_a - 8e-6) < 1e-12 and abs(slope_b - 8e-6) < 1e-12))
    checks.append(("intercept is envGB", abs(peaks[7] - 7 * slope_a - 3.0) < 1e-12))
    for w, h in ((1, 5), (2, 5), (4, 5), (8, 1)):
        prof, txt = make_problem("f", holes=h, oracle=[{}] * h)
        # the last case has fewer branches than workers
        portfolio = Portfolio(DEFAULT_TACTICS[:3]) if w == 8 else Portfolio()
        out = run_prove_phase(prof, txt, portfolio, Mode.FALLBACK, workers=w)
        b = out.branch_count
        checks.append((f"W={w} B={b} fallback peak {out.peak_mem_gb} == min(W,B)*3", out.peak_mem_gb == min(w, b) * 3.0 == fallback_peak_gb(w, b)))
    checks.append((f"8 GB RAM -> W={FallbackPlan.from_ram(8).workers}", FallbackPlan.from_ram(8).workers == 2))
    record(8, "memory model: affine native peak, min(W,B)*3 GB fallback, W=2 at 8 GB", checks)


FORMAL_478 = (
    "theorem mathd_algebra_478 (b h v : ℝ) (h₀ : 0 < b ∧ 0 < h ∧ 0 < v) (h₁ : v = 1 / 3 * (b * h))\n"
    "    (h₂ : b = 30) (h₃ : h = 13 / 2) : v = 65 := by\n  sorry\n"
)


def test_criterion_09_parser_suite():
    rng = random.Random(2024)
    disagreements = 0
    for _ in range(1000):
        text = random_document(rng)
        got = [(s.line, s.character) for s in find_sorry_positions(SketchDocument("file:///g.lean", text))]
        if got != [utf16_position(text, o) for o in brute_force_sorry_offsets(text)]:
            disagreements += 1
    checks = [(f"{disagreements}/1000 scanner disagreements", disagreements == 0)]

    body_changes = count_errors = 0
    for trial in range(200):
        h = rng.randint(1, 5)
        sketch = template_sketch("t", h, header="theorem t (h1 : 0 < 1) (x : ℕ) :\n    x + 0 = x := by")
        spliced = splice_header("theorem t (h₁ : 0 < 1) (x : ℕ) :\n    x + 0 = x := by sorry", sketch)
        if spliced.text[header_span(spliced.text)[1]:] != sketch[header_span(sketch)[1]:]:
            body_changes += 1
        k = rng.randint(0, h)
        doc = spliced
        for site in list(reversed(find_sorry_positions(doc)))[:k]:
            doc = substitute_tactic(doc, site, rng.choice(DEFAULT_TACTICS))
        if len(find_sorry_positions(doc)) != h - k:
            count_errors += 1
    checks.append((f"{body_changes}/200 splices changed the body", body_changes == 0))
    checks.append((f"{count_errors}/200 substitution count errors", count_errors == 0))

    mangled = FORMAL_478.replace("h₀", "h0").replace("h₁", "h1").replace("h₂", "h2").replace("h₃", "h3")
    restored = splice_header(FORMAL_478, mangled).text
    checks.append(("h₁-mangled header restored byte-exactly", restored.encode("utf-8") == FORMAL_478.encode("utf-8")))
    record(9, "scanner oracle on 1000 documents, splice/substitute invariants, h₁ restoration", checks)


def test_criterion_10_determinism():
    checks = []
    for args in (("run", "--format", "csv"), ("run", "--format", "csv", "--seed", "5", "--jitter", "0.25"), ("run", "--mode", "fallback", "--workers", "1")):
        first = cli(*args)
        second = cli(*args)
        checks.append((f"{' '.join(args)} byte-identical", first == second and first[0] == 0))
    record(10, "suite runs are byte-identical across executions", checks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
