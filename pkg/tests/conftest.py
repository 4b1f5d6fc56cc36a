import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from snapdsp.orchestrator import DEFAULT_TACTICS  # noqa: E402
from snapdsp.simserver import HoleSpec, TacticOutcome, TheoremProfile  # noqa: E402
from snapdsp.sketch import SketchDocument, find_sorry_positions, template_sketch  # noqa: E402


def make_problem(
    theorem_id="t",
    holes=1,
    *,
    oracle=None,
    import_s=60.0,
    body_s=15.0,
    fallback_s=75.0,
    session_s=0.0,
    env_gb=3.0,
    mctx_kb=8.0,
):
    """A (profile, sketch text) pair whose hole positions agree.

    ``oracle[k]`` maps tactic -> (closes, cpu_ms); tactics left out never close.
    """
    text = template_sketch(theorem_id, holes)
    sites = find_sorry_positions(SketchDocument(f"file:///sketches/{theorem_id}.lean", text))
    oracle = oracle or [{"omega": (True, 40.0)} for _ in sites]
    specs = tuple(
        HoleSpec(s.line, s.character, {t: TacticOutcome(c, ms) for t, (c, ms) in oracle[k].items()})
        for k, s in enumerate(sites)
    )
    profile = TheoremProfile(theorem_id, import_s, body_s, fallback_s, specs, session_s, env_gb, mctx_kb)
    return profile, text


def random_oracle(rng, holes, tactics=DEFAULT_TACTICS, p_close=0.3):
    return [{t: (rng.random() < p_close, round(rng.uniform(0, 500), 3)) for t in tactics} for _ in range(holes)]


@pytest.fixture
def rng():
    return random.Random(20240601)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
