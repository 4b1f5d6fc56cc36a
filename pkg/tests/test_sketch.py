import random

import pytest
from hypothesis import given, strategies as st

from snapdsp.sketch import (
    UTF16,
    UTF32,
    MultipleTheorems,
    NoTheoremFound,
    SketchDocument,
    StaleSite,
    UndelimitedHeader,
    find_sorry_positions,
    header_span,
    splice_header,
    substitute_tactic,
    template_sketch,
)

from oracles import brute_force_sorry_offsets, random_document, utf16_position


def sites(text):
    return [(s.line, s.character) for s in find_sorry_positions(SketchDocument("file:///a.lean", text))]


def test_single_hole():
    assert sites("theorem t : 1 = 1 := by sorry") == [(0, 24)]


def test_line_comment_excluded():
    assert sites("-- sorry\nexample := by sorry") == [(1, 14)]


def test_no_sorry():
    assert sites("theorem t : True := trivial") == []


@pytest.mark.parametrize(
    "text, expected",
    [
        ("/- sorry /- sorry -/ sorry -/ sorry", [(0, 30)]),
        ('"sorry" sorry', [(0, 8)]),
        ('"a \\" sorry" sorry', [(0, 13)]),
        ("sorryAx sorry' h₁sorry sorry₁ x.sorry", [(0, 32)]),
        ("sorry", [(0, 0)]),
    ],
)
def test_token_boundaries(text, expected):
    assert sites(text) == expected


def test_utf16_columns():
    # 𝔽 is one scalar but two UTF-16 code units
    text = "𝔽 sorry"
    assert sites(text) == [(0, 3)]
    doc = SketchDocument("file:///a.lean", text, UTF32)
    assert [(s.line, s.character) for s in find_sorry_positions(doc)] == [(0, 2)]


def test_position_offset_inverse():
    text = "a𝔽\nℝ sorry\n\nx"
    for enc in (UTF16, UTF32):
        doc = SketchDocument("file:///a.lean", text, enc)
        for off in range(len(text) + 1):
            assert doc.offset_of(*doc.position_of(off)) == off


def test_scanner_matches_oracle_on_1000_documents():
    rng = random.Random(99)
    for _ in range(1000):
        text = random_document(rng)
        expected = [utf16_position(text, o) for o in brute_force_sorry_offsets(text)]
        assert sites(text) == expected, repr(text)


FORMAL = "theorem mathd_algebra_478 (b h v : ℝ) (h₀ : 0 < b ∧ 0 < h ∧ 0 < v) (h₁ : v = 1 / 3 * (b * h))\n    (h₂ : b = 30) (h₃ : h = 13 / 2) : v = 65 :="
MANGLED = (
    "import Mathlib\n\n"
    "theorem mathd_algebra_478 (b h v : ℝ) (h0 : 0 < b ∧ 0 < h ∧ 0 < v) (h1 : v = 1 / 3 * (b * h))\n"
    "    (h2 : b = 30) (h3 : h = 13 / 2) : v = 65 := by\n"
    "  rw [h2, h3] at h1\n  sorry\n"
)


def test_splice_restores_unicode_header():
    doc = splice_header(FORMAL + " by\n  sorry", MANGLED)
    start, end = header_span(doc.text)
    assert doc.text[start:end] == FORMAL
    assert "(h₁ : v = 1 / 3 * (b * h))" in doc.text
    assert doc.text.encode("utf-8").count(FORMAL.encode("utf-8")) == 1
    # body after the delimiter untouched
    assert doc.text[end:] == MANGLED[header_span(MANGLED)[1]:]


def test_splice_identical_header_is_identity():
    text = template_sketch("t", 3)
    assert splice_header(text, text).text == text


def test_splice_errors():
    with pytest.raises(MultipleTheorems):
        splice_header(FORMAL, "theorem a : True := by sorry\ntheorem b : True := by sorry")
    with pytest.raises(NoTheoremFound):
        header_span("lemma x : True := trivial")
    with pytest.raises(UndelimitedHeader):
        header_span("theorem x : True")


def test_header_ignores_nested_assign():
    text = "theorem t (f : ℕ → ℕ := fun x => x) : f 0 = 0 := by sorry"
    start, end = header_span(text)
    assert text[start:end].endswith("f 0 = 0 :=")


def test_header_ignores_theorem_in_comment():
    text = "-- theorem fake : False :=\n/- theorem x -/ theorem t : True := by sorry"
    assert header_span(text)[0] == text.index("theorem t")


def doc_with(n):
    return SketchDocument("file:///a.lean", template_sketch("t", n))


def test_substitute_keeps_other_holes():
    doc = doc_with(2)
    s0, s1 = find_sorry_positions(doc)
    after = find_sorry_positions(substitute_tactic(doc, s0, "norm_num"))
    assert [(s.line, s.character) for s in after] == [(s1.line, s1.character)]


def test_stale_site():
    doc = doc_with(2)
    s0 = find_sorry_positions(doc)[0]
    edited = SketchDocument(doc.uri, doc.text.replace("  have", "have", 1))
    with pytest.raises(StaleSite):
        substitute_tactic(edited, s0, "omega")
    with pytest.raises(StaleSite):
        substitute_tactic(doc, type(s0)(999, 0, 0), "omega")


def test_substitute_all_reaches_fixpoint():
    doc = doc_with(5)
    for site in reversed(find_sorry_positions(doc)):
        doc = substitute_tactic(doc, site, "omega")
    assert find_sorry_positions(doc) == []
    assert brute_force_sorry_offsets(doc.text) == []


@given(st.integers(1, 6), st.data())
def test_substitution_count(h, data):
    doc = doc_with(h)
    all_sites = find_sorry_positions(doc)
    k = data.draw(st.integers(0, h))
    chosen = sorted(data.draw(st.permutations(all_sites))[:k], key=lambda s: (s.line, s.character), reverse=True)
    for site in chosen:
        doc = substitute_tactic(doc, site, data.draw(st.sampled_from(["omega", "norm_num", "simp [h₀]"])))
    assert len(find_sorry_positions(doc)) == h - k


@given(st.text(alphabet="abch₁₂ ()\n:", max_size=40))
def test_splice_preserves_body(tail):
    sketch = "theorem t (h1 : 1 = 1) : True := by" + tail
    doc = splice_header("theorem t (h₁ : 1 = 1) : True :=", sketch)
    assert doc.text.endswith(" by" + tail)
    assert doc.text.startswith("theorem t (h₁ : 1 = 1) : True :=")


def test_template_hole_count():
    for n in range(1, 6):
        assert len(find_sorry_positions(doc_with(n))) == n
    with pytest.raises(ValueError):
        template_sketch("t", 0)
