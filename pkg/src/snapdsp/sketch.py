"""Locating and rewriting ``sorry`` holes in Lean sketch sources.

Columns are reported in UTF-16 code units by default, as LSP expects; pass
``encoding="utf-32"`` to count Unicode scalar values instead.

The scanner understands line comments, nested block comments and string
literals. Character literals are not recognised (``'`` is an identifier
character in Lean).
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass
from typing import Iterator, List, Tuple

UTF16 = "utf-16"
UTF32 = "utf-32"

_TOKEN = re.compile(
    r"""
      (?P<line_comment>--[^\n]*)
    | (?P<block_open>/-)
    | (?P<string>"(?:[^"\\]|\\.)*(?:"|\\?\Z))
    | (?P<ident>[\w']+)
    | (?P<assign>:=)
    | (?P<other>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_OPENERS = "([{⦃⟨"
_CLOSERS = ")]}⦄⟩"


class SketchError(Exception):
    pass


class NoTheoremFound(SketchError):
    pass


class MultipleTheorems(SketchError):
    pass


class UndelimitedHeader(SketchError):
    pass


class StaleSite(SketchError):
    pass


def _units(s: str, encoding: str) -> int:
    if encoding == UTF16:
        return sum(2 if ord(c) > 0xFFFF else 1 for c in s)
    if encoding == UTF32:
        return len(s)
    raise ValueError(f"unsupported position encoding {encoding!r}")


@dataclass(frozen=True)
class SketchDocument:
    uri: str
    text: str
    encoding: str = UTF16

    @property
    def line_index(self) -> Tuple[int, ...]:
        starts = [0]
        starts.extend(m.end() for m in re.finditer("\n", self.text))
        return tuple(starts)

    def position_of(self, offset: int) -> Tuple[int, int]:
        """(line, character) of a string offset."""
        starts = self.line_index
        line = bisect.bisect_right(starts, offset) - 1
        return line, _units(self.text[starts[line]:offset], self.encoding)

    def offset_of(self, line: int, character: int) -> int:
        starts = self.line_index
        if not 0 <= line < len(starts):
            raise IndexError(f"line {line} out of range")
        offset = starts[line]
        end = starts[line + 1] if line + 1 < len(starts) else len(self.text)
        seen = 0
        while seen < character:
            if offset >= end:
                raise IndexError(f"character {character} beyond end of line {line}")
            seen += _units(self.text[offset], self.encoding)
            offset += 1
        if seen != character:
            raise IndexError(f"character {character} splits a surrogate pair")
        return offset


@dataclass(frozen=True)
class SorrySite:
    line: int
    character: int
    hole_index: int


def _skip_block_comment(text: str, pos: int) -> int:
    """``pos`` is just past an opening ``/-``; return the offset after its matching ``-/``."""
    depth = 1
    while depth:
        opening = text.find("/-", pos)
        closing = text.find("-/", pos)
        if closing < 0:
            return len(text)
        if 0 <= opening < closing:
            depth += 1
            pos = opening + 2
        else:
            depth -= 1
            pos = closing + 2
    return pos


def code_tokens(text: str) -> Iterator[Tuple[str, int, str]]:
    """Yield (kind, offset, lexeme) for tokens outside comments and strings."""
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        kind = m.lastgroup
        if kind == "block_open":
            pos = _skip_block_comment(text, m.end())
            continue
        if kind not in ("line_comment", "string"):
            lexeme = m.group()
            if kind != "other" or not lexeme.isspace():
                yield kind, m.start(), lexeme
        pos = m.end()


def _sorry_offsets(text: str) -> List[int]:
    return [off for kind, off, lexeme in code_tokens(text) if kind == "ident" and lexeme == "sorry"]


def find_sorry_positions(doc: SketchDocument) -> List[SorrySite]:
    sites = []
    for k, off in enumerate(_sorry_offsets(doc.text)):
        line, character = doc.position_of(off)
        sites.append(SorrySite(line, character, k))
    return sites


def header_span(text: str) -> Tuple[int, int]:
    """Offsets of the single theorem header: ``theorem`` keyword through the
    first ``:=`` at bracket depth zero."""
    tokens = list(code_tokens(text))
    starts = [i for i, (kind, _, lexeme) in enumerate(tokens) if kind == "ident" and lexeme == "theorem"]
    if not starts:
        raise NoTheoremFound("no theorem declaration")
    if len(starts) > 1:
        raise MultipleTheorems(f"{len(starts)} theorem declarations")
    i = starts[0]
    depth = 0
    for kind, off, lexeme in tokens[i + 1:]:
        if kind == "other":
            if lexeme in _OPENERS:
                depth += 1
            elif lexeme in _CLOSERS:
                depth -= 1
        elif kind == "assign" and depth == 0:
            return tokens[i][1], off + 2
    raise UndelimitedHeader("theorem header has no ':=' at depth zero")


def splice_header(formal_statement: str, llm_sketch: str, uri: str = "file:///sketch.lean") -> SketchDocument:
    """Replace the sketch's theorem header with the original statement's, byte for byte."""
    src_start, src_end = header_span(formal_statement)
    dst_start, dst_end = header_span(llm_sketch)
    text = llm_sketch[:dst_start] + formal_statement[src_start:src_end] + llm_sketch[dst_end:]
    return SketchDocument(uri, text)


def substitute_tactic(doc: SketchDocument, site: SorrySite, tactic: str) -> SketchDocument:
    """Replace the ``sorry`` at ``site`` with ``tactic``; other holes are untouched."""
    try:
        offset = doc.offset_of(site.line, site.character)
    except IndexError as exc:
        raise StaleSite(str(exc)) from exc
    if offset not in _sorry_offsets(doc.text):
        raise StaleSite(f"no sorry token at {site.line}:{site.character}")
    text = doc.text[:offset] + tactic + doc.text[offset + len("sorry"):]
    return SketchDocument(doc.uri, text, doc.encoding)


SKETCH_PREAMBLE = """import Mathlib
import Aesop

set_option maxHeartbeats 400000

open BigOperators Real Nat Topology Rat

"""


def template_sketch(theorem_id: str, hole_count: int, header: str | None = None) -> str:
    """A well-formed sketch with ``hole_count`` holes: ``hole_count - 1``
    intermediate ``have`` steps and a closing ``sorry``."""
    if hole_count < 1:
        raise ValueError("a sketch needs at least one hole")
    if header is None:
        header = f"theorem {theorem_id} (n : ℕ) (h₀ : 0 < n) :\n    n % 1 = 0 := by"
    body = [f"  have step{k + 1} : ({k} : ℕ) + 0 = {k} := by sorry" for k in range(hole_count - 1)]
    body.append("  sorry")
    return SKETCH_PREAMBLE + f"/-- sketch for `{theorem_id}` -/\n" + header + "\n" + "\n".join(body) + "\n"
