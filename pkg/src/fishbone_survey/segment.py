"""Rule-based sentence segmentation tuned for scientific introductions."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

TERMINALS = ".?!"
CLOSERS = "\"')]}”’"
OPENERS = "\"'([{“‘"
_BRACKETS = {"(": ")", "[": "]", "{": "}"}

# lowercased tokens (leading brackets removed) that never end a sentence
ABBREVIATIONS = frozenset({
    "al.", "e.g.", "i.e.", "fig.", "figs.", "eq.", "eqs.", "vs.", "cf.", "sec.", "secs.",
    "tab.", "ref.", "refs.", "no.", "nos.", "approx.", "resp.", "dr.", "mr.", "mrs.", "ms.",
    "prof.", "st.", "ch.", "vol.", "pp.", "viz.", "esp.", "incl.", "w.r.t.", "a.k.a.",
})
_INITIALS = re.compile(r"^(?:[A-Z]\.)+$")


@dataclass(frozen=True)
class Sentence:
    paper_id: str
    index: int
    text: str


@dataclass(frozen=True)
class SegmentationOverride:
    paper_id: str
    replacement: tuple[str, ...]

    def __post_init__(self):
        if not self.replacement:
            raise ConfigError(f"override for {self.paper_id!r} has an empty sentence list")


def _is_abbreviation(text: str, end: int) -> bool:
    """True if the token ending at ``text[end]`` (a period) is a known abbreviation or an initial."""
    start = end
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    token = text[start:end + 1].lstrip(OPENERS)
    if token.lower() in ABBREVIATIONS:
        return True
    return bool(_INITIALS.match(token))


def _starts_sentence(text: str, pos: int) -> bool:
    while pos < len(text) and text[pos] in OPENERS:
        pos += 1
    return pos < len(text) and (text[pos].isupper() or text[pos].isdigit())


def segment(text: str) -> list[str]:
    """Split ``text`` into trimmed sentences.

    A boundary is a run of ``.?!`` (plus closing quotes/brackets) followed by
    whitespace and a capital letter or digit, unless the period closes an
    abbreviation or initial, or a bracket or quote is still open.
    """
    sentences = []
    depth = 0
    in_quote = False
    start = 0
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in _BRACKETS:
            depth += 1
        elif ch in ")]}":
            depth = max(depth - 1, 0)
        elif ch == '"':
            in_quote = not in_quote
        elif ch == "“":
            in_quote = True
        elif ch == "”":
            in_quote = False
        if ch not in TERMINALS:
            i += 1
            continue
        j = i
        while j < n and text[j] in TERMINALS:
            j += 1
        last = j - 1
        while j < n and text[j] in CLOSERS:
            c = text[j]
            if c in ")]}":
                depth = max(depth - 1, 0)
            elif c == '"':
                in_quote = not in_quote
            elif c == "”":
                in_quote = False
            j += 1
        boundary = (
            j < n and text[j].isspace()
            and depth == 0 and not in_quote
            and not (text[last] == "." and j - 1 == last and _is_abbreviation(text, last))
        )
        if boundary:
            k = j
            while k < n and text[k].isspace():
                k += 1
            if _starts_sentence(text, k):
                piece = text[start:j].strip()
                if piece:
                    sentences.append(piece)
                start = k
        i = j
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def segment_paper(paper_id: str, text: str) -> list[Sentence]:
    return [Sentence(paper_id, i, s) for i, s in enumerate(segment(text))]


def load_overrides(path) -> list[SegmentationOverride]:
    """Read ``{"paper_id": ["sentence", ...], ...}`` from a JSON file."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read overrides {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"overrides file {path} must map paper_id to a sentence list")
    out = []
    for pid, sents in raw.items():
        if not isinstance(sents, list) or not all(isinstance(s, str) for s in sents):
            raise ConfigError(f"override for {pid!r} must be a list of strings")
        out.append(SegmentationOverride(pid, tuple(s.strip() for s in sents if s.strip())))
    return out


def apply_overrides(
    sentences: Mapping[str, Sequence[Sentence]],
    overrides: Iterable[SegmentationOverride],
    warnings: list | None = None,
) -> dict[str, list[Sentence]]:
    by_paper: dict[str, SegmentationOverride] = {}
    for ov in overrides:
        if ov.paper_id in by_paper:
            raise ConfigError(f"duplicate segmentation override for paper {ov.paper_id!r}")
        by_paper[ov.paper_id] = ov
    out = {pid: list(sents) for pid, sents in sentences.items()}
    for pid, ov in by_paper.items():
        if pid not in out:
            msg = f"segmentation override for unknown paper {pid!r} ignored"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        out[pid] = [Sentence(pid, i, s) for i, s in enumerate(ov.replacement)]
    return out


def prelude_sentences(
    sentences: Mapping[str, Sequence[Sentence]], k: int = 2, warnings: list | None = None
) -> dict[str, list[Sentence]]:
    """Leading ``k`` sentences of every paper, the positional stand-in for the prelude issue."""
    if k < 1:
        raise ConfigError(f"prelude size must be >= 1, got {k}")
    out = {}
    for pid, sents in sentences.items():
        if not sents:
            msg = f"paper {pid!r} has no sentences; excluded from prelude selection"
            log.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        out[pid] = list(sents[:k])
    return out


def check_indices(sentences: Mapping[str, Sequence[Sentence]]) -> None:
    for pid, sents in sentences.items():
        for expected, s in enumerate(sents):
            if s.index != expected or s.paper_id != pid:
                raise DataError(f"sentence indices for paper {pid!r} are not contiguous from 0")
