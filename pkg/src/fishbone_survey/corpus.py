"""Corpus loading, topic filtering and introduction extraction.

Corpus files are UTF-8 JSON lines, one paper per line::

    {"paper_id": "p1", "title": "...", "sections": [{"heading": "1. Introduction", "text": "..."}]}

``sections`` entries may also be ``[heading, text]`` pairs.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError

log = logging.getLogger(__name__)

# "1.", "1.2", "I.", "IV)", "A." ... followed by separators
_NUMBERING = re.compile(r"^\s*(?:(?:\d+(?:\.\d+)*|[ivxlcdm]+|[a-z])[.)]?\s+|\d+(?:\.\d+)*[.)]?)")


@dataclass(frozen=True)
class PaperRecord:
    paper_id: str
    title: str
    sections: tuple[tuple[str, str], ...]
    source_path: str = ""

    def __post_init__(self):
        if not self.paper_id:
            raise DataError("paper_id must be non-empty")

    def to_dict(self) -> dict:
        return {
            "paper_id": self.paper_id,
            "title": self.title,
            "sections": [{"heading": h, "text": t} for h, t in self.sections],
        }


@dataclass(frozen=True)
class TopicFilter:
    keyword: str
    case_sensitive: bool = False

    def __post_init__(self):
        if not self.keyword or self.keyword != self.keyword.strip():
            raise DataError(f"invalid topic keyword {self.keyword!r}: must be non-empty without surrounding whitespace")

    def matches(self, record: PaperRecord) -> bool:
        fields = [record.title] + [text for _, text in record.sections]
        if self.case_sensitive:
            return any(self.keyword in f for f in fields)
        needle = self.keyword.casefold()
        return any(needle in f.casefold() for f in fields)


def _parse_sections(raw) -> tuple[tuple[str, str], ...]:
    if not isinstance(raw, list):
        raise ValueError("sections must be a list")
    out = []
    for item in raw:
        if isinstance(item, dict):
            heading, text = item["heading"], item["text"]
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            heading, text = item
        else:
            raise ValueError(f"bad section entry {item!r}")
        if not isinstance(heading, str) or not isinstance(text, str):
            raise ValueError("section heading and text must be strings")
        out.append((heading, text))
    return tuple(out)


def parse_record(line: str, source_path: str = "") -> PaperRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    paper_id, title = obj["paper_id"], obj["title"]
    if not isinstance(paper_id, str) or not paper_id or not isinstance(title, str):
        raise ValueError("paper_id/title must be strings and paper_id non-empty")
    return PaperRecord(paper_id, title, _parse_sections(obj["sections"]), source_path)


def load_corpus(path, warnings: list | None = None) -> Iterator[PaperRecord]:
    """Yield records from a JSON-lines corpus, skipping malformed or duplicate lines.

    Each skipped line is logged and, if ``warnings`` is given, appended to it as text.
    Blank lines are ignored silently.
    """
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    seen: set[str] = set()
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = parse_record(line, str(path))
            except (ValueError, KeyError, TypeError, DataError) as exc:
                msg = f"{path}:{lineno}: skipping malformed record ({exc})"
                log.warning(msg)
                if warnings is not None:
                    warnings.append(msg)
                continue
            if record.paper_id in seen:
                msg = f"{path}:{lineno}: skipping duplicate paper_id {record.paper_id!r}"
                log.warning(msg)
                if warnings is not None:
                    warnings.append(msg)
                continue
            seen.add(record.paper_id)
            yield record


def write_corpus(records: Iterable[PaperRecord], path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def filter_by_topic(records: Iterable[PaperRecord], topic: TopicFilter) -> Iterator[PaperRecord]:
    return (r for r in records if topic.matches(r))


def normalize_heading(heading: str) -> str:
    h = heading.strip().lower()
    h = _NUMBERING.sub("", h, count=1)
    return h.strip(" \t.:-)")


def extract_introduction(record: PaperRecord) -> str | None:
    """Text of the first section titled "introduction" once numbering is stripped, else None."""
    for heading, text in record.sections:
        if normalize_heading(heading) == "introduction":
            return text
    return None
