"""Task names, fine-bone themes and issue-group summaries from a chat model or an offline stub."""
from __future__ import annotations

import enum
import hashlib
import logging
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import requests

from .errors import ConfigError, ProviderError

log = logging.getLogger(__name__)

TASK_WORD_LIMIT = 5
THEME_WORD_LIMIT = 5
SUMMARY_WORD_LIMIT = 25


class PromptId(str, enum.Enum):
    TASK_NAME = "TaskName"
    THEMES = "Themes"
    GROUP_SUMMARY = "GroupSummary"


PROMPTS = {
    PromptId.TASK_NAME: (
        "Find a theme for the following text, and the generated theme is limited to within 5 words."
        "\n\n{text}"
    ),
    PromptId.THEMES: (
        "Your task is to find {n} themes for the following text, Limit each theme to 5 words"
        "\n\n{text}"
    ),
    PromptId.GROUP_SUMMARY: (
        "Generate a brief summary of the following group of sentences in at most 25 words."
        "\n\n{text}"
    ),
}

STOP_WORDS = frozenset("""
a about above across after again against all almost also although always am among an and another any
are around as at be became because been before being below between both but by can cannot could did
do does doing done down during each either else enough etc even ever every few for from further had
has have having he her here hers herself him himself his how however i if in into is it its itself
just least less like made make many may me might more most much must my myself neither no nor not now
of off often on once one only or other others our ours ourselves out over own per perhaps rather
really same several she should since so some still such than that the their theirs them themselves
then there therefore these they this those though through thus to too toward towards under until up
upon us use used uses using very via was we well were what when where whether which while who whom
whose why will with within without would yet you your yours yourself yourselves
""".split())

_WORD = re.compile(r"[^\W_]+")
_QUOTES = "\"'`“”‘’«»"
_TRAILING = ".,;:!?-\u2013\u2014\u2026" + _QUOTES
_ITEM_PREFIX = re.compile(r"^\s*(?:[-*•]+|\(?\d+[.):]|\(?[a-z][.)])\s*", re.IGNORECASE)


def render_prompt(pid: PromptId, text: str, n: int = 1) -> str:
    return PROMPTS[pid].format(text=text, n=n)


def enforce_word_limit(text: str, limit: int) -> str:
    """Strip surrounding quotes and trailing punctuation, then keep the first ``limit`` words."""
    if limit < 1:
        raise ConfigError(f"word limit must be >= 1, got {limit}")

    def clean(s: str) -> str:
        s = s.strip()
        prev = None
        while s != prev:
            prev = s
            s = s.strip().strip(_QUOTES).rstrip(_TRAILING).strip()
        return s

    words = clean(text).split()
    return clean(" ".join(words[:limit]))


def ranked_terms(text: str) -> list[str]:
    """Content words by descending frequency, ties alphabetical."""
    counts = Counter(w for w in _WORD.findall(text.lower()) if w not in STOP_WORDS and not w.isdigit())
    return [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


def stub_task_name(text: str) -> str:
    return " ".join(ranked_terms(text)[:TASK_WORD_LIMIT])


def stub_themes(text: str, n: int) -> list[str]:
    """Deal ranked terms round-robin into ``n`` themes; themes left empty become "theme <i>"."""
    terms = ranked_terms(text)
    themes = []
    for i in range(n):
        words = terms[i::n][:THEME_WORD_LIMIT]
        themes.append(" ".join(words) if words else f"theme {i + 1}")
    return themes


def stub_summary(sentences: Sequence[str]) -> str:
    first = enforce_word_limit(sentences[0], SUMMARY_WORD_LIMIT)
    if len(sentences) == 1:
        return first
    keys = ranked_terms(" ".join(sentences))[:3]
    return enforce_word_limit(f"{first}; key terms: {', '.join(keys)}", SUMMARY_WORD_LIMIT)


class StubChatProvider:
    """Deterministic offline provider; output depends only on (prompt id, text, n)."""

    kind = "stub"
    provider_id = "stub-tf-v1"

    def __init__(self):
        self.calls = 0

    def complete(self, pid: PromptId, text: str, n: int = 1) -> str:
        self.calls += 1
        if pid is PromptId.TASK_NAME:
            return stub_task_name(text)
        if pid is PromptId.THEMES:
            return "\n".join(f"{i}. {t}" for i, t in enumerate(stub_themes(text, n), 1))
        return stub_summary([s for s in text.split("\n") if s.strip()] or [""])


@dataclass
class SummarizerProviderConfig:
    kind: str = "stub"
    endpoint: str | None = None
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_retries: int = 2
    backoff: float = 0.5
    timeout: float = 60.0
    token_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        if self.kind not in ("stub", "remote"):
            raise ConfigError(f"unknown summarizer provider kind {self.kind!r}")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.kind == "remote" and not self.endpoint:
            raise ConfigError("remote summarizer needs an endpoint")


class RemoteChatProvider:
    """Chat-completions client with retries and a prompt-hash keyed response cache."""

    kind = "remote"

    def __init__(self, cfg: SummarizerProviderConfig, cache_dir=None, session: requests.Session | None = None):
        self.cfg = cfg
        self.provider_id = f"remote:{cfg.model}"
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.session = session or requests.Session()
        self.calls = 0
        self.cache_hits = 0
        self.retries = 0
        self._lock = threading.Lock()

    def prompt_hash(self, prompt: str) -> str:
        key = f"{self.cfg.model}\0{self.cfg.temperature}\0{prompt}"
        return hashlib.sha256(key.encode("utf-8")).hexdigest()

    def _chat(self, prompt: str) -> str:
        token = os.environ.get(self.cfg.token_env)
        if not token:
            raise ProviderError(f"environment variable {self.cfg.token_env} is not set")
        body = {"model": self.cfg.model, "messages": [{"role": "user", "content": prompt}],
                "temperature": self.cfg.temperature}
        last: Exception | None = None
        attempts = self.cfg.max_retries + 1
        for attempt in range(attempts):
            if attempt:
                with self._lock:
                    self.retries += 1
                time.sleep(self.cfg.backoff * 2 ** (attempt - 1))
            with self._lock:
                self.calls += 1
            try:
                resp = self.session.post(self.cfg.endpoint, json=body, timeout=self.cfg.timeout,
                                         headers={"Authorization": f"Bearer {token}"})
                resp.raise_for_status()
                content = resp.json()["choices"][0]["message"]["content"]
                if not isinstance(content, str):
                    raise ValueError("response content is not text")
                return content
            except (requests.RequestException, ValueError, KeyError, IndexError, TypeError) as exc:
                last = exc
        raise ProviderError(f"chat request failed after {attempts} attempts: {last}", attempts=attempts)

    def complete(self, pid: PromptId, text: str, n: int = 1) -> str:
        prompt = render_prompt(pid, text, n)
        path = self.cache_dir / f"{self.prompt_hash(prompt)}.txt" if self.cache_dir else None
        if path is not None and path.exists():
            with self._lock:
                self.cache_hits += 1
            return path.read_text(encoding="utf-8")
        content = self._chat(prompt)
        if path is not None:
            tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_text(content, encoding="utf-8")
            os.replace(tmp, path)
        return content


def make_chat_provider(cfg: SummarizerProviderConfig, cache_dir=None):
    if cfg.kind == "stub":
        return StubChatProvider()
    return RemoteChatProvider(cfg, Path(cache_dir) / "chat" if cache_dir else None)


def parse_items(response: str) -> list[str]:
    items = []
    for line in response.splitlines():
        line = _ITEM_PREFIX.sub("", line, count=1).strip()
        if line.lower().startswith("theme") and ":" in line[:12]:
            line = line.split(":", 1)[1]
        line = enforce_word_limit(line, THEME_WORD_LIMIT)
        if line:
            items.append(line)
    return items


class Summarizer:
    """Runs the three generation requests; any provider failure falls back to the stub."""

    def __init__(self, provider=None):
        self.provider = provider or StubChatProvider()
        self.stub = self.provider if isinstance(self.provider, StubChatProvider) else StubChatProvider()
        self.fallbacks = 0
        self.warnings: list[str] = []

    def _warn(self, msg: str) -> None:
        log.warning(msg)
        self.warnings.append(msg)

    def _ask(self, pid: PromptId, text: str, n: int = 1) -> tuple[str, bool]:
        try:
            return self.provider.complete(pid, text, n), self.provider is self.stub
        except ProviderError as exc:
            self.fallbacks += 1
            self._warn(f"{pid.value} request failed ({exc}); using stub output")
            return self.stub.complete(pid, text, n), True

    def name_task(self, sentences: Sequence[str]) -> str:
        if not sentences:
            raise ConfigError("name_task needs at least one sentence")
        text = " ".join(s.strip() for s in sentences)
        raw, _ = self._ask(PromptId.TASK_NAME, text)
        name = enforce_word_limit(raw, TASK_WORD_LIMIT)
        if not name:
            name = enforce_word_limit(stub_task_name(text), TASK_WORD_LIMIT) or "untitled task"
        return name

    def name_themes(self, sentences: Sequence[str], n: int) -> list[str]:
        if n < 1:
            raise ConfigError(f"n must be >= 1, got {n}")
        if not sentences:
            raise ConfigError("name_themes needs at least one sentence")
        text = " ".join(s.strip() for s in sentences)
        raw, from_stub = self._ask(PromptId.THEMES, text, n)
        items = parse_items(raw)
        if not items and not from_stub:
            self.fallbacks += 1
            self._warn("Themes response could not be parsed; using stub output")
            items = parse_items(self.stub.complete(PromptId.THEMES, text, n))
        themes: list[str] = []
        for item in items:
            if item not in themes:
                themes.append(item)
            if len(themes) == n:
                break
        if len(themes) < n:
            if not from_stub:
                self._warn(f"Themes response gave {len(themes)} of {n} themes; padding from stub")
            for item in stub_themes(text, n):
                if len(themes) == n:
                    break
                item = enforce_word_limit(item, THEME_WORD_LIMIT)
                if item and item not in themes:
                    themes.append(item)
            i = 1
            while len(themes) < n:
                if f"theme {i}" not in themes:
                    themes.append(f"theme {i}")
                i += 1
        return themes

    def summarize_issue_group(self, sentences: Sequence[str]) -> str:
        if not sentences:
            raise ConfigError("summarize_issue_group needs at least one sentence")
        text = "\n".join(" ".join(s.split()) for s in sentences)
        raw, _ = self._ask(PromptId.GROUP_SUMMARY, text)
        out = enforce_word_limit(raw, SUMMARY_WORD_LIMIT)
        return out or stub_summary(list(sentences))


def name_task(sentences: Sequence[str], provider=None) -> str:
    return Summarizer(provider).name_task(sentences)


def name_themes(sentences: Sequence[str], n: int, provider=None) -> list[str]:
    return Summarizer(provider).name_themes(sentences, n)


def summarize_issue_group(sentences: Sequence[str], provider=None) -> str:
    return Summarizer(provider).summarize_issue_group(sentences)
