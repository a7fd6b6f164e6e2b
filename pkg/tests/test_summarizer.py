import pytest
from hypothesis import given, strategies as st

from fishbone_survey.errors import ConfigError, ProviderError
from fishbone_survey.summarizer import (PROMPTS, PromptId, RemoteChatProvider, StubChatProvider, Summarizer,
                                        SummarizerProviderConfig, enforce_word_limit, make_chat_provider,
                                        name_task, name_themes, parse_items, ranked_terms, stub_themes,
                                        summarize_issue_group)


def chat(content):
    return 200, {"choices": [{"message": {"role": "assistant", "content": content}}]}


@pytest.fixture
def remote(stub_server, tmp_path, monkeypatch):
    monkeypatch.setenv("TEST_CHAT_TOKEN", "sk-test")
    cfg = SummarizerProviderConfig(kind="remote", endpoint=stub_server.url, backoff=0.0, max_retries=2,
                                   token_env="TEST_CHAT_TOKEN", timeout=5)
    return RemoteChatProvider(cfg, tmp_path / "chat")


QA = ["Question answering datasets drive question answering research.",
      "We study question datasets."]


# --- word limits --------------------------------------------------------------------

@pytest.mark.parametrize("text,limit,expected", [
    ("a b c d e f", 5, "a b c d e"),
    ("Reading Comprehension.", 5, "Reading Comprehension"),
    ("", 3, ""),
    ('"Dense Retrieval!"', 5, "Dense Retrieval"),
    ("Multi-hop Question Answering Benchmarks Overview Study", 5, "Multi-hop Question Answering Benchmarks Overview"),
])
def test_enforce_word_limit(text, limit, expected):
    assert enforce_word_limit(text, limit) == expected


@given(st.text(), st.integers(1, 30))
def test_word_limit_property(text, limit):
    out = enforce_word_limit(text, limit)
    assert len(out.split()) <= limit
    assert out == out.strip()


# --- stub ---------------------------------------------------------------------------

def test_stub_task_name_by_frequency():
    assert ranked_terms(" ".join(QA))[:3] == ["question", "answering", "datasets"]
    assert name_task(QA) == "question answering datasets drive research"


def test_stub_ties_alphabetical():
    assert ranked_terms("zeta alpha mid") == ["alpha", "mid", "zeta"]


def test_stub_themes_round_robin():
    text = "retrieval retrieval retrieval documents documents query index dense"
    assert stub_themes(text, 3) == ["retrieval index", "documents query", "dense"]
    assert name_themes([text], 3) == ["retrieval index", "documents query", "dense"]


def test_stub_themes_pad_when_short():
    assert name_themes(["retrieval"], 3) == ["retrieval", "theme 2", "theme 3"]


def test_themes_singleton():
    assert len(name_themes(QA, 1)) == 1


def test_stub_summary_single_sentence():
    words = [f"w{i}" for i in range(40)]
    assert summarize_issue_group([" ".join(words) + "."]) == " ".join(words[:25])


def test_stub_summary_three_sentences():
    group = ["Models fail on long documents.", "Long documents hurt recall.", "Recall drops on documents."]
    out = summarize_issue_group(group)
    assert out == "Models fail on long documents; key terms: documents, long, recall"
    assert summarize_issue_group(group) == out
    assert len(out.split()) <= 25


def test_stub_is_pure():
    a, b = StubChatProvider(), StubChatProvider()
    for pid in PromptId:
        assert a.complete(pid, "alpha beta beta gamma", 2) == b.complete(pid, "alpha beta beta gamma", 2)


def test_guards():
    with pytest.raises(ConfigError):
        name_task([])
    with pytest.raises(ConfigError):
        name_themes(QA, 0)
    with pytest.raises(ConfigError):
        summarize_issue_group([])
    with pytest.raises(ConfigError):
        SummarizerProviderConfig(kind="remote")


def test_prompts_carry_limits():
    assert "5 words" in PROMPTS[PromptId.TASK_NAME]
    assert "{n} themes" in PROMPTS[PromptId.THEMES]


def test_parse_items():
    assert parse_items("1. Dense retrieval\n2) Theme: Graph reasoning\n- Long context.\n\n") == [
        "Dense retrieval", "Graph reasoning", "Long context"]


# --- remote -----------------------------------------------------------------------

def test_remote_truncates_six_words(stub_server, remote):
    stub_server.script = [chat("Multi-hop Question Answering Benchmarks Overview Study")]
    s = Summarizer(remote)
    assert s.name_task(QA) == "Multi-hop Question Answering Benchmarks Overview"
    req = stub_server.requests[0]
    assert req["auth"] == "Bearer sk-test"
    assert req["body"]["temperature"] == 0
    assert req["body"]["messages"][0]["content"].startswith(PROMPTS[PromptId.TASK_NAME].split("{")[0])


def test_remote_two_of_three_themes_padded(stub_server, remote):
    stub_server.script = [chat("1. Dense retrieval\n2. Graph reasoning")]
    s = Summarizer(remote)
    themes = s.name_themes(["retrieval retrieval documents"], 3)
    assert themes[:2] == ["Dense retrieval", "Graph reasoning"] and len(themes) == 3
    assert themes[2] == "retrieval"
    assert any("padding" in w for w in s.warnings)


def test_remote_unparseable_falls_back(stub_server, remote):
    stub_server.script = [chat("  \n ... \n")]
    s = Summarizer(remote)
    assert s.name_themes(["retrieval index"], 1) == ["index retrieval"]
    assert s.fallbacks == 1


def test_remote_failure_falls_back(stub_server, remote):
    stub_server.script = [(503, {"error": "busy"})]
    s = Summarizer(remote)
    out = s.summarize_issue_group(["Recall is low."])
    assert out == "Recall is low"
    assert s.fallbacks == 1 and s.warnings
    assert remote.calls == 3 and remote.retries == 2


def test_unreachable_endpoint_falls_back(tmp_path, monkeypatch):
    monkeypatch.setenv("TEST_CHAT_TOKEN", "x")
    cfg = SummarizerProviderConfig(kind="remote", endpoint="http://127.0.0.1:9/v1", backoff=0.0,
                                   max_retries=1, token_env="TEST_CHAT_TOKEN", timeout=1)
    s = Summarizer(RemoteChatProvider(cfg))
    assert s.name_task(QA) == name_task(QA)
    assert s.fallbacks == 1


def test_missing_token_is_provider_error(monkeypatch):
    monkeypatch.delenv("NO_SUCH_TOKEN_VAR", raising=False)
    cfg = SummarizerProviderConfig(kind="remote", endpoint="http://127.0.0.1:9/v1", token_env="NO_SUCH_TOKEN_VAR")
    with pytest.raises(ProviderError):
        RemoteChatProvider(cfg).complete(PromptId.TASK_NAME, "x")


def test_warm_cache_zero_calls(stub_server, remote, tmp_path):
    stub_server.script = [chat("Dense retrieval")]
    assert Summarizer(remote).name_task(QA) == "Dense retrieval"
    again = RemoteChatProvider(remote.cfg, tmp_path / "chat")
    assert Summarizer(again).name_task(QA) == "Dense retrieval"
    assert again.calls == 0 and again.cache_hits == 1
    assert len(stub_server.requests) == 1


def test_make_chat_provider(tmp_path):
    assert isinstance(make_chat_provider(SummarizerProviderConfig()), StubChatProvider)
    p = make_chat_provider(SummarizerProviderConfig(kind="remote", endpoint="http://x"), tmp_path)
    assert p.cache_dir == tmp_path / "chat"
