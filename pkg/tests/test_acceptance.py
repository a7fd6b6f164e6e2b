"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line with its runtime."""
import json
import random
import shutil
import time
from contextlib import contextmanager

import numpy as np

from fishbone_survey.classifier import (CLASSES, LabeledSentence, Split, evaluate, grid_search, predict_many,
                                        stratified_split, train_binary_svm, train_ovr_linear_svm)
from fishbone_survey.cluster import ClusterConfig, kmeans
from fishbone_survey.diagram import BuildConfig, build_fishbone, coverage_violations, validate
from fishbone_survey.embedding import HashingEmbedder
from fishbone_survey.pipeline import PipelineConfig, read_labels, run_pipeline
from fishbone_survey.render import from_json, to_json, to_svg
from fishbone_survey.segment import segment
from fishbone_survey.summarizer import (SUMMARY_WORD_LIMIT, TASK_WORD_LIMIT, THEME_WORD_LIMIT, enforce_word_limit,
                                        name_task, name_themes, summarize_issue_group)

from helpers import ACCEPTANCE_LINES, FIXTURES, random_diagram, toy_papers_and_labels
from test_classifier import brute_force_metrics, pairs_from_matrix
from test_cluster import brute_force_inertia
from test_render import _check_svg

E, I, O = CLASSES


@contextmanager
def criterion(num, title, limit=None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.2f}s, limit {limit}s"
    except BaseException as exc:
        line = f"FAIL criterion {num}: {title} ({time.perf_counter() - start:.2f}s) -- {exc}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"PASS criterion {num}: {title} ({elapsed:.2f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_c1_metrics_oracle():
    with criterion(1, "metrics match brute-force recount on the fixed confusion matrix", limit=1.0):
        M = [[5, 1, 0], [1, 3, 1], [0, 1, 4]]
        pairs = pairs_from_matrix(M)
        rep = evaluate([p for _, p in pairs], [g for g, _ in pairs])
        oracle, acc = brute_force_metrics(pairs)
        assert rep.accuracy == 0.75 and acc == 0.75
        for c in CLASSES:
            got = (rep.precision[c], rep.recall[c], rep.f1[c])
            assert max(abs(a - b) for a, b in zip(got, oracle[c])) <= 1e-12, c


PROTOTYPES = {
    E: "In this paper we propose a novel model and introduce a new method that achieves state of the art results.",
    I: "However existing approaches suffer from limitations and fail to handle noisy long documents efficiently.",
    O: "Question answering is a long standing task in natural language processing with many benchmark datasets.",
}
SIZES = {E: 316, I: 187, O: 287}


def synthetic_blobs(seed=42, d=256, noise=0.1):
    """Gaussian blobs around hashed prototype sentences, renormalised to the unit sphere."""
    rng = np.random.default_rng(seed)
    emb = HashingEmbedder(d)
    items, X = [], []
    for c in CLASSES:
        center = emb.embed([PROTOTYPES[c]])[0].values
        pts = center + rng.normal(scale=noise, size=(SIZES[c], d))
        X.append(pts / np.linalg.norm(pts, axis=1, keepdims=True))
        items += [LabeledSentence("synthetic", len(items) + i, f"{c.value} {i}", c) for i in range(SIZES[c])]
    return items, np.vstack(X)


def synthetic_run(seed=42):
    items, X = synthetic_blobs(seed)
    ds = stratified_split(items, 0.25, seed)
    tr = [it.index for it in ds.items if it.split is Split.TRAIN]
    te = [it.index for it in ds.items if it.split is Split.TEST]
    y = [items[i].label for i in tr]
    gs = grid_search(X[tr], y, [0.01, 0.1, 1.0, 10.0, 100.0], folds=5, seed=seed)
    model = train_ovr_linear_svm(X[tr], y, gs.best_C)
    rep = evaluate(predict_many(model, X[te]), [items[i].label for i in te])
    return {"best_C": gs.best_C, "scores": gs.scores, "report": rep.to_dict(), "test_size": len(te)}


def test_c2_synthetic_classification():
    with criterion(2, "790-point synthetic blobs reach test accuracy >= 0.95, reproducibly", limit=30.0):
        a = synthetic_run()
        assert a["test_size"] == 79 + 47 + 72
        assert a["report"]["accuracy"] >= 0.95, a["report"]["accuracy"]
        b = synthetic_run()
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_c3_svm_separable_property():
    with criterion(3, "C=100 on separable 2-class sets: zero training errors, monotone objective", limit=10.0):
        for seed in range(25):
            rng = np.random.default_rng(seed)
            d = int(rng.integers(2, 10))
            w = rng.normal(size=d)
            X = rng.normal(size=(400, d))
            margin = X @ w / np.linalg.norm(w)
            keep = np.abs(margin) > 0.2
            X, margin = X[keep][: int(rng.integers(10, 201))], margin[keep]
            y = np.sign(margin[: len(X)])
            if len(set(y)) < 2:
                continue
            m = train_binary_svm(X, y, 100.0)
            assert np.all(np.sign(X @ m.w + m.b) == y), seed
            t = m.objective_trace
            assert all(b <= a + 1e-12 for a, b in zip(t, t[1:])), seed


def test_c4_kmeans_bruteforce():
    with criterion(4, "k-means matches exhaustive optimum on bundled fixtures; inertia monotone", limit=5.0):
        cases = json.loads((FIXTURES / "kmeans_cases.json").read_text())
        assert len(cases) >= 20
        for case in cases:
            X = np.array(case["points"], dtype=float)
            assert len(X) <= 8 and case["k"] <= 3
            res = kmeans(X, ClusterConfig(k=case["k"], seed=0, n_init=10))
            assert abs(res.inertia - brute_force_inertia(X, case["k"])) <= 1e-9, case["name"]
            for trace in res.restart_traces:
                assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:])), case["name"]


def _toy_cfg(tmp_path, out):
    for name in ("toy_corpus.jsonl", "toy_train.tsv", "toy_config.json"):
        shutil.copy(FIXTURES / name, tmp_path / name)
    cfg = PipelineConfig.load(tmp_path / "toy_config.json")
    cfg.output_dir = str(tmp_path / out)
    return cfg


def test_c5_pipeline_determinism(tmp_path):
    with criterion(5, "toy pipeline twice gives byte-identical JSON/DOT/SVG and zero remote calls", limit=10.0):
        runs = []
        for out in ("run1", "run2"):
            ctx = run_pipeline(_toy_cfg(tmp_path, out))
            manifest = json.loads((ctx.out / "manifest.json").read_text())
            assert manifest["status"] == "ok"
            assert all(v == 0 for v in manifest["provider_calls"].values()), manifest["provider_calls"]
            runs.append({f: (ctx.out / f"fishbone.{f}").read_bytes() for f in ("json", "dot", "svg")})
        assert runs[0] == runs[1]


def _structural_checks(d, labels):
    assert validate(d) == []
    seen = [p for j in d.joints for p in j.member_paper_ids]
    assert len(seen) == len(set(seen))
    for j, bb, fb, cb in d.child_bones():
        members = {r.paper_id for r in fb.member_sentences}
        assert cb.paper_id in members
        assert all(r.paper_id == cb.paper_id for r in cb.linked_sentences)
    for j, bb, fb in d.fine_bones():
        assert all(r.label is not O and labels[(r.paper_id, r.index)] is r.label for r in fb.member_sentences)
    for *_, cb in d.child_bones():
        assert all(r.label is not O for r in cb.linked_sentences)
    assert coverage_violations(d, labels) == []


def test_c6_structural_suite(tmp_path):
    with criterion(6, "toy diagram: valid, same-article child-bones, partition, purity, coverage", limit=5.0):
        papers, labels = toy_papers_and_labels()
        d = build_fishbone("HotpotQA", papers, labels, HashingEmbedder(256),
                           cfg=BuildConfig(fine_bones=2, k_range=(2, 4), seed=42))
        _structural_checks(d, labels)
        assert sorted(p for j in d.joints for p in j.member_paper_ids) == sorted(papers)


def test_c6_structural_suite_classified(tmp_path):
    with criterion("6b", "pipeline-built toy diagram with classifier labels passes the same checks", limit=10.0):
        ctx = run_pipeline(_toy_cfg(tmp_path, "out"))
        d = from_json((ctx.out / "diagram.json").read_text())
        _structural_checks(d, read_labels(ctx.out / "labels.tsv"))


def _collapse(s):
    return " ".join(s.split())


def test_c7_segmenter_corpus():
    with criterion(7, "20 hand-built segmentation cases exact; lossless cover on 1000 concatenations"):
        cases = json.loads((FIXTURES / "segment_cases.json").read_text())
        assert len(cases) == 20
        misses = [c["text"] for c in cases if segment(c["text"]) != c["expected"]]
        assert not misses, misses
        rng = random.Random(42)
        pieces = [s for c in cases for s in c["expected"]] + [c["text"] for c in cases]
        for _ in range(1000):
            text = "".join(rng.choice(pieces) + rng.choice([" ", "  ", "\n", " \t "]) for _ in range(rng.randint(1, 6)))
            out = segment(text)
            assert all(s and s == s.strip() for s in out)
            assert _collapse(" ".join(out)) == _collapse(text), text


def test_c8_renderer_round_trip():
    with criterion(8, "50 random diagrams: JSON round-trip byte-identical, SVG inside viewBox"):
        for seed in range(50):
            d = random_diagram(seed)
            text = to_json(d)
            assert to_json(from_json(text)) == text, seed
            _check_svg(d)


def _random_string(rng):
    alphabet = "abcdefghijklmnopqrstuvwxyz ABCXYZ 0123456789 .,;:!?\"'()-\n\tαβγ 中文 é"
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 300)))


def test_c9_word_limits():
    with criterion(9, "1000 random strings never exceed the 5/5/25 word limits"):
        rng = random.Random(7)
        for _ in range(1000):
            s = _random_string(rng)
            assert len(enforce_word_limit(s, SUMMARY_WORD_LIMIT).split()) <= SUMMARY_WORD_LIMIT
            if not s.strip():
                continue
            assert len(name_task([s]).split()) <= TASK_WORD_LIMIT
            themes = name_themes([s], rng.randint(1, 5))
            assert all(1 <= len(t.split()) <= THEME_WORD_LIMIT for t in themes)
            assert len(summarize_issue_group([s]).split()) <= SUMMARY_WORD_LIMIT
