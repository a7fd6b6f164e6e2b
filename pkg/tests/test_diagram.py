import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from fishbone_survey.classifier import IssueLabel
from fishbone_survey.diagram import (Backbone, BuildConfig, TaskClustering, build_fishbone, cluster_tasks,
                                     coverage_violations, validate)
from fishbone_survey.embedding import HashingEmbedder
from fishbone_survey.errors import ConfigError, DataError
from fishbone_survey.render import to_json

from helpers import random_diagram, toy_papers_and_labels

E, I, O = IssueLabel.EMPHASIZE, IssueLabel.IMPROVABLE, IssueLabel.OTHERS
CFG = BuildConfig(fine_bones=1, k_range=(2, 4), seed=42)


def build(labels=None, cfg=CFG, papers=None):
    toy_papers, toy_labels = toy_papers_and_labels()
    return build_fishbone("HotpotQA", papers or toy_papers, labels or toy_labels, HashingEmbedder(256), cfg=cfg)


def test_toy_structure():
    d = build()
    assert len(d.joints) == 2
    groups = sorted(sorted(j.member_paper_ids) for j in d.joints)
    assert groups == [["rc1", "rc2", "rc3"], ["sr1", "sr2", "sr3"]]
    for j in d.joints:
        assert sorted(bb.label.value for bb in j.backbones) == ["Emphasize", "Improvable"]
        for bb in j.backbones:
            assert len(bb.fine_bones) == 1
            fb = bb.fine_bones[0]
            assert len(fb.child_bones) == 3
            for cb in fb.child_bones:
                assert cb.linked_sentences
                assert all(r.paper_id == cb.paper_id for r in cb.linked_sentences)
                assert cb.paper_id in {r.paper_id for r in fb.member_sentences}
    assert validate(d) == []


def test_toy_coverage_and_purity():
    _, labels = toy_papers_and_labels()
    d = build()
    assert coverage_violations(d, labels) == []
    for _, _, fb in d.fine_bones():
        assert all(r.label is not O for r in fb.member_sentences)


def test_deterministic():
    assert to_json(build()) == to_json(build())


def test_one_paper_errors():
    papers, labels = toy_papers_and_labels()
    with pytest.raises(DataError):
        build(papers={"rc1": papers["rc1"]}, labels=labels)


def test_two_papers_single_joint():
    papers, labels = toy_papers_and_labels()
    warnings = []
    t = cluster_tasks({"rc1": papers["rc1"], "sr1": papers["sr1"]}, HashingEmbedder(256), CFG, warnings)
    assert t.k == 1 and warnings


def test_task_k_clamped():
    papers, _ = toy_papers_and_labels()
    warnings = []
    t = cluster_tasks(papers, HashingEmbedder(256), dataclasses.replace(CFG, task_k=10), warnings)
    assert t.k == 6 and any("exceeds" in w for w in warnings)


def test_task_clustering_round_trip():
    papers, _ = toy_papers_and_labels()
    t = cluster_tasks(papers, HashingEmbedder(256), CFG)
    assert TaskClustering.from_dict(t.to_dict()).assignments == t.assignments


def test_emphasize_only_paper():
    _, labels = toy_papers_and_labels()
    labels = dict(labels)
    labels[("rc1", 2)] = O
    d = build(labels=labels)
    assert validate(d) == []
    j = next(j for j in d.joints if "rc1" in j.member_paper_ids)
    emph = j.backbone(E).fine_bones[0]
    cb = next(c for c in emph.child_bones if c.paper_id == "rc1")
    assert cb.empty and cb.summary == ""
    improv = j.backbone(I).fine_bones[0]
    assert "rc1" not in {r.paper_id for r in improv.member_sentences}


def test_empty_side_backbone():
    _, labels = toy_papers_and_labels()
    labels = {k: (O if v is I else v) for k, v in labels.items()}
    d = build(labels=labels)
    assert validate(d) == []
    for j in d.joints:
        assert j.backbone(I).empty and not j.backbone(E).empty


def test_missing_label_errors():
    _, labels = toy_papers_and_labels()
    labels = dict(labels)
    del labels[("rc1", 0)]
    with pytest.raises(DataError):
        build(labels=labels)


def test_bad_build_config():
    with pytest.raises(ConfigError):
        BuildConfig(fine_bones=0)


def _replace_child(d, fn):
    j = d.joints[0]
    bb = j.backbones[0]
    fb = bb.fine_bones[0]
    cb = fn(fb.child_bones[0])
    fb2 = dataclasses.replace(fb, child_bones=(cb,) + fb.child_bones[1:])
    bb2 = dataclasses.replace(bb, fine_bones=(fb2,) + bb.fine_bones[1:])
    j2 = dataclasses.replace(j, backbones=(bb2,) + j.backbones[1:])
    return dataclasses.replace(d, joints=(j2,) + d.joints[1:]), cb


def test_fault_mixed_paper_ids():
    d = build()
    other = next(r for j in d.joints for r in j.backbones[1].fine_bones[0].member_sentences
                 if r.paper_id != d.joints[0].backbones[0].fine_bones[0].child_bones[0].paper_id)
    bad, cb = _replace_child(d, lambda c: dataclasses.replace(
        c, linked_sentences=c.linked_sentences + (dataclasses.replace(other, label=c.linked_sentences[0].label),)))
    errs = validate(bad)
    assert len(errs) == 1 and cb.child_id in errs[0]


def test_fault_two_emphasize_backbones():
    d = build()
    j = d.joints[0]
    emph = j.backbone(E)
    bad = dataclasses.replace(d, joints=(dataclasses.replace(j, backbones=(emph, emph)),) + d.joints[1:])
    errs = validate(bad)
    assert any("exactly one Emphasize and one Improvable" in e for e in errs)


def test_fault_paper_in_two_joints():
    d = build()
    j0, j1 = d.joints
    j1b = dataclasses.replace(j1, member_paper_ids=j1.member_paper_ids + (j0.member_paper_ids[0],))
    assert any("already belongs" in e for e in validate(dataclasses.replace(d, joints=(j0, j1b))))


def test_fault_others_in_child():
    d = build()
    bad, cb = _replace_child(d, lambda c: dataclasses.replace(
        c, linked_sentences=(dataclasses.replace(c.linked_sentences[0], label=O),)))
    assert any("Others" in e for e in validate(bad))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_random_diagrams_valid(seed):
    d = random_diagram(seed)
    assert validate(d) == []
    seen = [p for j in d.joints for p in j.member_paper_ids]
    assert len(seen) == len(set(seen))
    for _, _, fb, cb in d.child_bones():
        assert all(r.paper_id == cb.paper_id for r in cb.linked_sentences)
