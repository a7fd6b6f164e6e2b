"""Fish-bone data model (head, joints, backbones, fine-bones, child-bones), construction and validation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .classifier import IssueLabel
from .cluster import ClusterConfig, choose_k, kmeans
from .errors import ConfigError, DataError
from .segment import Sentence
from .summarizer import (SUMMARY_WORD_LIMIT, TASK_WORD_LIMIT, THEME_WORD_LIMIT, Summarizer)

log = logging.getLogger(__name__)

SIDES = (IssueLabel.EMPHASIZE, IssueLabel.IMPROVABLE)
SIDE_CODE = {IssueLabel.EMPHASIZE: "E", IssueLabel.IMPROVABLE: "I"}


def direction_of(source: IssueLabel) -> str:
    return f"{source.value}->{source.opposite.value}"


@dataclass(frozen=True)
class SentenceRef:
    paper_id: str
    index: int
    label: IssueLabel
    text: str


@dataclass(frozen=True)
class ChildBone:
    child_id: str
    source_fine_bone_id: str
    paper_id: str
    linked_sentences: tuple[SentenceRef, ...]
    summary: str
    direction: str

    @property
    def empty(self) -> bool:
        return not self.linked_sentences


@dataclass(frozen=True)
class FineBone:
    fine_bone_id: str
    theme: str
    member_sentences: tuple[SentenceRef, ...]
    child_bones: tuple[ChildBone, ...] = ()


@dataclass(frozen=True)
class Backbone:
    label: IssueLabel
    fine_bones: tuple[FineBone, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.fine_bones


@dataclass(frozen=True)
class Joint:
    joint_id: str
    task_name: str
    member_paper_ids: tuple[str, ...]
    backbones: tuple[Backbone, ...]

    def backbone(self, label: IssueLabel) -> Backbone:
        for bb in self.backbones:
            if bb.label is label:
                return bb
        raise KeyError(label)


@dataclass(frozen=True)
class FishboneDiagram:
    head: str
    joints: tuple[Joint, ...]
    provenance: Mapping = field(default_factory=dict)

    def fine_bones(self):
        for j in self.joints:
            for bb in j.backbones:
                for fb in bb.fine_bones:
                    yield j, bb, fb

    def child_bones(self):
        for j, bb, fb in self.fine_bones():
            for cb in fb.child_bones:
                yield j, bb, fb, cb


# --- construction ------------------------------------------------------------

@dataclass(frozen=True)
class BuildConfig:
    task_k: int | None = None
    k_range: tuple[int, int] = (2, 8)
    fine_bones: int = 3
    prelude_k: int = 2
    seed: int = 0
    n_init: int = 10
    max_iterations: int = 300

    def __post_init__(self):
        if self.fine_bones < 1:
            raise ConfigError("fine-bone count must be >= 1")
        if self.prelude_k < 1:
            raise ConfigError("prelude size must be >= 1")
        if self.task_k is not None and self.task_k < 1:
            raise ConfigError("task k must be >= 1")

    def cluster_config(self, k: int) -> ClusterConfig:
        return ClusterConfig(k, self.max_iterations, self.n_init, self.seed)


@dataclass
class TaskClustering:
    """Hard assignment of papers to task clusters, ordered as in the corpus."""
    paper_ids: list[str]
    assignments: dict[str, int]
    k: int
    silhouettes: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"k": self.k, "paper_ids": self.paper_ids, "assignments": self.assignments,
                "silhouettes": {str(k): round(v, 6) for k, v in sorted(self.silhouettes.items())}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskClustering":
        return cls(list(d["paper_ids"]), {k: int(v) for k, v in d["assignments"].items()}, int(d["k"]),
                   {int(k): float(v) for k, v in d.get("silhouettes", {}).items()})


def _unit_mean(vecs: np.ndarray) -> np.ndarray:
    m = vecs.mean(axis=0)
    norm = np.linalg.norm(m)
    if norm == 0:
        out = np.zeros_like(m)
        out[0] = 1.0
        return out
    return m / norm


def cluster_tasks(papers: Mapping[str, Sequence[Sentence]], embedder, cfg: BuildConfig,
                  warnings: list | None = None) -> TaskClustering:
    """Cluster papers by the mean vector of their leading ``prelude_k`` sentences."""
    warnings = warnings if warnings is not None else []
    ids = []
    for pid, sents in papers.items():
        if sents:
            ids.append(pid)
        else:
            warnings.append(f"paper {pid!r} has no introduction sentences; left out of the diagram")
    if len(ids) < 2:
        raise DataError(f"a bird's-eye view needs at least 2 papers with introductions, got {len(ids)}")
    points = []
    for pid in ids:
        prelude = [s.text for s in papers[pid][:cfg.prelude_k]]
        points.append(_unit_mean(np.vstack([v.values for v in embedder.embed(prelude)])))
    X = np.vstack(points)
    scores: dict[int, float] = {}
    if cfg.task_k is not None:
        k = cfg.task_k
        if k > len(ids):
            warnings.append(f"task k={k} exceeds {len(ids)} papers; using k={len(ids)}")
            k = len(ids)
        res = kmeans(X, cfg.cluster_config(k))
    elif len(ids) < 3:
        warnings.append("fewer than 3 papers; all papers form a single task")
        k, res = 1, kmeans(X, cfg.cluster_config(1))
    else:
        lo, hi = max(2, cfg.k_range[0]), min(cfg.k_range[1], len(ids) - 1)
        if lo > hi:
            lo = hi = min(max(2, cfg.k_range[0]), len(ids) - 1)
        chosen = choose_k(X, (lo, hi), cfg.cluster_config(lo), warnings)
        k, res, scores = chosen.k, chosen.result, chosen.scores
    return TaskClustering(ids, {pid: int(c) for pid, c in zip(ids, res.assignments)}, k, scores)


def _ordered_groups(keys: Sequence, assignments: Sequence[int]) -> list[list]:
    """Group ``keys`` by cluster, clusters ordered by first appearance, empty ones dropped."""
    groups: dict[int, list] = {}
    for key, c in zip(keys, assignments):
        groups.setdefault(int(c), []).append(key)
    return list(groups.values())


def build_fishbone(
    topic: str,
    papers: Mapping[str, Sequence[Sentence]],
    labels: Mapping[tuple[str, int], IssueLabel],
    embedder,
    summarizer: Summarizer | None = None,
    cfg: BuildConfig = BuildConfig(),
    tasks: TaskClustering | None = None,
    warnings: list | None = None,
    provenance: Mapping | None = None,
) -> FishboneDiagram:
    """Assemble the diagram: prelude clusters become joints, per-side issue clusters
    become fine-bones, and each fine-bone member paper links to its own
    opposite-side sentences as a child-bone. Others-labelled sentences are dropped."""
    if not topic or not topic.strip():
        raise ConfigError("topic must be non-empty")
    warnings = warnings if warnings is not None else []
    summarizer = summarizer or Summarizer()
    for pid, sents in papers.items():
        for s in sents:
            if (pid, s.index) not in labels:
                raise DataError(f"no label for sentence {s.index} of paper {pid!r}")
    if tasks is None:
        tasks = cluster_tasks(papers, embedder, cfg, warnings)
    elif len(tasks.paper_ids) < 2:
        raise DataError("a bird's-eye view needs at least 2 papers")

    def refs(pid: str, label: IssueLabel) -> list[SentenceRef]:
        return [SentenceRef(pid, s.index, label, s.text) for s in papers[pid] if labels[(pid, s.index)] is label]

    joints = []
    groups = _ordered_groups(tasks.paper_ids, [tasks.assignments[p] for p in tasks.paper_ids])
    for jn, members in enumerate(groups, 1):
        jid = f"J{jn}"
        prelude = [s.text for pid in members for s in papers[pid][:cfg.prelude_k]]
        task_name = summarizer.name_task(prelude)
        backbones = []
        for side in SIDES:
            pool = [r for pid in members for r in refs(pid, side)]
            if not pool:
                backbones.append(Backbone(side))
                continue
            m = min(cfg.fine_bones, len(pool))
            vecs = embedder.embed([r.text for r in pool])
            res = kmeans(vecs, cfg.cluster_config(m))
            clusters = _ordered_groups(pool, res.assignments)
            themes = summarizer.name_themes([r.text for grp in clusters for r in grp], len(clusters))
            fine_bones = []
            for fn, (grp, theme) in enumerate(zip(clusters, themes), 1):
                fid = f"{jid}-{SIDE_CODE[side]}{fn}"
                children = []
                for pid in dict.fromkeys(r.paper_id for r in grp):
                    linked = tuple(refs(pid, side.opposite))
                    summary = summarizer.summarize_issue_group([r.text for r in linked]) if linked else ""
                    children.append(ChildBone(f"{fid}-C{len(children) + 1}", fid, pid, linked, summary,
                                              direction_of(side)))
                fine_bones.append(FineBone(fid, theme, tuple(grp), tuple(children)))
            backbones.append(Backbone(side, tuple(fine_bones)))
        joints.append(Joint(jid, task_name, tuple(members), tuple(backbones)))
    return FishboneDiagram(topic.strip(), tuple(joints), dict(provenance or {}))


# --- validation --------------------------------------------------------------

def _words(s: str) -> int:
    return len(s.split())


def validate(diagram: FishboneDiagram) -> list[str]:
    """Every broken invariant as one message; an empty list means the diagram is valid."""
    v: list[str] = []
    if not diagram.head.strip():
        v.append("head: topic is empty")
    if not diagram.joints:
        v.append("diagram has no joints")
    seen_ids: set[str] = set()
    paper_joint: dict[str, str] = {}
    member_refs: set[tuple[str, int]] = set()

    def unique_id(kind: str, ident: str) -> None:
        if ident in seen_ids:
            v.append(f"{kind} {ident}: duplicate id")
        seen_ids.add(ident)

    for j in diagram.joints:
        unique_id("joint", j.joint_id)
        if not j.task_name.strip() or _words(j.task_name) > TASK_WORD_LIMIT:
            v.append(f"joint {j.joint_id}: task name must have 1..{TASK_WORD_LIMIT} words")
        if not j.member_paper_ids:
            v.append(f"joint {j.joint_id}: no member papers")
        for pid in j.member_paper_ids:
            if pid in paper_joint:
                v.append(f"joint {j.joint_id}: paper {pid!r} already belongs to joint {paper_joint[pid]}")
            else:
                paper_joint[pid] = j.joint_id
        sides = [bb.label for bb in j.backbones]
        if sorted(s.value for s in sides) != sorted(s.value for s in SIDES):
            v.append(f"joint {j.joint_id}: needs exactly one Emphasize and one Improvable backbone, "
                     f"has {[s.value for s in sides]}")
        members = set(j.member_paper_ids)
        for bb in j.backbones:
            if bb.label not in SIDES:
                v.append(f"joint {j.joint_id}: backbone label {bb.label.value} is not an issue side")
                continue
            themes = [fb.theme for fb in bb.fine_bones]
            if len(set(themes)) != len(themes):
                v.append(f"joint {j.joint_id} {bb.label.value} backbone: duplicate fine-bone themes")
            for fb in bb.fine_bones:
                unique_id("fine-bone", fb.fine_bone_id)
                where = f"fine-bone {fb.fine_bone_id}"
                if not fb.theme.strip() or _words(fb.theme) > THEME_WORD_LIMIT:
                    v.append(f"{where}: theme must have 1..{THEME_WORD_LIMIT} words")
                if not fb.member_sentences:
                    v.append(f"{where}: no member sentences")
                for r in fb.member_sentences:
                    if r.label is not bb.label:
                        v.append(f"{where}: member {r.paper_id}#{r.index} labelled {r.label.value}, "
                                 f"backbone is {bb.label.value}")
                    if r.paper_id not in members:
                        v.append(f"{where}: member {r.paper_id}#{r.index} is from a paper outside joint {j.joint_id}")
                    key = (r.paper_id, r.index)
                    if key in member_refs:
                        v.append(f"{where}: sentence {r.paper_id}#{r.index} appears in more than one fine-bone")
                    member_refs.add(key)
                member_papers = {r.paper_id for r in fb.member_sentences}
                for cb in fb.child_bones:
                    unique_id("child-bone", cb.child_id)
                    where_c = f"child-bone {cb.child_id}"
                    if cb.source_fine_bone_id != fb.fine_bone_id:
                        v.append(f"{where_c}: source {cb.source_fine_bone_id} is not its fine-bone {fb.fine_bone_id}")
                    if cb.paper_id not in member_papers:
                        v.append(f"{where_c}: paper {cb.paper_id!r} has no member sentence in {fb.fine_bone_id}")
                    if any(r.paper_id != cb.paper_id for r in cb.linked_sentences):
                        v.append(f"{where_c}: linked sentences come from papers other than {cb.paper_id!r}")
                    if bb.label in SIDES:
                        if any(r.label is not bb.label.opposite for r in cb.linked_sentences):
                            v.append(f"{where_c}: linked sentences must be labelled {bb.label.opposite.value}")
                        if cb.direction != direction_of(bb.label):
                            v.append(f"{where_c}: direction {cb.direction!r} should be {direction_of(bb.label)!r}")
                    if _words(cb.summary) > SUMMARY_WORD_LIMIT:
                        v.append(f"{where_c}: summary longer than {SUMMARY_WORD_LIMIT} words")
                    if cb.linked_sentences and not cb.summary.strip():
                        v.append(f"{where_c}: linked child-bone has no summary")
    for _, _, fb, cb in diagram.child_bones():
        for r in cb.linked_sentences:
            if r.label is IssueLabel.OTHERS:
                v.append(f"child-bone {cb.child_id}: contains an Others sentence")
    return v


def coverage_violations(diagram: FishboneDiagram, labeled: Mapping[tuple[str, int], IssueLabel]) -> list[str]:
    """Check each Emphasize/Improvable sentence of a member paper sits in exactly one fine-bone of its joint."""
    out = []
    for j in diagram.joints:
        placed: dict[tuple[str, int], int] = {}
        for bb in j.backbones:
            for fb in bb.fine_bones:
                for r in fb.member_sentences:
                    placed[(r.paper_id, r.index)] = placed.get((r.paper_id, r.index), 0) + 1
        members = set(j.member_paper_ids)
        for (pid, idx), label in labeled.items():
            if pid in members and label in SIDES and placed.get((pid, idx), 0) != 1:
                out.append(f"joint {j.joint_id}: sentence {pid}#{idx} placed {placed.get((pid, idx), 0)} times")
    return out
