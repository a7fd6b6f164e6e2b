"""Shared builders for tests: toy corpus data and random valid diagrams."""
import csv
import random
from pathlib import Path

import numpy as np

from fishbone_survey.classifier import IssueLabel
from fishbone_survey.diagram import (Backbone, ChildBone, FineBone, FishboneDiagram, Joint, SentenceRef,
                                     direction_of)
from fishbone_survey.segment import Sentence

FIXTURES = Path(__file__).parent / "fixtures"
E, I, O = IssueLabel.EMPHASIZE, IssueLabel.IMPROVABLE, IssueLabel.OTHERS


def toy_papers_and_labels():
    papers, labels = {}, {}
    with (FIXTURES / "toy_labels.tsv").open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            pid, idx = row["paper_id"], int(row["sentence_index"])
            papers.setdefault(pid, []).append(Sentence(pid, idx, row["text"]))
            labels[(pid, idx)] = IssueLabel(row["label"])
    return papers, labels


_WORDS = ("retrieval reading passage query graph dense sparse index evidence hop answer model corpus "
          "training label reasoning benchmark noise cost scale explain support fact chain").split()


def _phrase(rng, lo, hi):
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randint(lo, hi)))


def random_diagram(seed: int) -> FishboneDiagram:
    """A random diagram that satisfies every invariant checked by validate()."""
    rng = random.Random(seed)
    joints = []
    paper_no = 0
    for jn in range(1, rng.randint(1, 5) + 1):
        jid = f"J{jn}"
        papers = [f"p{paper_no + k}" for k in range(rng.randint(1, 4))]
        paper_no += len(papers)
        sents = {}
        for pid in papers:
            n = rng.randint(0, 5)
            sents[pid] = [SentenceRef(pid, i, rng.choice([E, I]), _phrase(rng, 3, 30) + ".") for i in range(n)]
        backbones = []
        for side, code in ((E, "E"), (I, "I")):
            pool = [r for pid in papers for r in sents[pid] if r.label is side]
            if not pool or rng.random() < 0.15:
                pool = pool if pool else []
            if not pool:
                backbones.append(Backbone(side))
                continue
            m = rng.randint(1, min(3, len(pool)))
            groups = [pool[i::m] for i in range(m)]
            fine = []
            for fn, grp in enumerate(groups, 1):
                fid = f"{jid}-{code}{fn}"
                children = []
                for pid in dict.fromkeys(r.paper_id for r in grp):
                    linked = tuple(r for r in sents[pid] if r.label is side.opposite)
                    summary = _phrase(rng, 1, 25) if linked else ""
                    children.append(ChildBone(f"{fid}-C{len(children) + 1}", fid, pid, linked, summary,
                                              direction_of(side)))
                fine.append(FineBone(fid, f"{_phrase(rng, 1, 4)} {fn}", tuple(grp), tuple(children)))
            backbones.append(Backbone(side, tuple(fine)))
        if rng.random() < 0.5:
            backbones.reverse()
        joints.append(Joint(jid, _phrase(rng, 1, 5), tuple(papers), tuple(backbones)))
    prov = {"seed": seed, "score": rng.random(), "note": 'quote " and <tag> & ünïcode'}
    return FishboneDiagram(_phrase(rng, 1, 3).title() or "Topic", tuple(joints), prov)


# one "PASS/FAIL criterion N ..." line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
