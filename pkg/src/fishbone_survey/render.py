"""Canonical JSON, Graphviz DOT and static SVG output for fish-bone diagrams."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Mapping
from xml.sax.saxutils import escape, quoteattr

from .classifier import IssueLabel
from .diagram import (SIDES, Backbone, ChildBone, FineBone, FishboneDiagram, Joint, SentenceRef)
from .errors import ConfigError, DataError

SCHEMA = "fishbone/1"
FLOAT_DIGITS = 6
BONE_ANGLE = math.radians(60)
NO_LINK = "(no linked issue)"


@dataclass(frozen=True)
class RenderOptions:
    format: str = "svg"
    width: int = 1600
    height: int = 900
    font_size: float = 12.0
    max_label: int = 48

    def __post_init__(self):
        if self.format not in ("json", "dot", "svg"):
            raise ConfigError(f"unknown render format {self.format!r}")
        if self.width <= 0 or self.height <= 0 or self.font_size <= 0:
            raise ConfigError("render dimensions and font size must be positive")
        if self.max_label < 8:
            raise ConfigError("max label length must be >= 8")


# --- JSON --------------------------------------------------------------------

def _fix_floats(obj: Any) -> Any:
    if isinstance(obj, float):
        return round(obj, FLOAT_DIGITS)
    if isinstance(obj, Mapping):
        return {str(k): _fix_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fix_floats(v) for v in obj]
    return obj


def _ref(r: SentenceRef) -> dict:
    return {"paper_id": r.paper_id, "index": r.index, "label": r.label.value, "text": r.text}


def to_dict(d: FishboneDiagram) -> dict:
    return {
        "schema": SCHEMA,
        "head": d.head,
        "provenance": _fix_floats(dict(d.provenance)),
        "joints": [{
            "joint_id": j.joint_id,
            "task_name": j.task_name,
            "member_paper_ids": list(j.member_paper_ids),
            "backbones": [{
                "label": bb.label.value,
                "empty": bb.empty,
                "fine_bones": [{
                    "fine_bone_id": fb.fine_bone_id,
                    "theme": fb.theme,
                    "member_sentences": [_ref(r) for r in fb.member_sentences],
                    "child_bones": [{
                        "child_id": cb.child_id,
                        "source_fine_bone_id": cb.source_fine_bone_id,
                        "paper_id": cb.paper_id,
                        "linked_sentences": [_ref(r) for r in cb.linked_sentences],
                        "summary": cb.summary,
                        "direction": cb.direction,
                        "empty": cb.empty,
                    } for cb in fb.child_bones],
                } for fb in bb.fine_bones],
            } for bb in j.backbones],
        } for j in d.joints],
    }


def to_json(d: FishboneDiagram) -> str:
    return json.dumps(to_dict(d), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _parse_ref(r: Mapping) -> SentenceRef:
    return SentenceRef(str(r["paper_id"]), int(r["index"]), IssueLabel(r["label"]), str(r["text"]))


def from_dict(obj: Mapping) -> FishboneDiagram:
    if obj.get("schema") != SCHEMA:
        raise DataError(f"unsupported diagram schema {obj.get('schema')!r}")
    try:
        return FishboneDiagram(
            obj["head"],
            tuple(Joint(
                j["joint_id"], j["task_name"], tuple(j["member_paper_ids"]),
                tuple(Backbone(
                    IssueLabel(bb["label"]),
                    tuple(FineBone(
                        fb["fine_bone_id"], fb["theme"],
                        tuple(_parse_ref(r) for r in fb["member_sentences"]),
                        tuple(ChildBone(cb["child_id"], cb["source_fine_bone_id"], cb["paper_id"],
                                        tuple(_parse_ref(r) for r in cb["linked_sentences"]),
                                        cb["summary"], cb["direction"])
                              for cb in fb["child_bones"]))
                        for fb in bb["fine_bones"]))
                    for bb in j["backbones"]))
                for j in obj["joints"]),
            obj.get("provenance", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed diagram document: {exc}") from exc


def from_json(text: str) -> FishboneDiagram:
    try:
        obj = json.loads(text)
    except ValueError as exc:
        raise DataError(f"diagram is not valid JSON: {exc}") from exc
    return from_dict(obj)


# --- DOT ---------------------------------------------------------------------

def _dot_str(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def backbone_id(j: Joint, bb: Backbone) -> str:
    return f"{j.joint_id}/{bb.label.value}"


def child_edge(j: Joint, fb: FineBone, cb: ChildBone) -> tuple[str, str] | None:
    """(Improvable fine-bone, Emphasize fine-bone) for a linked child-bone.

    The far end is the opposite-side fine-bone holding most of the linked
    sentences, ties going to the earlier fine-bone.
    """
    if cb.empty:
        return None
    where = {}
    for bb in j.backbones:
        for other in bb.fine_bones:
            for r in other.member_sentences:
                where[(r.paper_id, r.index)] = other.fine_bone_id
    votes: dict[str, int] = {}
    for r in cb.linked_sentences:
        target = where.get((r.paper_id, r.index))
        if target is not None:
            votes[target] = votes.get(target, 0) + 1
    if not votes:
        return None
    top = max(votes.values())
    other = next(fid for fid, n in votes.items() if n == top)
    source_side = cb.direction.split("->", 1)[0]
    if source_side == IssueLabel.IMPROVABLE.value:
        return fb.fine_bone_id, other
    return other, fb.fine_bone_id


def to_dot(d: FishboneDiagram) -> str:
    lines = ["digraph fishbone {", "  rankdir=LR;", '  node [fontname="Helvetica"];',
             f"  \"head\" [shape=doubleoctagon, kind=\"head\", label={_dot_str(d.head)}];"]
    edges = []
    for j in d.joints:
        lines.append(f"  {_dot_str(j.joint_id)} [shape=box, kind=\"joint\", label={_dot_str(j.task_name)}];")
        edges.append(f"  \"head\" -> {_dot_str(j.joint_id)} [kind=\"structure\", arrowhead=none];")
        for bb in j.backbones:
            bid = backbone_id(j, bb)
            shape = "plaintext" if bb.empty else "ellipse"
            lines.append(f"  {_dot_str(bid)} [shape={shape}, kind=\"backbone\", label={_dot_str(bb.label.value)}];")
            edges.append(f"  {_dot_str(j.joint_id)} -> {_dot_str(bid)} [kind=\"structure\", arrowhead=none];")
            for fb in bb.fine_bones:
                lines.append(f"  {_dot_str(fb.fine_bone_id)} [shape=note, kind=\"fine_bone\", "
                             f"label={_dot_str(fb.theme)}];")
                edges.append(f"  {_dot_str(bid)} -> {_dot_str(fb.fine_bone_id)} [kind=\"structure\", arrowhead=none];")
    for j, bb, fb, cb in d.child_bones():
        pair = child_edge(j, fb, cb)
        if pair is None:
            continue
        edges.append(f"  {_dot_str(pair[0])} -> {_dot_str(pair[1])} [kind=\"child\", id={_dot_str(cb.child_id)}, "
                     f"style=dashed, label={_dot_str(cb.summary)}];")
    return "\n".join(lines + edges + ["}"]) + "\n"


# --- SVG ---------------------------------------------------------------------

SIDE_COLORS = {IssueLabel.EMPHASIZE: "#2e7d32", IssueLabel.IMPROVABLE: "#c62828"}


def ellipsize(label: str, limit: int) -> str:
    label = " ".join(label.split())
    return label if len(label) <= limit else label[:limit - 1].rstrip() + "…"


def element_labels(d: FishboneDiagram) -> dict[str, str]:
    """Element id -> displayed (unellipsized) label for every diagram element."""
    out = {"head": d.head}
    for j in d.joints:
        out[j.joint_id] = j.task_name
        for bb in j.backbones:
            out[backbone_id(j, bb)] = bb.label.value + (" (none)" if bb.empty else "")
            for fb in bb.fine_bones:
                out[fb.fine_bone_id] = fb.theme
                for cb in fb.child_bones:
                    out[cb.child_id] = cb.summary if not cb.empty else NO_LINK
    return out


class _Canvas:
    def __init__(self, font: float):
        self.font = font
        self.items: list[str] = []
        self.xs: list[float] = []
        self.ys: list[float] = []

    def _track(self, *pts):
        for x, y in pts:
            self.xs.append(x)
            self.ys.append(y)

    def line(self, x1, y1, x2, y2, color="#333", width=1.5, cls=""):
        self._track((x1, y1), (x2, y2))
        self.items.append(f'<line class="{cls}" x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                          f'stroke="{color}" stroke-width="{width}"/>')

    def text(self, x, y, label, ref, anchor="end", size=None, color="#111", weight="normal"):
        size = size or self.font
        w = len(label) * size * 0.6
        x0 = {"end": x - w, "middle": x - w / 2, "start": x}[anchor]
        self._track((x0, y - size), (x0 + w, y + size * 0.3))
        self.items.append(f'<text x="{x:.2f}" y="{y:.2f}" text-anchor="{anchor}" font-size="{size:g}" '
                          f'fill="{color}" font-weight="{weight}" data-ref={quoteattr(ref)}>{escape(label)}</text>')


def _rib_rows(j: Joint, limit: int) -> list[tuple[str, str, int, str]]:
    """(element id, label, indent level, colour) rows of one rib, top to bottom."""
    rows = []
    for bb in j.backbones:
        color = SIDE_COLORS.get(bb.label, "#333")
        rows.append((backbone_id(j, bb), ellipsize(bb.label.value + (" (none)" if bb.empty else ""), limit), 0, color))
        for fb in bb.fine_bones:
            rows.append((fb.fine_bone_id, ellipsize(fb.theme, limit), 1, color))
            for cb in fb.child_bones:
                rows.append((cb.child_id, ellipsize(cb.summary if not cb.empty else NO_LINK, limit), 2, "#555"))
    return rows


def to_svg(d: FishboneDiagram, opts: RenderOptions = RenderOptions()) -> str:
    """Horizontal spine with the head on the right; joints alternate above and
    below on 60-degree ribs; each rib carries its backbones, fine-bone themes
    and child-bone summaries as indented horizontal rows. The viewBox is fitted
    to the drawn content and the width/height attributes scale it."""
    f = opts.font_size
    line_h = 1.9 * f
    indent = 1.5 * f
    gap = 2.0 * f
    char_w = 0.6 * f
    tan = math.tan(BONE_ANGLE)
    cv = _Canvas(f)

    ribs = [(j, _rib_rows(j, opts.max_label)) for j in d.joints]
    # joints 2m (above) and 2m+1 (below) share slot m; slot 0 is nearest the head
    slots = [ribs[i:i + 2] for i in range(0, len(ribs), 2)]
    x = 0.0
    spine_left = 0.0
    for slot in slots:
        widths = []
        for j, rows in slot:
            text_w = max([len(lbl) * char_w + lvl * indent for _, lbl, lvl, _ in rows] +
                         [len(ellipsize(j.task_name, opts.max_label)) * char_w * 1.1 / 2])
            widths.append(text_w + (len(rows) + 1) * line_h / tan)
        slot_w = max(widths) + gap
        xs = x - gap
        for side, (j, rows) in enumerate(slot):
            sign = -1.0 if side == 0 else 1.0
            n = len(rows)
            rib_h = (n + 1) * line_h
            tip_x, tip_y = xs - rib_h / tan, sign * rib_h
            cv.line(xs, 0.0, tip_x, tip_y, color="#333", width=2.0, cls="rib")
            label_y = tip_y - 0.5 * f if sign < 0 else tip_y + 1.3 * f
            cv.text(tip_x, label_y, ellipsize(j.task_name, opts.max_label), j.joint_id,
                    anchor="middle", size=f * 1.1, weight="bold")
            for r, (ref, label, level, color) in enumerate(rows):
                depth = (n - r) if sign < 0 else (r + 1)
                y = sign * depth * line_h
                xi = xs - depth * line_h / tan
                x_end = xi - f - level * indent
                stroke_len = max(len(label) * char_w, 2 * f)
                cv.line(xi, y, x_end - stroke_len, y, color=color, width=1.2 if level else 1.6, cls=f"bone{level}")
                cv.text(x_end, y - 0.35 * f, label, ref, anchor="end", size=f * (1.0 if level < 2 else 0.9),
                        color=color)
        x -= slot_w
        spine_left = x
    head_label = ellipsize(d.head, opts.max_label)
    head_w = len(head_label) * char_w * 1.3 + 2 * f
    cv.line(min(spine_left, -gap), 0.0, 0.0, 0.0, color="#000", width=3.0, cls="spine")
    cv._track((0.0, -1.2 * f), (head_w, 1.2 * f))
    cv.items.append(f'<rect x="0.00" y="{-1.2 * f:.2f}" width="{head_w:.2f}" height="{2.4 * f:.2f}" '
                    f'fill="#fff3e0" stroke="#000" stroke-width="2"/>')
    cv.text(head_w / 2, 0.4 * f, head_label, "head", anchor="middle", size=f * 1.3, weight="bold")

    margin = 2 * f
    minx, maxx = min(cv.xs) - margin, max(cv.xs) + margin
    miny, maxy = min(cv.ys) - margin, max(cv.ys) + margin
    vb = f"{minx:.2f} {miny:.2f} {maxx - minx:.2f} {maxy - miny:.2f}"
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{opts.width}" height="{opts.height}" '
            f'viewBox="{vb}" preserveAspectRatio="xMidYMid meet" font-family="Helvetica, Arial, sans-serif">')
    return "\n".join([head, f'<rect x="{minx:.2f}" y="{miny:.2f}" width="{maxx - minx:.2f}" '
                            f'height="{maxy - miny:.2f}" fill="white"/>'] + cv.items + ["</svg>"]) + "\n"


def render(d: FishboneDiagram, opts: RenderOptions) -> str:
    if opts.format == "json":
        return to_json(d)
    if opts.format == "dot":
        return to_dot(d)
    return to_svg(d, opts)
