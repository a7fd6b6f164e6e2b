"""One-vs-rest linear SVM for issue-ontology sentence labels, with grid search and evaluation."""
from __future__ import annotations

import csv
import enum
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

DEFAULT_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
MODEL_MAGIC = b"FBSVM"
MODEL_VERSION = 1


class IssueLabel(str, enum.Enum):
    EMPHASIZE = "Emphasize"
    IMPROVABLE = "Improvable"
    OTHERS = "Others"

    @classmethod
    def parse(cls, value: str) -> "IssueLabel":
        v = value.strip().lower()
        for label in cls:
            if label.value.lower() == v:
                return label
        raise DataError(f"unknown issue label {value!r}")

    @property
    def opposite(self) -> "IssueLabel":
        if self is IssueLabel.EMPHASIZE:
            return IssueLabel.IMPROVABLE
        if self is IssueLabel.IMPROVABLE:
            return IssueLabel.EMPHASIZE
        raise ValueError("Others has no opposite side")


CLASSES = (IssueLabel.EMPHASIZE, IssueLabel.IMPROVABLE, IssueLabel.OTHERS)
_CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}


class Split(str, enum.Enum):
    TRAIN = "Train"
    TEST = "Test"


@dataclass(frozen=True)
class LabeledSentence:
    paper_id: str
    index: int
    text: str
    label: IssueLabel
    split: Split | None = None


@dataclass
class Dataset:
    items: list[LabeledSentence]

    def subset(self, split: Split) -> list[LabeledSentence]:
        return [it for it in self.items if it.split is split]

    @property
    def train(self) -> list[LabeledSentence]:
        return self.subset(Split.TRAIN)

    @property
    def test(self) -> list[LabeledSentence]:
        return self.subset(Split.TEST)

    def counts(self) -> dict[str, dict[str, int]]:
        out = {s.value: {c.value: 0 for c in CLASSES} for s in Split}
        for it in self.items:
            if it.split is not None:
                out[it.split.value][it.label.value] += 1
        return out


@dataclass
class SvmModel:
    weights: np.ndarray            # (3, d)
    biases: np.ndarray             # (3,)
    C: float
    provider_id: str = ""
    classes: tuple[IssueLabel, ...] = CLASSES
    objective_traces: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def dimension(self) -> int:
        return int(self.weights.shape[1])

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dimension:
            raise ConfigError(f"input dimension {X.shape[1]} does not match model dimension {self.dimension}")
        return X @ self.weights.T + self.biases


@dataclass(frozen=True)
class BinarySvm:
    w: np.ndarray
    b: float
    objective_trace: list[float]
    epochs: int
    converged: bool


def primal_objective(X, y, w, b, costs) -> float:
    hinge = np.maximum(0.0, 1.0 - y * (X @ w + b))
    return 0.5 * float(w @ w) + float(costs @ hinge)


def best_bias(scores: np.ndarray, y: np.ndarray, costs: np.ndarray) -> tuple[float, float]:
    """Exact minimiser over b of sum(costs * hinge(1 - y * (scores + b))).

    The loss is convex piecewise linear in b with kinks at ``y_i - scores_i``;
    the smallest minimising kink is returned with its loss.
    """
    kinks = np.unique(y - scores)
    margins = 1.0 - y[None, :] * (scores[None, :] + kinks[:, None])
    losses = np.maximum(0.0, margins) @ costs
    k = int(np.argmin(losses))
    return float(kinks[k]), float(losses[k])


def train_binary_svm(
    X: np.ndarray,
    y: np.ndarray,
    C: float,
    costs: np.ndarray | None = None,
    tol: float = 1e-6,
    max_epochs: int = 10_000,
) -> BinarySvm:
    """Minimise 0.5*|w|^2 + sum_i C_i * hinge(1 - y_i (w.x_i + b)) for y in {-1, +1}.

    Solved in the dual by pairwise (SMO) coordinate steps on the maximal
    violating pair, which keeps sum(alpha*y) = 0 so the bias stays
    unregularised. One epoch is ``n`` pair steps. After each epoch the primal
    objective of w(alpha) is evaluated with its exact best bias; the solver
    keeps the best primal iterate seen, so the reported trace never increases.
    It stops when the duality gap drops below ``tol * max(1, primal)``, when
    no violating pair remains, or after ``max_epochs``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if C <= 0:
        raise ConfigError(f"C must be positive, got {C}")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DataError("binary SVM needs both positive and negative examples")
    Cs = np.full(n, float(C)) if costs is None else float(C) * np.asarray(costs, dtype=np.float64)
    K = X @ X.T
    diagK = np.diag(K).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)             # gradient of 0.5 a'Qa - e'a, Q = yy' * K
    eps = 1e-12

    best_w = np.zeros(X.shape[1])
    best_b, loss0 = best_bias(np.zeros(n), y, Cs)
    best_obj = loss0
    trace = [best_obj]
    converged = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        optimal = False
        for _ in range(n):
            up = ((y > 0) & (alpha < Cs)) | ((y < 0) & (alpha > 0))
            low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < Cs))
            score = -y * grad
            if not up.any() or not low.any():
                optimal = True
                break
            i = int(np.argmax(np.where(up, score, -np.inf)))
            j = int(np.argmin(np.where(low, score, np.inf)))
            if score[i] - score[j] < 1e-9:
                optimal = True
                break
            Kij = K[i, j]
            ai, aj = alpha[i], alpha[j]
            Ci, Cj = Cs[i], Cs[j]
            if y[i] != y[j]:
                quad = max(diagK[i] + diagK[j] - 2 * Kij, eps)
                delta = (-grad[i] - grad[j]) / quad
                diff = ai - aj
                ai += delta
                aj += delta
                if diff > 0:
                    if aj < 0:
                        aj, ai = 0.0, diff
                else:
                    if ai < 0:
                        ai, aj = 0.0, -diff
                if diff > Ci - Cj:
                    if ai > Ci:
                        ai, aj = Ci, Ci - diff
                else:
                    if aj > Cj:
                        aj, ai = Cj, Cj + diff
            else:
                quad = max(diagK[i] + diagK[j] - 2 * Kij, eps)
                delta = (grad[i] - grad[j]) / quad
                total = ai + aj
                ai -= delta
                aj += delta
                if total > Ci:
                    if ai > Ci:
                        ai, aj = Ci, total - Ci
                else:
                    if aj < 0:
                        aj, ai = 0.0, total
                if total > Cj:
                    if aj > Cj:
                        aj, ai = Cj, total - Cj
                else:
                    if ai < 0:
                        ai, aj = 0.0, total
            dai, daj = ai - alpha[i], aj - alpha[j]
            alpha[i], alpha[j] = ai, aj
            # Q[:, i] = y * y_i * K[:, i]
            grad += y * (y[i] * dai * K[:, i] + y[j] * daj * K[:, j])

        w = (alpha * y) @ X
        scores = X @ w
        b, loss = best_bias(scores, y, Cs)
        obj = 0.5 * float(w @ w) + loss
        if obj < best_obj:
            best_obj, best_w, best_b = obj, w, b
        trace.append(best_obj)
        dual = float(alpha.sum()) - 0.5 * float(w @ w)
        if optimal or best_obj - dual <= tol * max(1.0, abs(best_obj)):
            converged = True
            break
    return BinarySvm(best_w, best_b, trace, epoch, converged)


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = [IssueLabel(l) for l in y]
    if X.shape[0] != len(labels) or not labels:
        raise DataError(f"{X.shape[0]} vectors but {len(labels)} labels")
    idx = np.array([_CLASS_INDEX[l] for l in labels])
    for c in CLASSES:
        if not np.any(idx == _CLASS_INDEX[c]):
            raise DataError(f"class {c.value} has no training examples")
    return X, idx


def train_ovr_linear_svm(
    X,
    y: Sequence[IssueLabel],
    C: float,
    class_weights: Mapping[IssueLabel, float] | None = None,
    provider_id: str = "",
    tol: float = 1e-6,
    max_epochs: int = 10_000,
) -> SvmModel:
    """Train one binary head per class (class vs rest) on the same data order."""
    if hasattr(X, "__len__") and len(X) and hasattr(X[0], "values"):
        dims = {v.dimension for v in X}
        if len(dims) != 1:
            raise ConfigError(f"training vectors have mixed dimensions {sorted(dims)}")
        provider_id = provider_id or X[0].provider_id
        X = np.vstack([v.values for v in X])
    X, idx = _check_xy(X, y)
    costs = None
    if class_weights:
        per_class = np.array([float(class_weights.get(c, 1.0)) for c in CLASSES])
        if np.any(per_class <= 0):
            raise ConfigError("class weights must be positive")
        costs = per_class[idx]
    W, B, traces = [], [], []
    for k in range(len(CLASSES)):
        yk = np.where(idx == k, 1.0, -1.0)
        head = train_binary_svm(X, yk, C, costs=costs, tol=tol, max_epochs=max_epochs)
        if not head.converged:
            log.warning("SVM head %s hit max_epochs=%d before converging", CLASSES[k].value, max_epochs)
        W.append(head.w)
        B.append(head.b)
        traces.append(head.objective_trace)
    return SvmModel(np.vstack(W), np.array(B), float(C), provider_id, CLASSES, traces)


def argmax_label(decisions: Sequence[float]) -> IssueLabel:
    # np.argmax returns the first maximum, i.e. class order breaks ties
    return CLASSES[int(np.argmax(np.asarray(decisions, dtype=np.float64)))]


def predict(model: SvmModel, x) -> tuple[IssueLabel, np.ndarray]:
    values = x.values if hasattr(x, "values") else np.asarray(x, dtype=np.float64)
    if values.ndim != 1:
        raise ConfigError("predict takes a single vector; use predict_many for batches")
    dec = model.decision_function(values)[0]
    return argmax_label(dec), dec


def predict_many(model: SvmModel, X) -> list[IssueLabel]:
    if len(X) and hasattr(X[0], "values"):
        X = np.vstack([v.values for v in X])
    dec = model.decision_function(X)
    return [CLASSES[i] for i in np.argmax(dec, axis=1)]


# --- evaluation -------------------------------------------------------------

@dataclass
class EvalReport:
    confusion: np.ndarray
    precision: dict[IssueLabel, float]
    recall: dict[IssueLabel, float]
    f1: dict[IssueLabel, float]
    accuracy: float

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def rows(self) -> list[list[str]]:
        """Display table, metrics rounded to two decimals."""
        out = [["class", "precision", "recall", "f1", "support"]]
        for k, c in enumerate(CLASSES):
            out.append([c.value, f"{self.precision[c]:.2f}", f"{self.recall[c]:.2f}",
                        f"{self.f1[c]:.2f}", str(int(self.confusion[k].sum()))])
        out.append(["accuracy", "", "", f"{self.accuracy:.2f}", str(self.total)])
        return out

    def to_dict(self) -> dict:
        return {
            "classes": [c.value for c in CLASSES],
            "confusion": self.confusion.astype(int).tolist(),
            "precision": {c.value: self.precision[c] for c in CLASSES},
            "recall": {c.value: self.recall[c] for c in CLASSES},
            "f1": {c.value: self.f1[c] for c in CLASSES},
            "accuracy": self.accuracy,
        }


def confusion_matrix(pred: Sequence[IssueLabel], gold: Sequence[IssueLabel]) -> np.ndarray:
    if len(pred) != len(gold):
        raise DataError(f"{len(pred)} predictions but {len(gold)} gold labels")
    if not gold:
        raise DataError("cannot evaluate an empty set")
    M = np.zeros((len(CLASSES), len(CLASSES)), dtype=np.int64)
    for p, g in zip(pred, gold):
        M[_CLASS_INDEX[IssueLabel(g)], _CLASS_INDEX[IssueLabel(p)]] += 1
    return M


def report_from_confusion(M) -> EvalReport:
    M = np.asarray(M, dtype=np.int64)
    precision, recall, f1 = {}, {}, {}
    for k, c in enumerate(CLASSES):
        tp = int(M[k, k])
        col, row = int(M[:, k].sum()), int(M[k, :].sum())
        p = tp / col if col else 0.0
        r = tp / row if row else 0.0
        precision[c], recall[c] = p, r
        f1[c] = 2 * p * r / (p + r) if p + r else 0.0
    total = int(M.sum())
    return EvalReport(M, precision, recall, f1, int(np.trace(M)) / total if total else 0.0)


def evaluate(pred: Sequence[IssueLabel], gold: Sequence[IssueLabel]) -> EvalReport:
    return report_from_confusion(confusion_matrix(pred, gold))


# --- splitting and model selection ------------------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(items: Sequence[LabeledSentence], test_fraction: float, seed: int) -> Dataset:
    """Shuffle each class with one seeded generator and hold out round(fraction * size) items.

    Halves round up, and the held-out count is kept within [1, size - 1] so
    both splits see every class.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_ids: set[int] = set()
    for c in CLASSES:
        members = [i for i, it in enumerate(items) if it.label is c]
        if not members:
            continue
        if len(members) < 2:
            raise DataError(f"class {c.value} has {len(members)} item(s); need at least 2 to split")
        n_test = min(max(_round_half_up(test_fraction * len(members)), 1), len(members) - 1)
        order = rng.permutation(len(members))
        test_ids.update(members[k] for k in order[:n_test])
    return Dataset([
        LabeledSentence(it.paper_id, it.index, it.text, it.label,
                        Split.TEST if i in test_ids else Split.TRAIN)
        for i, it in enumerate(items)
    ])


def stratified_folds(labels: Sequence[IssueLabel], folds: int, seed: int) -> list[np.ndarray]:
    if folds < 2:
        raise ConfigError(f"need at least 2 folds, got {folds}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    for c in CLASSES:
        members = np.array([i for i, l in enumerate(labels) if l is c], dtype=np.int64)
        if len(members) < folds:
            raise DataError(
                f"class {c.value} has {len(members)} training items, fewer than {folds} folds; "
                f"use --folds {max(2, len(members))} or fewer")
        shuffled = members[rng.permutation(len(members))]
        assignment[shuffled] = np.arange(len(members)) % folds
    return [np.flatnonzero(assignment == f) for f in range(folds)]


@dataclass
class GridSearchResult:
    best_C: float
    scores: dict[float, float]
    fold_scores: dict[float, list[float]]


def grid_search(
    X,
    y: Sequence[IssueLabel],
    grid: Sequence[float] = DEFAULT_GRID,
    folds: int = 5,
    seed: int = 0,
    class_weights: Mapping[IssueLabel, float] | None = None,
) -> GridSearchResult:
    """Pick C by mean stratified k-fold accuracy; ties go to the smaller C."""
    if not grid:
        raise ConfigError("grid must contain at least one C value")
    if hasattr(X, "__len__") and len(X) and hasattr(X[0], "values"):
        X = np.vstack([v.values for v in X])
    X = np.asarray(X, dtype=np.float64)
    y = [IssueLabel(l) for l in y]
    parts = stratified_folds(y, folds, seed)
    scores, fold_scores = {}, {}
    for C in grid:
        accs = []
        for f, test_idx in enumerate(parts):
            train_idx = np.sort(np.concatenate([p for g, p in enumerate(parts) if g != f]))
            model = train_ovr_linear_svm(X[train_idx], [y[i] for i in train_idx], C, class_weights)
            pred = predict_many(model, X[test_idx])
            accs.append(sum(p is y[i] for p, i in zip(pred, test_idx)) / len(test_idx))
        fold_scores[float(C)] = accs
        scores[float(C)] = float(np.mean(accs))
    top = max(scores.values())
    best = min(C for C, s in scores.items() if s >= top - 1e-12)
    return GridSearchResult(best, scores, fold_scores)


def grid_search_dataset(dataset: Dataset, grid, folds, seed, embed, class_weights=None) -> GridSearchResult:
    train = dataset.train
    if not train:
        raise DataError("dataset has no Train items")
    X = embed([it.text for it in train])
    return grid_search(X, [it.label for it in train], grid, folds, seed, class_weights)


# --- files -------------------------------------------------------------------

ANNOTATION_COLUMNS = ("paper_id", "sentence_index", "text", "label")


def read_annotations(path) -> list[LabeledSentence]:
    """Read a tab-separated annotation file (paper_id, sentence_index, text, label[, split])."""
    path = Path(path)
    try:
        fh = path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read annotations {path}: {exc}") from exc
    out = []
    with fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = [c for c in ANNOTATION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                split = row.get("split") or None
                out.append(LabeledSentence(
                    row["paper_id"], int(row["sentence_index"]), row["text"],
                    IssueLabel.parse(row["label"]), Split(split.strip().capitalize()) if split else None))
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_annotations(items: Iterable[LabeledSentence], path, with_split: bool = True) -> None:
    cols = list(ANNOTATION_COLUMNS) + (["split"] if with_split else [])
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(cols)
        for it in items:
            row = [it.paper_id, it.index, it.text, it.label.value]
            if with_split:
                row.append(it.split.value if it.split else "")
            w.writerow(row)


def save_model(model: SvmModel, path) -> None:
    """Binary layout (little-endian): magic, u16 version, u32 dim, f64 C, u16-length
    provider id, u8 class count, u16-length class names, then float32 weights
    (row per class) and float32 biases."""
    pid = model.provider_id.encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<HIdH", MODEL_VERSION, model.dimension, model.C, len(pid)), pid,
             struct.pack("<B", len(model.classes))]
    for c in model.classes:
        name = c.value.encode("utf-8")
        parts += [struct.pack("<H", len(name)), name]
    parts += [model.weights.astype("<f4").tobytes(), model.biases.astype("<f4").tobytes()]
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> SvmModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    try:
        if not data.startswith(MODEL_MAGIC):
            raise ValueError("not a model file")
        off = len(MODEL_MAGIC)
        version, dim, C, plen = struct.unpack_from("<HIdH", data, off)
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        off += struct.calcsize("<HIdH")
        pid = data[off:off + plen].decode("utf-8")
        off += plen
        (ncls,) = struct.unpack_from("<B", data, off)
        off += 1
        classes = []
        for _ in range(ncls):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            classes.append(IssueLabel(data[off:off + ln].decode("utf-8")))
            off += ln
        if tuple(classes) != CLASSES:
            raise ValueError(f"unexpected class order {classes}")
        W = np.frombuffer(data, dtype="<f4", count=ncls * dim, offset=off).astype(np.float64).reshape(ncls, dim)
        off += 4 * ncls * dim
        B = np.frombuffer(data, dtype="<f4", count=ncls, offset=off).astype(np.float64)
        if off + 4 * ncls != len(data):
            raise ValueError("trailing bytes")
    except (ValueError, struct.error) as exc:
        raise DataError(f"corrupt model file {path}: {exc}") from exc
    return SvmModel(W, B, C, pid, CLASSES)
