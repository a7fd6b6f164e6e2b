"""File-based pipeline stages with a shared run manifest.

Every stage reads the previous stage's artifact from the output directory and
writes its own, so stages can be re-run one at a time.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from . import classifier as clf
from .classifier import IssueLabel, Split
from .corpus import TopicFilter, extract_introduction, filter_by_topic, load_corpus, write_corpus
from .diagram import BuildConfig, TaskClustering, build_fishbone, cluster_tasks, validate
from .embedding import CachedEmbedder, EmbeddingProviderConfig, make_embedder
from .errors import ConfigError, DataError
from .render import RenderOptions, from_json, render, to_json
from .segment import Sentence, apply_overrides, load_overrides, segment_paper
from .summarizer import SummarizerProviderConfig, Summarizer, make_chat_provider

log = logging.getLogger(__name__)

PAPERS = "papers.jsonl"
SENTENCES = "sentences.tsv"
SPLIT = "split.tsv"
MODEL = "model.bin"
GRID = "grid.tsv"
EVAL_TSV = "eval_report.tsv"
EVAL_JSON = "eval_report.json"
LABELS = "labels.tsv"
TASKS = "tasks.json"
DIAGRAM = "diagram.json"
MANIFEST = "manifest.json"
LOCK = ".fishbone.lock"

PRODUCER = {PAPERS: "ingest", SENTENCES: "segment", MODEL: "train", LABELS: "classify",
            TASKS: "cluster", DIAGRAM: "build"}

# keys describing where a run happens rather than what it computes
_LOCATION_KEYS = {"output_dir", "cache_dir"}


@dataclass
class PipelineConfig:
    corpus: str | None = None
    topic: str | None = None
    case_sensitive: bool = False
    overrides: str | None = None
    prelude_k: int = 2
    task_k: int | None = None
    k_range: tuple[int, int] = (2, 8)
    fine_bones: int = 3
    n_init: int = 10
    embedding: EmbeddingProviderConfig = field(default_factory=EmbeddingProviderConfig)
    summarizer: SummarizerProviderConfig = field(default_factory=SummarizerProviderConfig)
    model: str | None = None
    training_data: str | None = None
    grid: tuple[float, ...] = clf.DEFAULT_GRID
    folds: int = 5
    test_fraction: float = 0.25
    class_weights: dict[str, float] | None = None
    seed: int | None = None
    cache_dir: str | None = None
    output_dir: str = "out"
    render_formats: tuple[str, ...] = ("json", "dot", "svg")
    svg_width: int = 1600
    svg_height: int = 900
    font_size: float = 12.0
    max_label: int = 48

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any], base: Path | None = None) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        kw = dict(raw)
        try:
            if isinstance(kw.get("embedding"), Mapping):
                kw["embedding"] = EmbeddingProviderConfig(**kw["embedding"])
            if isinstance(kw.get("summarizer"), Mapping):
                kw["summarizer"] = SummarizerProviderConfig(**kw["summarizer"])
            for key in ("k_range", "grid", "render_formats"):
                if key in kw and kw[key] is not None:
                    kw[key] = tuple(kw[key])
            cfg = cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        if base is not None:
            for key in ("corpus", "overrides", "model", "training_data", "cache_dir", "output_dir"):
                val = getattr(cfg, key)
                if val is not None and not Path(val).is_absolute():
                    setattr(cfg, key, str(base / val))
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        return cls.from_mapping(raw, path.parent)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (set \"seed\" in the config or pass --seed)")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        return self.seed

    def config_hash(self) -> str:
        # file locations and run directories do not change results
        content = {k: v for k, v in asdict(self).items() if k not in _LOCATION_KEYS}
        for key in ("corpus", "overrides", "model", "training_data"):
            if content.get(key):
                content[key] = Path(content[key]).name
        return hashlib.sha256(json.dumps(content, sort_keys=True, default=str).encode()).hexdigest()

    def build_config(self) -> BuildConfig:
        return BuildConfig(self.task_k, tuple(self.k_range), self.fine_bones, self.prelude_k,
                           self.require_seed(), self.n_init)

    def weights(self) -> dict[IssueLabel, float] | None:
        if not self.class_weights:
            return None
        return {IssueLabel.parse(k): float(v) for k, v in self.class_weights.items()}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text, encoding="utf-8", newline="")
    os.replace(tmp, path)


class RunContext:
    """Shared state for stages writing into one output directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.warnings: list[str] = []
        self.timings: dict[str, float] = {}
        self.outputs: dict[str, str] = {}
        self._embedder = None
        self._summarizer = None

    @property
    def embedder(self):
        if self._embedder is None:
            self._embedder = make_embedder(self.cfg.embedding, self.cfg.cache_dir)
        return self._embedder

    @property
    def summarizer(self) -> Summarizer:
        if self._summarizer is None:
            self._summarizer = Summarizer(make_chat_provider(self.cfg.summarizer, self.cfg.cache_dir))
        return self._summarizer

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise DataError(f"{p} not found; run `fishbone {PRODUCER.get(name, 'pipeline')}` first")
        return p

    def record(self, *names: str) -> None:
        for name in names:
            self.outputs[name] = sha256_file(self.path(name))

    def provider_counts(self) -> dict[str, int]:
        counts = {"embedding_remote_calls": 0, "embedding_cache_hits": 0, "chat_remote_calls": 0,
                  "chat_cache_hits": 0, "summarizer_fallbacks": 0}
        emb = self._embedder
        if emb is not None:
            inner = emb.provider if isinstance(emb, CachedEmbedder) else emb
            if inner.kind == "remote":
                counts["embedding_remote_calls"] = inner.calls
            if isinstance(emb, CachedEmbedder):
                counts["embedding_cache_hits"] = emb.hits
        if self._summarizer is not None:
            prov = self._summarizer.provider
            if prov.kind == "remote":
                counts["chat_remote_calls"] = prov.calls
                counts["chat_cache_hits"] = prov.cache_hits
            counts["summarizer_fallbacks"] = self._summarizer.fallbacks
        return counts

    def all_warnings(self) -> list[str]:
        out = list(self.warnings)
        if isinstance(self._embedder, CachedEmbedder):
            out += self._embedder.warnings
        if self._summarizer is not None:
            out += self._summarizer.warnings
        return out

    def write_manifest(self, status: str = "ok", error: str | None = None) -> Path:
        path = self.path(MANIFEST)
        manifest: dict[str, Any] = {}
        if path.exists():
            try:
                manifest = json.loads(path.read_text(encoding="utf-8"))
            except ValueError:
                manifest = {}
        manifest["config_hash"] = self.cfg.config_hash()
        manifest.setdefault("stage_timings", {}).update({k: round(v, 4) for k, v in self.timings.items()})
        manifest.setdefault("output_digests", {}).update(self.outputs)
        manifest["warnings"] = self.all_warnings()
        manifest["provider_calls"] = self.provider_counts()
        manifest["status"] = status
        if error:
            manifest["error"] = error
        else:
            manifest.pop("error", None)
        atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


@contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out} is locked by another run (remove {lock} if that run is gone)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


@contextmanager
def _timed(ctx: RunContext, stage: str):
    t0 = time.perf_counter()
    yield
    ctx.timings[stage] = time.perf_counter() - t0


# --- tabular artifacts -----------------------------------------------------------

def write_sentences(papers: Mapping[str, list[Sentence]], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["paper_id", "sentence_index", "text"])
        for pid, sents in papers.items():
            for s in sents:
                w.writerow([pid, s.index, s.text])


def read_sentences(path) -> dict[str, list[Sentence]]:
    papers: dict[str, list[Sentence]] = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            pid = row["paper_id"]
            papers.setdefault(pid, []).append(Sentence(pid, int(row["sentence_index"]), row["text"]))
    return papers


def write_labels(rows, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["paper_id", "sentence_index", "text", "label"] + [f"decision_{c.value}" for c in clf.CLASSES])
        for s, label, dec in rows:
            w.writerow([s.paper_id, s.index, s.text, label.value] + [f"{v:.6f}" for v in dec])


def read_labels(path) -> dict[tuple[str, int], IssueLabel]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return {(r["paper_id"], int(r["sentence_index"])): IssueLabel.parse(r["label"])
                for r in csv.DictReader(fh, delimiter="\t")}


def write_table(rows, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, delimiter="\t", lineterminator="\n").writerows(rows)


# --- stages ----------------------------------------------------------------------

def stage_ingest(ctx: RunContext) -> int:
    cfg = ctx.cfg
    if not cfg.corpus:
        raise ConfigError("no corpus given (config \"corpus\" or --corpus)")
    if not cfg.topic:
        raise ConfigError("no topic keyword given (config \"topic\" or --topic)")
    topic = TopicFilter(cfg.topic, cfg.case_sensitive)
    with _timed(ctx, "ingest"):
        n = write_corpus(filter_by_topic(load_corpus(cfg.corpus, ctx.warnings), topic), ctx.path(PAPERS))
    if n == 0:
        ctx.warnings.append(f"no paper mentions {cfg.topic!r}")
    ctx.record(PAPERS)
    return n


def stage_segment(ctx: RunContext) -> dict[str, list[Sentence]]:
    src = ctx.need(PAPERS)
    with _timed(ctx, "segment"):
        papers: dict[str, list[Sentence]] = {}
        for rec in load_corpus(src, ctx.warnings):
            intro = extract_introduction(rec)
            if intro is None:
                ctx.warnings.append(f"paper {rec.paper_id!r} has no introduction section")
                papers[rec.paper_id] = []
                continue
            papers[rec.paper_id] = segment_paper(rec.paper_id, intro)
        if ctx.cfg.overrides:
            papers = apply_overrides(papers, load_overrides(ctx.cfg.overrides), ctx.warnings)
        write_sentences(papers, ctx.path(SENTENCES))
    ctx.record(SENTENCES)
    return papers


def _dataset(ctx: RunContext, path) -> clf.Dataset:
    items = clf.read_annotations(path)
    if not items:
        raise DataError(f"{path} has no annotated sentences")
    if all(it.split is not None for it in items):
        return clf.Dataset(items)
    return clf.stratified_split(items, ctx.cfg.test_fraction, ctx.cfg.require_seed())


def _vectors(ctx: RunContext, texts):
    return ctx.embedder.embed(list(texts))


def stage_train(ctx: RunContext) -> clf.SvmModel:
    cfg = ctx.cfg
    seed = cfg.require_seed()
    if not cfg.training_data:
        raise ConfigError("no training data given (config \"training_data\" or --data)")
    with _timed(ctx, "train"):
        ds = _dataset(ctx, cfg.training_data)
        clf.write_annotations(ds.items, ctx.path(SPLIT))
        train = ds.train
        if not train:
            raise DataError("training split is empty")
        X = _vectors(ctx, [it.text for it in train])
        y = [it.label for it in train]
        gs = clf.grid_search(X, y, cfg.grid, cfg.folds, seed, cfg.weights())
        model = clf.train_ovr_linear_svm(X, y, gs.best_C, cfg.weights(), ctx.embedder.provider_id)
        clf.save_model(model, ctx.path(MODEL))
        rows = [["C", "mean_cv_accuracy"] + [f"fold_{i + 1}" for i in range(cfg.folds)]]
        for C in cfg.grid:
            rows.append([f"{C:g}", f"{gs.scores[float(C)]:.6f}"] + [f"{a:.6f}" for a in gs.fold_scores[float(C)]])
        rows.append(["best_C", f"{gs.best_C:g}"])
        write_table(rows, ctx.path(GRID))
        from .plotting import plot_grid
        plot_grid(gs.scores, gs.best_C, ctx.path("grid.png"))
    ctx.record(SPLIT, MODEL, GRID, "grid.png")
    return model


def _load_model(ctx: RunContext) -> clf.SvmModel:
    path = Path(ctx.cfg.model) if ctx.cfg.model else ctx.need(MODEL)
    model = clf.load_model(path)
    if model.provider_id and model.provider_id != ctx.embedder.provider_id:
        raise ConfigError(f"model was trained on embeddings from {model.provider_id!r}, "
                          f"but the configured provider is {ctx.embedder.provider_id!r}")
    if model.dimension != ctx.embedder.dimension:
        raise ConfigError(f"model dimension {model.dimension} != embedding dimension {ctx.embedder.dimension}")
    return model


def write_eval(ctx: RunContext, report: clf.EvalReport) -> None:
    write_table(report.rows(), ctx.path(EVAL_TSV))
    atomic_write_text(ctx.path(EVAL_JSON), json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    from .plotting import plot_confusion
    plot_confusion(report, ctx.path("confusion.png"))
    ctx.record(EVAL_TSV, EVAL_JSON, "confusion.png")


def stage_eval(ctx: RunContext, data=None, predictions=None) -> clf.EvalReport:
    """Score predictions against gold labels.

    With ``predictions`` (an annotation file) rows are matched on
    (paper_id, sentence_index); otherwise the model labels the Test split of
    ``data`` (all rows when no split is recorded).
    """
    data = data or (ctx.path(SPLIT) if ctx.path(SPLIT).exists() else ctx.cfg.training_data)
    if not data:
        raise ConfigError("no evaluation data given (--data)")
    with _timed(ctx, "eval"):
        gold_items = clf.read_annotations(data)
        if predictions:
            pred_map = {(p.paper_id, p.index): p.label for p in clf.read_annotations(predictions)}
            missing = [(g.paper_id, g.index) for g in gold_items if (g.paper_id, g.index) not in pred_map]
            if missing:
                raise DataError(f"{len(missing)} gold sentence(s) have no prediction, e.g. {missing[0]}")
            gold = [g.label for g in gold_items]
            pred = [pred_map[(g.paper_id, g.index)] for g in gold_items]
        else:
            model = _load_model(ctx)
            test = [g for g in gold_items if g.split is Split.TEST] or gold_items
            pred = clf.predict_many(model, _vectors(ctx, [g.text for g in test]))
            gold = [g.label for g in test]
        report = clf.evaluate(pred, gold)
        write_eval(ctx, report)
    return report


def stage_classify(ctx: RunContext) -> dict[tuple[str, int], IssueLabel]:
    papers = read_sentences(ctx.need(SENTENCES))
    with _timed(ctx, "classify"):
        model = _load_model(ctx)
        flat = [s for sents in papers.values() for s in sents]
        rows = []
        if flat:
            vecs = _vectors(ctx, [s.text for s in flat])
            for s, v in zip(flat, vecs):
                label, dec = clf.predict(model, v)
                rows.append((s, label, dec))
        write_labels(rows, ctx.path(LABELS))
    ctx.record(LABELS)
    return {(s.paper_id, s.index): label for s, label, _ in rows}


def stage_cluster(ctx: RunContext) -> TaskClustering:
    papers = read_sentences(ctx.need(SENTENCES))
    with _timed(ctx, "cluster"):
        tasks = cluster_tasks(papers, ctx.embedder, ctx.cfg.build_config(), ctx.warnings)
        atomic_write_text(ctx.path(TASKS), json.dumps(tasks.to_dict(), indent=2, sort_keys=True) + "\n")
        names = [TASKS]
        if len(tasks.silhouettes) > 1:
            from .plotting import plot_silhouettes
            plot_silhouettes(tasks.silhouettes, tasks.k, ctx.path("silhouette.png"))
            names.append("silhouette.png")
    ctx.record(*names)
    return tasks


def stage_build(ctx: RunContext):
    papers = read_sentences(ctx.need(SENTENCES))
    labels = read_labels(ctx.need(LABELS))
    tasks = TaskClustering.from_dict(json.loads(ctx.need(TASKS).read_text(encoding="utf-8")))
    cfg = ctx.cfg
    if not cfg.topic:
        raise ConfigError("no topic given (config \"topic\" or --topic)")
    with _timed(ctx, "build"):
        provenance = {
            "seed": cfg.require_seed(),
            "embedding_provider": ctx.embedder.provider_id,
            "summarizer_provider": ctx.summarizer.provider.provider_id,
            "config_hash": cfg.config_hash(),
            "task_k": tasks.k,
            "fine_bones": cfg.fine_bones,
            "prelude_k": cfg.prelude_k,
        }
        diagram = build_fishbone(cfg.topic, {p: papers[p] for p in tasks.paper_ids}, labels, ctx.embedder,
                                 ctx.summarizer, cfg.build_config(), tasks, ctx.warnings, provenance)
        problems = validate(diagram)
        if problems:
            raise DataError("built diagram is invalid: " + "; ".join(problems[:5]))
        atomic_write_text(ctx.path(DIAGRAM), to_json(diagram))
    ctx.record(DIAGRAM)
    return diagram


def stage_render(ctx: RunContext, fmt: str, out=None) -> Path:
    diagram = from_json(ctx.need(DIAGRAM).read_text(encoding="utf-8"))
    cfg = ctx.cfg
    opts = RenderOptions(fmt, cfg.svg_width, cfg.svg_height, cfg.font_size, cfg.max_label)
    target = Path(out) if out else ctx.path(f"fishbone.{fmt}")
    with _timed(ctx, f"render_{fmt}"):
        target.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(target, render(diagram, opts))
    if target.parent.resolve() == ctx.out.resolve():
        ctx.record(target.name)
    return target


def run_pipeline(cfg: PipelineConfig) -> RunContext:
    """ingest -> segment -> [train -> eval] -> classify -> cluster -> build -> render."""
    cfg.require_seed()
    if not cfg.model and not cfg.training_data:
        raise ConfigError("config needs either \"model\" or \"training_data\" for classification")
    ctx = RunContext(cfg)
    with output_lock(ctx.out):
        try:
            stage_ingest(ctx)
            stage_segment(ctx)
            if not cfg.model:
                stage_train(ctx)
                stage_eval(ctx)
            stage_classify(ctx)
            stage_cluster(ctx)
            stage_build(ctx)
            for fmt in cfg.render_formats:
                stage_render(ctx, fmt)
        except Exception as exc:
            ctx.write_manifest("failed", f"{type(exc).__name__}: {exc}")
            raise
        ctx.write_manifest()
    return ctx
