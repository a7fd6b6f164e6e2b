"""Command line interface: one subcommand per pipeline stage plus ``pipeline``.

Exit status: 0 ok, 1 usage or configuration error, 2 data error, 3 provider error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .errors import ConfigError, FishboneError
from .pipeline import (PipelineConfig, RunContext, output_lock, run_pipeline, stage_build, stage_classify,
                       stage_cluster, stage_eval, stage_ingest, stage_render, stage_segment, stage_train)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _k_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.replace("..", ",").replace("-", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO..HI, got {text!r}") from None
    return lo, hi


def _weights(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        name, _, val = part.partition("=")
        try:
            out[name.strip()] = float(val)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected Label=weight pairs, got {text!r}") from None
    return out


# flag dest -> config field
_OVERRIDES = {
    "corpus": "corpus", "topic": "topic", "case_sensitive": "case_sensitive", "overrides": "overrides",
    "prelude_k": "prelude_k", "k": "task_k", "k_range": "k_range", "fine_bones": "fine_bones",
    "n_init": "n_init", "seed": "seed", "cache_dir": "cache_dir", "out_dir": "output_dir",
    "model": "model", "data": "training_data", "grid": "grid", "folds": "folds",
    "test_fraction": "test_fraction", "class_weights": "class_weights",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config (JSON); flags override its values")
    p.add_argument("--out-dir", help="directory holding stage artifacts and manifest.json")
    p.add_argument("--cache-dir", help="embedding/chat cache directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--embedding", choices=["hashing", "remote"], help="embedding provider kind")
    p.add_argument("--dimension", type=int, help="embedding dimension")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fishbone", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="filter a JSON-lines corpus by topic keyword")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--topic")
    p.add_argument("--case-sensitive", action="store_true", default=None)

    p = sub.add_parser("segment", help="split introductions into sentences")
    _common(p)
    p.add_argument("--overrides", help="JSON file mapping paper_id to a corrected sentence list")

    p = sub.add_parser("train", help="grid-search and train the issue classifier")
    _common(p)
    p.add_argument("--data", help="annotation TSV: paper_id, sentence_index, text, label[, split]")
    p.add_argument("--grid", type=_floats, help="comma-separated C values")
    p.add_argument("--folds", type=int)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--class-weights", type=_weights, help="e.g. Improvable=2,Emphasize=1")

    p = sub.add_parser("eval", help="score a model or a predictions file against gold labels")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--data", dest="eval_data", help="gold annotation TSV")
    p.add_argument("--pred", help="predictions in annotation TSV format (instead of --model)")

    p = sub.add_parser("classify", help="label segmented sentences with the trained model")
    _common(p)
    p.add_argument("--model")

    p = sub.add_parser("cluster", help="cluster papers into tasks by their prelude sentences")
    _common(p)
    p.add_argument("--k", type=int, help="fixed number of tasks")
    p.add_argument("--k-range", type=_k_range, help="range searched by silhouette, e.g. 2..8")
    p.add_argument("--n-init", type=int)
    p.add_argument("--prelude-k", type=int)

    p = sub.add_parser("build", help="assemble the fish-bone diagram")
    _common(p)
    p.add_argument("--topic")
    p.add_argument("--fine-bones", type=int, help="fine-bones per backbone (n)")
    p.add_argument("--n-init", type=int)
    p.add_argument("--prelude-k", type=int)

    p = sub.add_parser("render", help="write the diagram as JSON, DOT or SVG")
    _common(p)
    p.add_argument("--format", choices=["json", "dot", "svg"], default="svg")
    p.add_argument("--out", help="output file (default <out-dir>/fishbone.<format>)")

    p = sub.add_parser("pipeline", help="run every stage from a config file")
    _common(p)
    return parser


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    updates = {}
    for dest, key in _OVERRIDES.items():
        val = getattr(args, dest, None)
        if val is not None:
            updates[key] = val
    cfg = dataclasses.replace(cfg, **updates)
    if args.embedding or args.dimension:
        cfg.embedding = dataclasses.replace(
            cfg.embedding, **{k: v for k, v in (("kind", args.embedding), ("dimension", args.dimension)) if v})
    return cfg


def _run(args) -> int:
    cfg = config_from_args(args)
    if args.command == "pipeline":
        if not args.config:
            raise ConfigError("pipeline needs --config")
        ctx = run_pipeline(cfg)
        print(f"pipeline finished; artifacts in {ctx.out}")
        return 0
    ctx = RunContext(cfg)
    with output_lock(ctx.out):
        try:
            if args.command == "ingest":
                n = stage_ingest(ctx)
                print(f"{n} paper(s) kept")
            elif args.command == "segment":
                papers = stage_segment(ctx)
                print(f"{sum(map(len, papers.values()))} sentence(s) from {len(papers)} paper(s)")
            elif args.command == "train":
                model = stage_train(ctx)
                print(f"trained model with C={model.C:g}")
            elif args.command == "eval":
                report = stage_eval(ctx, args.eval_data, args.pred)
                for row in report.rows():
                    print("\t".join(row))
            elif args.command == "classify":
                labels = stage_classify(ctx)
                print(f"{len(labels)} sentence(s) labelled")
            elif args.command == "cluster":
                tasks = stage_cluster(ctx)
                print(f"{len(tasks.paper_ids)} paper(s) in {tasks.k} task cluster(s)")
            elif args.command == "build":
                d = stage_build(ctx)
                print(f"diagram with {len(d.joints)} joint(s)")
            elif args.command == "render":
                print(stage_render(ctx, args.format, args.out))
        except Exception as exc:
            ctx.write_manifest("failed", f"{type(exc).__name__}: {exc}")
            raise
        ctx.write_manifest()
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except FishboneError as exc:
        print(f"fishbone: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
