"""Command-line entry point: ``dfkd <stage> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
import textwrap
from dataclasses import fields

from . import pipeline
from .config import RunConfig
from .errors import DFKDError

STAGES = ("train-teacher", "prune", "dream", "distill", "eval", "pipeline")


def _defaults_text() -> str:
    cfg = RunConfig()
    lines = ["configuration defaults (override with --config FILE.json):"]
    for section in fields(cfg):
        values = getattr(cfg, section.name)
        body = ", ".join(f"{f.name}={getattr(values, f.name)!r}" for f in fields(values))
        lines.append(textwrap.fill(f"{section.name}: {body}", 78, subsequent_indent="    "))
    lines.append("io.workdir defaults to $DFKD_WORKDIR, else 'dfkd-run'.")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfkd",
        description="Prune a CNN, synthesize images from its BatchNorm statistics, "
                    "and recover accuracy by distillation without real data.",
        epilog=_defaults_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="STAGE")
    helps = {
        "train-teacher": "train the dense teacher on the configured dataset",
        "prune": "global L1 pruning of teacher.ckpt into pruned.ckpt",
        "dream": "synthesize dreams.dfks from teacher.ckpt (no dataset input)",
        "distill": "recover pruned.ckpt on dreams.dfks into recovered.ckpt (no dataset input)",
        "eval": "evaluate all checkpoints on the test split and write ledger.csv",
        "pipeline": "run every stage in order; exit 0 only if accuracy improved",
    }
    for name in STAGES:
        p = sub.add_parser(name, help=helps[name], description=helps[name],
                           epilog=_defaults_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", metavar="PATH", help="JSON run configuration (unknown keys are rejected)")
        p.add_argument("--out", metavar="DIR", help="work directory (overrides io.workdir)")
        p.add_argument("--seed", type=int, help="seed applied to every stage")
        if name in ("prune", "pipeline"):
            p.add_argument("--amount", type=float, help="global pruning fraction (default 0.75)")
        if name in ("dream", "pipeline"):
            p.add_argument("--n-images", type=int, help="number of synthetic images (default 1024)")
            p.add_argument("--threads", type=int, default=1, help="synthesis worker threads (default 1)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out is not None:
        cfg.io.workdir = args.out
    if args.seed is not None:
        for section in (cfg.dataset, cfg.teacher, cfg.dream, cfg.distill):
            section.seed = args.seed
    if getattr(args, "amount", None) is not None:
        cfg.prune.amount = args.amount
    if getattr(args, "n_images", None) is not None:
        cfg.dream.n_images = args.n_images
        cfg.dream.batch = min(cfg.dream.batch, args.n_images)
    return cfg.validate()


def run(args) -> int:
    cfg = resolve_config(args)
    threads = getattr(args, "threads", 1)
    if threads < 1:
        raise SystemExit("dfkd: --threads must be at least 1")
    if args.stage == "pipeline":
        row = pipeline.run_pipeline(cfg, threads)
        print(", ".join(f"{k} {v}" for k, v in row.items()))
        return 0 if float(row["Improvement"]) > 0 else 1
    wd = pipeline.Workdir(cfg.io.workdir)
    if args.stage == "train-teacher":
        pipeline.echo_config(cfg, wd)
        _, report = pipeline.stage_train_teacher(cfg, wd)
        print(f"teacher test accuracy {report.accuracy:.4f}")
    elif args.stage == "prune":
        student = pipeline.stage_prune(cfg, wd)
        print(f"pruned {student.mask.pruned_count()} of {student.mask.total()} weights")
    elif args.stage == "dream":
        report = pipeline.stage_dream(cfg, wd, threads)
        m = report.metrics()
        print(f"{m['n_images']} images; bn loss {m['initial']['bn']:.4f} -> {m['final']['bn']:.4f}, "
              f"entropy {m['initial']['entropy']:.4f} -> {m['final']['entropy']:.4f}")
    elif args.stage == "distill":
        result = pipeline.stage_distill(cfg, wd)
        print(f"final kd loss {result.epoch_loss[-1]:.6f}")
    elif args.stage == "eval":
        row = pipeline.stage_eval(cfg, wd)
        print(", ".join(f"{k} {v}" for k, v in row.items()))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (DFKDError, FileNotFoundError) as e:
        print(f"dfkd: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
