"""File-to-file pipeline stages: train-teacher, prune, dream, distill, eval.

Every stage reads and writes only files in the work directory, so any stage
can be rerun on its own.  The dream and distill stages take no dataset: after
the teacher is trained, only the test split is ever read (by eval).
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import data as datasets
from .config import RunConfig
from .distill import accuracy_ledger, distill, evaluate, ledger_csv
from .dream import SynDataset, dump_ppm, generate_dataset
from .nn.checkpoint import atomic_write, checkpoint_bytes, file_hash, load_checkpoint
from .prune import prune, sparsity_csv, sparsity_report
from .train import train_teacher

log = logging.getLogger(__name__)

TEACHER = "teacher.ckpt"
PRUNED = "pruned.ckpt"
DREAMS = "dreams.dfks"
RECOVERED = "recovered.ckpt"
LEDGER = "ledger.csv"
CONFIG_ECHO = "config.json"
LOGS = "logs"


@dataclass
class Workdir:
    root: Path
    written: list[Path] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        (self.root / LOGS).mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    def write(self, name: str, payload: bytes | str) -> Path:
        p = self.root / name
        atomic_write(p, payload.encode() if isinstance(payload, str) else payload)
        self.written.append(p)
        return p

    def mark_partial(self) -> list[Path]:
        """Rename this run's outputs to ``<name>.partial`` after a failed stage."""
        moved = []
        for p in dict.fromkeys(self.written):
            if p.exists():
                dst = p.with_name(p.name + ".partial")
                os.replace(p, dst)
                moved.append(dst)
        return moved


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def echo_config(cfg: RunConfig, wd: Workdir) -> Path:
    return wd.write(CONFIG_ECHO, cfg.dumps())


def stage_train_teacher(cfg: RunConfig, wd: Workdir):
    train = datasets.load_dataset(cfg.dataset, "train")
    test = datasets.load_dataset(cfg.dataset, "test")
    teacher, history = train_teacher(train, cfg.teacher)
    report = evaluate(teacher, test)
    teacher.meta = {"role": "teacher", "test_accuracy": report.accuracy, "dataset": train.meta}
    wd.write(TEACHER, checkpoint_bytes(teacher))
    wd.write(f"{LOGS}/teacher_loss.csv", _csv(["epoch", "loss"], [(e, repr(l)) for e, l in enumerate(history)]))
    log.info("teacher test accuracy %.4f", report.accuracy)
    return teacher, report


def stage_prune(cfg: RunConfig, wd: Workdir):
    teacher = load_checkpoint(wd.path(TEACHER))
    student = prune(teacher, cfg.prune.amount)
    student.meta = {"role": "pruned", "teacher_hash": file_hash(wd.path(TEACHER))}
    wd.write(PRUNED, checkpoint_bytes(student))
    rows = sparsity_report(student, student.mask)
    wd.write(f"{LOGS}/sparsity.csv", sparsity_csv(rows))
    log.info("pruned %d of %d prunable weights", student.mask.pruned_count(), student.mask.total())
    return student


def stage_dream(cfg: RunConfig, wd: Workdir, threads: int = 1):
    teacher = load_checkpoint(wd.path(TEACHER))
    report = generate_dataset(teacher, cfg.dream, workers=threads, teacher_hash=file_hash(wd.path(TEACHER)))
    wd.write(DREAMS, report.dataset.to_bytes())
    wd.write(f"{LOGS}/dream_loss.csv", report.loss_csv())
    wd.write(f"{LOGS}/dream_metrics.json", _json(report.metrics()))
    if cfg.io.dump_ppm:
        dump_ppm(report.dataset, wd.path("ppm"))
    return report


def stage_distill(cfg: RunConfig, wd: Workdir):
    teacher = load_checkpoint(wd.path(TEACHER))
    student = load_checkpoint(wd.path(PRUNED))
    data = SynDataset.load(wd.path(DREAMS))
    result = distill(student, student.mask, teacher, data, cfg.distill)
    student.meta = {"role": "recovered", "teacher_hash": file_hash(wd.path(TEACHER)),
                    "dreams_hash": file_hash(wd.path(DREAMS))}
    wd.write(RECOVERED, checkpoint_bytes(student))
    wd.write(f"{LOGS}/distill.csv", result.metrics_csv())
    return result


def stage_eval(cfg: RunConfig, wd: Workdir) -> dict:
    """Evaluate teacher, pruned and recovered checkpoints on the test split; writes ledger.csv."""
    test = datasets.load_dataset(cfg.dataset, "test")
    reports = {name: evaluate(load_checkpoint(wd.path(f)), test)
               for name, f in (("teacher", TEACHER), ("pruned", PRUNED), ("recovered", RECOVERED))}
    row = accuracy_ledger(*(100 * reports[k].accuracy for k in ("teacher", "pruned", "recovered")))
    wd.write(LEDGER, ledger_csv([row]))
    wd.write(f"{LOGS}/eval.json", _json({k: {"accuracy": r.accuracy, "per_class": r.per_class.tolist(),
                                              "count": r.count} for k, r in reports.items()}))
    log.info("ledger: %s", row)
    return row


def run_pipeline(cfg: RunConfig, threads: int = 1, train_teacher_stage: bool = True) -> dict:
    """Teacher -> prune -> dream -> distill -> eval.  Returns the ledger row.

    On failure, every artifact written by this run is renamed with a
    ``.partial`` suffix before the exception propagates.
    """
    wd = Workdir(cfg.io.workdir)
    try:
        echo_config(cfg, wd)
        if train_teacher_stage:
            stage_train_teacher(cfg, wd)
        stage_prune(cfg, wd)
        stage_dream(cfg, wd, threads)
        stage_distill(cfg, wd)
        return stage_eval(cfg, wd)
    except BaseException:
        moved = wd.mark_partial()
        log.error("pipeline failed; %d artifacts kept with .partial suffix", len(moved))
        raise
