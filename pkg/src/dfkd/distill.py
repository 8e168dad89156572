"""Recovery by distillation onto the pruned student, plus evaluation helpers."""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import SGD, Tensor, as_tensor, backward, clamp, log, no_grad, reduce
from .config import DistillConfig
from .data import LabeledDataset
from .dream import SynDataset
from .errors import ContractError, DivergenceError, NonFiniteError
from .nn import functional as F
from .nn.checkpoint import model_hash
from .nn.model import Model, mode
from .prune import MaskSet, apply_mask
from .train import minibatches

logger = logging.getLogger(__name__)


class ProvenanceWarning(UserWarning):
    pass


def kd_loss(student_logits, teacher_logits, temperature: float = 3.0, alpha: float = 1.0) -> Tensor:
    """alpha * T^2 * KL(softmax(z_T/T) || softmax(z_S/T)), batch mean.

    The teacher side is a constant; p_S is floored at 1e-12 inside the log.
    """
    z_s = as_tensor(student_logits)
    z_t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    if z_s.shape != z_t.shape:
        raise ContractError(f"kd_loss: student logits {z_s.shape} vs teacher logits {z_t.shape}")
    with no_grad():
        p_t = F.softmax(Tensor(z_t), temperature).data
    teacher_term = (p_t * np.log(np.maximum(p_t, 1e-12))).sum(axis=1)
    p_s = F.softmax(z_s, temperature)
    cross = reduce("sum", log(clamp(p_s, 1e-12, None)) * p_t, 1)
    kl = reduce("mean", teacher_term - cross)
    return kl * (alpha * temperature * temperature)


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray
    count: int
    class_counts: np.ndarray


def predict(model: Model, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Eval-mode logits for ``images``; the model's own mode is restored afterwards."""
    out = []
    with no_grad(), mode(model, "eval"):
        for start in range(0, len(images), batch):
            out.append(model(Tensor(images[start:start + batch])).data)
    return np.concatenate(out)


def evaluate(model: Model, data: LabeledDataset, batch: int = 256) -> EvalReport:
    """Top-1 accuracy (argmax ties go to the lowest class index)."""
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    pred = predict(model, data.images, batch).argmax(axis=1)
    k = data.num_classes
    correct = pred == data.labels
    class_counts = np.bincount(data.labels, minlength=k)
    class_correct = np.bincount(data.labels[correct], minlength=k)
    per_class = np.divide(class_correct, class_counts, out=np.zeros(k), where=class_counts > 0)
    return EvalReport(int(correct.sum()) / len(data), per_class, len(data), class_counts)


@dataclass
class DistillResult:
    student: Model
    epoch_loss: list[float]
    epoch_acc: list[float | None]

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "kd_loss", "eval_accuracy"])
        for e, (l, a) in enumerate(zip(self.epoch_loss, self.epoch_acc)):
            w.writerow([e, repr(l), "" if a is None else repr(a)])
        return buf.getvalue()


def _bn_snapshot(model: Model) -> bytes:
    return b"".join(b.tobytes() for _, b in model.named_buffers())


def trainable_parameters(model: Model):
    """Conv and linear weights and biases; BatchNorm affine parameters stay frozen too."""
    return [t for layer in model.layers if layer.prunable for t in (layer.weight, layer.bias)]


def distill(student: Model, mask: MaskSet | None, teacher: Model | None, data: SynDataset,
            cfg: DistillConfig, eval_set: LabeledDataset | None = None) -> DistillResult:
    """Train ``student`` (in place) to match the teacher logits cached in ``data``.

    Every BatchNorm layer of the student runs in eval mode, so its running
    statistics never change; the mask is re-applied after each optimizer step
    so pruned weights stay exactly zero.  ``teacher`` is only used to check the
    dataset provenance hash.
    """
    cfg.validate()
    if teacher is not None:
        if teacher.input_shape != student.input_shape or teacher.num_classes != student.num_classes:
            raise ContractError("teacher and student disagree on input shape or class count")
        if data.teacher_hash and data.teacher_hash != model_hash(teacher):
            msg = "synthetic dataset was generated from a different teacher checkpoint"
            if cfg.strict_provenance:
                raise ContractError(msg)
            warnings.warn(msg, ProvenanceWarning, stacklevel=2)
    if data.images.shape[1:] != student.input_shape:
        raise ContractError(f"synthetic images {data.images.shape[1:]} vs student input {student.input_shape}")
    if mask is not None:
        apply_mask(student, mask)

    params = trainable_parameters(student)
    frozen = [p for p in student.parameters() if all(p is not q for q in params)]
    saved_flags = [p.requires_grad for p in frozen]
    for p in frozen:
        p.requires_grad = False
    bn_before = _bn_snapshot(student)
    opt = SGD(params, cfg.lr, cfg.momentum)
    rng = np.random.default_rng([cfg.seed, 11])
    result = DistillResult(student, [], [])
    try:
        with mode(student, "eval"):
            for epoch in range(cfg.epochs):
                total = 0.0
                for bi, idx in enumerate(minibatches(len(data), cfg.batch, rng)):
                    try:
                        logits, _ = student.forward(Tensor(data.images[idx]))
                        loss = kd_loss(logits, data.teacher_logits[idx], cfg.temperature, cfg.alpha)
                    except NonFiniteError as e:
                        raise DivergenceError(f"distillation diverged at epoch {epoch}, batch {bi}: {e}") from None
                    opt.zero_grad()
                    backward(loss)
                    opt.step()
                    if mask is not None:
                        apply_mask(student, mask)
                    total += loss.item() * len(idx)
                result.epoch_loss.append(total / len(data))
                acc = evaluate(student, eval_set).accuracy if eval_set is not None else None
                result.epoch_acc.append(acc)
                logger.info("distill epoch %d: kd %.5f acc %s", epoch, result.epoch_loss[-1], acc)
    finally:
        for p, f in zip(frozen, saved_flags):
            p.requires_grad = f
    if _bn_snapshot(student) != bn_before:
        raise AssertionError("student BatchNorm running statistics changed during distillation")
    return result


LEDGER_FIELDS = ("Model", "Teacher", "Pruned", "Recovered", "Improvement")


def accuracy_ledger(teacher_acc: float, pruned_acc: float, recovered_acc: float, model: str = "TinyNet") -> dict:
    """One results row in percent; improvement = recovered - pruned."""
    t, p, r = (round(float(a), 2) for a in (teacher_acc, pruned_acc, recovered_acc))
    return dict(zip(LEDGER_FIELDS, (model, f"{t:.2f}", f"{p:.2f}", f"{r:.2f}", f"{r - p:+.2f}")))


def ledger_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LEDGER_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
