"""Global L1 unstructured pruning.

All conv and linear weights are pooled into one magnitude ranking; exactly
``floor(p * N)`` of them are zeroed, ties broken by global position so the
result is reproducible.  Biases and BatchNorm parameters are never pruned.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .nn.model import Model


@dataclass
class MaskSet:
    masks: dict[str, np.ndarray]      # name -> uint8 array, 1 keeps, 0 prunes
    threshold: float
    amount: float | None = None

    def pruned_count(self) -> int:
        return int(sum(m.size - int(m.sum()) for m in self.masks.values()))

    def total(self) -> int:
        return int(sum(m.size for m in self.masks.values()))


def _check_amount(p: float) -> None:
    if not 0 <= p < 1:
        raise ConfigError(f"pruning amount must lie in [0, 1), got {p}")


def _pooled_magnitudes(model: Model) -> tuple[list[tuple[str, np.ndarray]], np.ndarray]:
    weights = [(name, t.data) for name, t in model.prunable_weights()]
    if not weights:
        raise ContractError("model has no prunable (conv/linear) weights")
    return weights, np.concatenate([np.abs(w).reshape(-1) for _, w in weights])


def pruned_indices(magnitudes: np.ndarray, p: float) -> np.ndarray:
    """Flat indices of the floor(p*N) smallest magnitudes; equal values go lowest index first."""
    _check_amount(p)
    k = math.floor(p * magnitudes.size)
    return np.argsort(magnitudes, kind="stable")[:k]


def global_l1_threshold(model: Model, p: float) -> float:
    """Magnitude of the k-th smallest pooled weight, k = floor(p*N); -inf when k == 0."""
    _, mags = _pooled_magnitudes(model)
    idx = pruned_indices(mags, p)
    return float(mags[idx[-1]]) if idx.size else float("-inf")


def compute_mask(model: Model, p: float) -> MaskSet:
    weights, mags = _pooled_magnitudes(model)
    idx = pruned_indices(mags, p)
    flat = np.ones(mags.size, dtype=np.uint8)
    flat[idx] = 0
    masks, start = {}, 0
    for name, w in weights:
        masks[name] = flat[start:start + w.size].reshape(w.shape).copy()
        start += w.size
    threshold = float(mags[idx[-1]]) if idx.size else float("-inf")
    return MaskSet(masks, threshold, p)


def _aligned(model: Model, mask: MaskSet) -> dict[str, np.ndarray]:
    weights = dict((name, t.data) for name, t in model.prunable_weights())
    for name, m in mask.masks.items():
        if name not in weights:
            raise ContractError(f"mask entry {name!r} has no prunable weight in the model")
        if m.shape != weights[name].shape:
            raise ContractError(f"mask {name!r} has shape {m.shape}, weight has {weights[name].shape}")
    return weights


def apply_mask(model: Model, mask: MaskSet) -> Model:
    """Zero the masked weights in place (W_S = m * W_T) and attach the mask to the model."""
    weights = _aligned(model, mask)
    for name, m in mask.masks.items():
        w = weights[name]
        w[m == 0] = 0.0
    model.mask = mask
    return model


def prune(model: Model, p: float) -> Model:
    """Copy of ``model`` with the global L1 mask at amount ``p`` applied."""
    student = model.copy()
    return apply_mask(student, compute_mask(student, p))


@dataclass
class SparsityRow:
    layer: str
    total: int
    zeros: int

    @property
    def fraction(self) -> float:
        return self.zeros / self.total if self.total else 0.0


def sparsity_report(model: Model, mask: MaskSet | None = None) -> list[SparsityRow]:
    """Exact-zero counts per prunable weight (with ``mask`` applied, if given) plus a 'global' row."""
    weights = _aligned(model, mask) if mask is not None else dict(
        (name, t.data) for name, t in model.prunable_weights())
    rows = []
    for name, w in weights.items():
        eff = w if mask is None or name not in mask.masks else w * mask.masks[name]
        rows.append(SparsityRow(name, int(w.size), int(np.count_nonzero(eff == 0))))
    rows.append(SparsityRow("global", sum(r.total for r in rows), sum(r.zeros for r in rows)))
    return rows


def sparsity_csv(rows: list[SparsityRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "total", "zeros", "fraction"])
    for r in rows:
        writer.writerow([r.layer, r.total, r.zeros, f"{r.fraction:.6f}"])
    return buf.getvalue()
