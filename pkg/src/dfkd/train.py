"""Supervised teacher training on a labeled dataset."""
from __future__ import annotations

import logging

import numpy as np

from .autodiff import SGD, Tensor, backward
from .config import TeacherConfig
from .data import LabeledDataset
from .errors import DivergenceError, NonFiniteError
from .nn import functional as F
from .nn.model import Model, tinynet

log = logging.getLogger(__name__)


def minibatches(n: int, batch: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch):
        yield order[start:start + batch]


def train_teacher(train: LabeledDataset, cfg: TeacherConfig, model: Model | None = None) -> tuple[Model, list[float]]:
    """Cross-entropy + SGD-momentum with BatchNorm in train mode, so running stats are learned.

    Returns the model and the mean loss of each epoch.
    """
    if model is None:
        _, c, h, w = train.images.shape
        model = tinynet(train.num_classes, c, h, seed=cfg.seed)
        if h != w:
            raise ValueError("tinynet expects square images")
    model.train()
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum)
    rng = np.random.default_rng([cfg.seed, 7])
    history = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in minibatches(len(train), cfg.batch, rng):
            try:
                logits, _ = model.forward(Tensor(train.images[idx]))
                loss = F.cross_entropy_with_labels(logits, train.labels[idx])
            except NonFiniteError as e:
                raise DivergenceError(f"teacher training diverged in epoch {epoch}: {e}") from None
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
        log.info("teacher epoch %d: loss %.4f", epoch, history[-1])
    model.zero_grad()
    model.eval()
    return model, history
