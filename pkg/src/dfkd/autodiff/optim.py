"""First-order optimizers.

The functional steps (:func:`sgd_step`, :func:`adam_step`) update numpy arrays
in place and keep their buffers in an :class:`OptimState`; :class:`SGD` and
:class:`Adam` bind them to a list of :class:`Tensor` parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigError, ContractError
from .tensor import Tensor


@dataclass
class OptimState:
    buffers: dict[str, list[np.ndarray]] = field(default_factory=dict)
    step: int = 0
    signature: tuple = ()

    def sync(self, params: Sequence[np.ndarray]) -> None:
        """Drop all buffers if the parameter set changed since the last step."""
        sig = tuple((p.shape, p.dtype.str) for p in params)
        if sig != self.signature:
            self.buffers.clear()
            self.step = 0
            self.signature = sig

    def buffer(self, name: str, params: Sequence[np.ndarray]) -> list[np.ndarray]:
        if name not in self.buffers:
            self.buffers[name] = [np.zeros_like(p) for p in params]
        return self.buffers[name]


def _check(params, grads):
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ContractError(f"parameter {i}: shape {p.shape} but gradient {g.shape}")


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState,
             lr: float, momentum: float = 0.0) -> None:
    """v <- momentum * v + g;  p <- p - lr * v."""
    if lr <= 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
    _check(params, grads)
    state.sync(params)
    state.step += 1
    if momentum == 0:
        for p, g in zip(params, grads):
            p -= lr * g
        return
    velocity = state.buffer("velocity", params)
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g
        p -= lr * v


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    if lr <= 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    _check(params, grads)
    state.sync(params)
    state.step += 1
    t = state.step
    m_buf = state.buffer("m", params)
    v_buf = state.buffer("v", params)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, m_buf, v_buf):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class _Optimizer:
    def __init__(self, params: Sequence[Tensor]):
        self.params = list(params)
        self.state = OptimState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _arrays(self):
        ps = [p.data for p in self.params]
        gs = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        return ps, gs


class SGD(_Optimizer):
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0):
        super().__init__(params)
        self.lr, self.momentum = lr, momentum

    def step(self) -> None:
        sgd_step(*self._arrays(), self.state, self.lr, self.momentum)


class Adam(_Optimizer):
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        super().__init__(params)
        self.lr, self.betas, self.eps = lr, betas, eps

    def step(self) -> None:
        adam_step(*self._arrays(), self.state, self.lr, self.betas[0], self.betas[1], self.eps)
