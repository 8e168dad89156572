"""Central-difference gradient oracle."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, NondeterministicFunctionError
from .tensor import Tensor, backward, no_grad, precision


def numerical_gradient(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], eps: float = 1e-3,
                       dtype=np.float64) -> list[np.ndarray]:
    """(f(x + eps) - f(x - eps)) / (2 eps), one element at a time."""
    arrays = [np.array(a, dtype=dtype) for a in arrays]
    out = []
    with precision(dtype), no_grad():
        def value():
            return f(*[Tensor(a) for a in arrays]).item()

        for a in arrays:
            g = np.zeros_like(a)
            flat, gflat = a.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = value()
                flat[i] = orig - eps
                lo = value()
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * eps)
            out.append(g)
    return out


def analytic_gradient(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], dtype=np.float64):
    with precision(dtype):
        inputs = [Tensor(a, requires_grad=True) for a in arrays]
        loss = f(*inputs)
        if loss.size != 1:
            raise ContractError(f"grad_check: f must return a scalar, got shape {loss.shape}")
        backward(loss)
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-3,
               dtype=np.float64) -> float:
    """Max over all input elements of |analytic - numeric| / max(1e-6, |numeric|).

    ``f`` receives one Tensor per entry of ``inputs`` and must return a scalar.
    Probes run in ``dtype``; float64 keeps the rounding noise of the difference
    quotient well below the tolerance used for single-precision kernels.

    Raises NondeterministicFunctionError if two evaluations at the same point differ.
    """
    arrays = [np.asarray(a.data if isinstance(a, Tensor) else a) for a in inputs]
    with precision(dtype), no_grad():
        first = f(*[Tensor(a) for a in arrays]).data.copy()
        second = f(*[Tensor(a) for a in arrays]).data.copy()
    if first.tobytes() != second.tobytes():
        raise NondeterministicFunctionError("f returned different values for identical inputs")

    analytic = analytic_gradient(f, arrays, dtype)
    numeric = numerical_gradient(f, arrays, eps, dtype)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        err = np.abs(a - n) / np.maximum(1e-6, np.abs(n))
        worst = max(worst, float(err.max()))
    return worst
