"""
Reverse-mode autodiff on numpy arrays
=====================================

Build a small expression, backpropagate, and compare the result with a
central-difference probe.
"""

import numpy as np

from dfkd.autodiff import Tensor, backward, grad_check, log, no_grad, reduce

# Tensors wrap float32 arrays; requires_grad marks the leaves we differentiate.
w = Tensor([0.5, -1.5, 2.0], requires_grad=True)
x = Tensor([1.0, 2.0, 3.0])

loss = reduce("sum", log(w * w + 1.0) * x)
backward(loss)
print("loss        ", loss.item())
print("analytic dw ", w.grad)
print("closed form ", 2 * w.data * x.data / (w.data ** 2 + 1))

# grad_check evaluates the same function at +-eps around every input element.
rel_err = grad_check(lambda w: reduce("sum", log(w * w + 1.0) * x), [w.data])
print(f"max relative error vs finite differences: {rel_err:.2e}")

# Inside no_grad nothing is recorded, so inference builds no graph.
with no_grad():
    y = w * 3.0
print("graph recorded under no_grad:", y.requires_grad)

# Broadcasting follows numpy; gradients of broadcast operands are summed back.
b = Tensor(np.zeros((1, 3)), requires_grad=True)
backward(reduce("sum", Tensor(np.ones((4, 3))) + b))
print("bias gradient after broadcasting over 4 rows:", b.grad)
