from .gradcheck import analytic_gradient, grad_check, numerical_gradient
from .optim import SGD, Adam, OptimState, adam_step, sgd_step
from .tensor import (
    Tensor,
    absolute,
    add,
    as_tensor,
    backward,
    clamp,
    concatenate,
    default_dtype,
    div,
    elementwise,
    exp,
    getitem,
    log,
    make_result,
    matmul,
    mul,
    neg,
    no_grad,
    norm2,
    power,
    precision,
    reduce,
    reshape,
    roll,
    sub,
    transpose,
    unbroadcast,
)
