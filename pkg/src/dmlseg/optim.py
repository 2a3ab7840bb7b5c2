"""Plain SGD with momentum and L2 weight decay."""

from __future__ import annotations

from typing import Sequence

from .errors import UsageError
from .tensor import Parameter, check_params_have_grads


def sgd_step(params: Sequence[Parameter], lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """v <- momentum*v + grad + wd*theta; theta <- theta - lr*v; grads cleared.

    The velocity update runs even at lr=0, so momentum/decay state stays
    consistent across zero-rate steps.
    """
    if lr < 0:
        raise UsageError(f"negative learning rate {lr}")
    check_params_have_grads(params)
    for p in params:
        theta = p.tensor.data
        p.momentum *= momentum
        p.momentum += p.tensor.grad
        if weight_decay != 0.0:
            p.momentum += weight_decay * theta
        theta -= lr * p.momentum
        p.tensor.zero_grad()
