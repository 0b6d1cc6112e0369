"""
Adaptive-moment optimizer.
"""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    first_moments: dict = field(default_factory=dict)
    second_moments: dict = field(default_factory=dict)


def optimizer_step(named_parameters, state):
    """
    Apply one bias-corrected adaptive-moment update to every trainable parameter.

    Frozen parameters are skipped entirely, so their values stay bitwise
    identical whatever their gradients hold.
    """
    state.step += 1
    beta1, beta2 = state.betas
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, parameter in named_parameters:
        if not parameter.trainable:
            continue
        first = state.first_moments.get(name)
        if first is None:
            first = state.first_moments[name] = np.zeros_like(parameter.value)
            state.second_moments[name] = np.zeros_like(parameter.value)
        second = state.second_moments[name]
        grad = parameter.grad
        first *= beta1
        first += (1.0 - beta1) * grad
        second *= beta2
        second += (1.0 - beta2) * grad * grad
        update = (first / correction1) / (np.sqrt(second / correction2) + state.eps)
        parameter.value -= (state.lr * update).astype(parameter.value.dtype)
    return state


class Adam:
    """
    Binds an ``OptimizerState`` to a fixed list of named parameters.
    """

    def __init__(self, named_parameters, lr, betas=(0.9, 0.999), eps=1e-8):
        self.named_parameters = list(named_parameters)
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps)

    def zero_grad(self):
        for _, parameter in self.named_parameters:
            parameter.zero_grad()

    def step(self):
        return optimizer_step(self.named_parameters, self.state)
