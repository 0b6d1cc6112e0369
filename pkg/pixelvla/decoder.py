"""
Continuous action decoder and the L1 regression objective.
"""
import numpy as np

from pixelvla.episodes import ACTION_DIM
from pixelvla.exceptions import ConfigurationError, ContractError, DimensionError
from pixelvla.nn import MLP, Linear, Module, ResidualBlock


class ActionDecoder(Module):
    """
    Linear projector, ``N_r`` residual MLP blocks and a per-token MLP head emitting 7 values.

    Works on any leading batch shape: ``(..., N_c, D) -> (..., N_c, 7)``.
    """

    def __init__(self, dim, hidden_dim, num_blocks, rng):
        if num_blocks < 1:
            raise ConfigurationError('The action decoder needs at least one residual block')
        self.input_projection = Linear(dim, hidden_dim, rng)
        self.blocks = [ResidualBlock(hidden_dim, hidden_dim, rng) for _ in range(num_blocks)]
        self.head = MLP(hidden_dim, hidden_dim, ACTION_DIM, rng)

    def forward(self, states):
        hidden, input_cache = self.input_projection.forward(states)
        block_caches = []
        for block in self.blocks:
            hidden, block_cache = block.forward(hidden)
            block_caches.append(block_cache)
        actions, head_cache = self.head.forward(hidden)
        return actions, (input_cache, block_caches, head_cache)

    def backward(self, dactions, cache):
        input_cache, block_caches, head_cache = cache
        dhidden = self.head.backward(dactions, head_cache)
        for block, block_cache in zip(reversed(self.blocks), reversed(block_caches)):
            dhidden = block.backward(dhidden, block_cache)
        return self.input_projection.backward(dhidden, input_cache)


def register_states(hidden, layout):
    if len(layout.registers) == 0:
        raise ContractError('Sequence layout has no action registers')
    return hidden[layout.slice('registers')]


def decode_actions(hidden, layout, decoder):
    """
    Return the unclamped ``N_c x 7`` chunk read from the register-token hidden states.
    """
    actions, _ = decoder.forward(register_states(hidden, layout))
    return actions


def l1_loss(pred, target, mean=True):
    """
    Return ``(loss, dloss/dpred)`` of the elementwise absolute error.

    The batch sum is divided by the element count when ``mean`` is set; the
    subgradient at a zero residual is 0.
    """
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError('Prediction shape {} does not match target {}'.format(pred.shape, target.shape))
    residual = pred - target
    grad = np.sign(residual)
    loss = float(np.abs(residual.astype(np.float64)).sum())
    if mean:
        loss /= residual.size
        grad = grad / residual.size
    return loss, grad
