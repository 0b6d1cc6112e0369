"""
Low-rank adapters for frozen dense layers.

An adapter adds ``(alpha / r) * x @ down.T @ up.T`` to its base layer. ``up``
starts at zero, so attaching an adapter leaves the base output unchanged
until the adapter is trained.
"""
import math

import numpy as np

from pixelvla.exceptions import ConfigurationError, DimensionError

from .layers import linear_forward
from .parameter import Module, Parameter


class LoRAAdapter(Module):
    """
    Rank ``r`` update ``up @ down`` of a ``d_out x d_in`` weight.
    """

    def __init__(self, d_in, d_out, rank, alpha, rng):
        if rank < 1 or rank > min(d_in, d_out):
            raise ConfigurationError(
                'LoRA rank {} must lie in [1, {}] for a {}x{} layer'.format(rank, min(d_in, d_out), d_out, d_in)
            )
        self.d_in = d_in
        self.d_out = d_out
        self.rank = rank
        self.alpha = float(alpha)
        limit = 1.0 / math.sqrt(d_in)
        self.down = Parameter(rng.uniform(-limit, limit, size=(rank, d_in)))
        self.up = Parameter(np.zeros((d_out, rank)))

    @property
    def scale(self):
        return self.alpha / self.rank

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise DimensionError('Adapter input has {} features, expected {}'.format(x.shape[-1], self.d_in))
        hidden = x @ self.down.value.T
        return self.scale * (hidden @ self.up.value.T), (x, hidden)

    def backward(self, ddelta, cache):
        x, hidden = cache
        dscaled = self.scale * ddelta
        if self.up.trainable:
            self.up.grad += dscaled.reshape(-1, self.d_out).T @ hidden.reshape(-1, self.rank)
        dhidden = dscaled @ self.up.value
        if self.down.trainable:
            self.down.grad += dhidden.reshape(-1, self.rank).T @ x.reshape(-1, self.d_in)
        return dhidden @ self.down.value

    def materialize(self):
        """
        Return the dense ``d_out x d_in`` update this adapter applies, scale included.
        """
        return self.scale * (self.up.value.astype(np.float64) @ self.down.value.astype(np.float64))


def lora_forward(base, adapter, x):
    """
    Return ``base(x) + (alpha / r) * x @ down.T @ up.T``.
    """
    if (adapter.d_in, adapter.d_out) != (base.d_in, base.d_out):
        raise DimensionError(
            'Adapter is {}x{} but the base layer is {}x{}'.format(adapter.d_out, adapter.d_in, base.d_out, base.d_in)
        )
    y = linear_forward(base.weight.value, None if base.bias is None else base.bias.value, x)
    delta, _ = adapter.forward(x)
    return y + delta


def attach_adapter(linear, rank, alpha, rng):
    """
    Attach a fresh adapter to ``linear`` and freeze its base weights.
    """
    linear.adapter = LoRAAdapter(linear.d_in, linear.d_out, rank, alpha, rng)
    linear.weight.trainable = False
    if linear.bias is not None:
        linear.bias.trainable = False
    return linear.adapter


def merge_adapter(linear):
    """
    Fold the adapter of ``linear`` into its weight and remove it.
    """
    if linear.adapter is None:
        return
    linear.weight.value = (linear.weight.value + linear.adapter.materialize()).astype(linear.weight.value.dtype)
    linear.weight.grad = np.zeros_like(linear.weight.value)
    linear.adapter = None


def numerical_rank(matrix, tol=1e-6):
    """
    Rank of ``matrix`` by Gaussian elimination with partial pivoting.

    Pivots smaller than ``tol`` times the largest absolute entry count as zero.
    """
    reduced = np.array(matrix, dtype=np.float64)
    rows, cols = reduced.shape
    threshold = tol * max(np.abs(reduced).max(initial=0.0), 1e-300)
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        pivot = rank + int(np.argmax(np.abs(reduced[rank:, col])))
        if abs(reduced[pivot, col]) <= threshold:
            continue
        reduced[[rank, pivot]] = reduced[[pivot, rank]]
        factors = reduced[rank + 1:, col] / reduced[rank, col]
        reduced[rank + 1:] -= np.outer(factors, reduced[rank])
        rank += 1
    return rank
