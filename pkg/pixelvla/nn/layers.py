"""
Differentiable layers with hand-chained backward passes.

Every ``forward`` returns ``(output, cache)``; the matching ``backward`` takes
the output gradient and the cache, accumulates parameter gradients into
trainable parameters and returns the input gradient.
"""
import math

import numpy as np

from pixelvla.exceptions import DimensionError

from .parameter import Module, Parameter, glorot_uniform

GELU_COEFFICIENT = math.sqrt(2.0 / math.pi)


def linear_forward(weight, bias, x):
    """
    Return ``x @ weight.T + bias`` for ``x`` of shape ``(..., d_in)``.
    """
    if weight.ndim != 2:
        raise DimensionError('Linear weight must be a matrix, got shape {}'.format(weight.shape))
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            'Linear input has {} features, weight expects {}'.format(x.shape[-1], weight.shape[1])
        )
    y = x @ weight.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError('Linear bias shape {} does not match {} outputs'.format(bias.shape, weight.shape[0]))
        y = y + bias
    return y


def gelu(x):
    inner = GELU_COEFFICIENT * (x + 0.044715 * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(dy, x):
    inner = GELU_COEFFICIENT * (x + 0.044715 * x ** 3)
    tanh = np.tanh(inner)
    slope = 0.5 * (1.0 + tanh) + 0.5 * x * (1.0 - tanh ** 2) * GELU_COEFFICIENT * (1.0 + 3 * 0.044715 * x ** 2)
    return dy * slope


def softmax(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exponentials = np.exp(shifted)
    return exponentials / exponentials.sum(axis=-1, keepdims=True)


class Linear(Module):
    """
    Dense layer ``y = x W^T + b`` with an optional low-rank adapter slot.
    """

    def __init__(self, d_in, d_out, rng, bias=True):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter(glorot_uniform(rng, d_out, d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None
        self.adapter = None

    def forward(self, x):
        y = linear_forward(self.weight.value, None if self.bias is None else self.bias.value, x)
        adapter_cache = None
        if self.adapter is not None:
            delta, adapter_cache = self.adapter.forward(x)
            y = y + delta
        return y, (x, adapter_cache)

    def backward(self, dy, cache):
        x, adapter_cache = cache
        if self.weight.trainable:
            self.weight.grad += dy.reshape(-1, self.d_out).T @ x.reshape(-1, self.d_in)
        if self.bias is not None and self.bias.trainable:
            self.bias.grad += dy.reshape(-1, self.d_out).sum(axis=0)
        dx = dy @ self.weight.value
        if self.adapter is not None:
            dx = dx + self.adapter.backward(dy, adapter_cache)
        return dx


class LayerNorm(Module):
    """
    Normalization over the last axis with a learned gain and shift.
    """

    def __init__(self, dim, eps=1e-5):
        self.dim = dim
        self.eps = eps
        self.gain = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))

    def forward(self, x):
        centered = x - x.mean(axis=-1, keepdims=True)
        inverse_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + self.eps)
        normalized = centered * inverse_std
        return normalized * self.gain.value + self.shift.value, (normalized, inverse_std)

    def backward(self, dy, cache):
        normalized, inverse_std = cache
        if self.gain.trainable:
            self.gain.grad += (dy * normalized).reshape(-1, self.dim).sum(axis=0)
        if self.shift.trainable:
            self.shift.grad += dy.reshape(-1, self.dim).sum(axis=0)
        dnormalized = dy * self.gain.value
        return inverse_std * (
            dnormalized
            - dnormalized.mean(axis=-1, keepdims=True)
            - normalized * (dnormalized * normalized).mean(axis=-1, keepdims=True)
        )


class MLP(Module):
    """
    Two dense layers with a GELU in between.
    """

    def __init__(self, d_in, d_hidden, d_out, rng):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def forward(self, x):
        hidden, fc1_cache = self.fc1.forward(x)
        y, fc2_cache = self.fc2.forward(gelu(hidden))
        return y, (fc1_cache, hidden, fc2_cache)

    def backward(self, dy, cache):
        fc1_cache, hidden, fc2_cache = cache
        dactivation = self.fc2.backward(dy, fc2_cache)
        return self.fc1.backward(gelu_backward(dactivation, hidden), fc1_cache)


class ResidualBlock(Module):
    """
    Pre-norm residual MLP block: ``x + MLP(LayerNorm(x))``.
    """

    def __init__(self, dim, d_hidden, rng):
        self.norm = LayerNorm(dim)
        self.mlp = MLP(dim, d_hidden, dim, rng)

    def forward(self, x):
        normalized, norm_cache = self.norm.forward(x)
        branch, mlp_cache = self.mlp.forward(normalized)
        return x + branch, (norm_cache, mlp_cache)

    def backward(self, dy, cache):
        norm_cache, mlp_cache = cache
        return dy + self.norm.backward(self.mlp.backward(dy, mlp_cache), norm_cache)


class MultiHeadAttention(Module):
    """
    Full (non-causal) multi-head self-attention over an ``n x d`` sequence.
    """

    def __init__(self, dim, num_heads, rng):
        if dim % num_heads:
            raise DimensionError('Embedding dim {} is not divisible by {} heads'.format(dim, num_heads))
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)

    def _split(self, x):
        return x.reshape(x.shape[0], self.num_heads, self.head_dim).transpose(1, 0, 2)

    def _merge(self, x):
        return x.transpose(1, 0, 2).reshape(x.shape[1], self.dim)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError('Attention expects an n x {} sequence, got {}'.format(self.dim, x.shape))
        q, query_cache = self.query.forward(x)
        k, key_cache = self.key.forward(x)
        v, value_cache = self.value.forward(x)
        q, k, v = self._split(q), self._split(k), self._split(v)
        scale = 1.0 / math.sqrt(self.head_dim)
        weights = softmax((q @ k.transpose(0, 2, 1)) * scale)
        context = self._merge(weights @ v)
        y, output_cache = self.output.forward(context)
        return y, (query_cache, key_cache, value_cache, output_cache, q, k, v, weights)

    def backward(self, dy, cache):
        query_cache, key_cache, value_cache, output_cache, q, k, v, weights = cache
        scale = 1.0 / math.sqrt(self.head_dim)
        dcontext = self._split(self.output.backward(dy, output_cache))
        dweights = dcontext @ v.transpose(0, 2, 1)
        dv = weights.transpose(0, 2, 1) @ dcontext
        dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True)) * scale
        dq = dscores @ k
        dk = dscores.transpose(0, 2, 1) @ q
        dx = self.query.backward(self._merge(dq), query_cache)
        dx = dx + self.key.backward(self._merge(dk), key_cache)
        dx = dx + self.value.backward(self._merge(dv), value_cache)
        return dx


class TransformerBlock(Module):
    """
    Pre-norm transformer block: attention then MLP, each with a residual path.
    """

    def __init__(self, dim, num_heads, d_hidden, rng):
        self.attention_norm = LayerNorm(dim)
        self.attention = MultiHeadAttention(dim, num_heads, rng)
        self.mlp_norm = LayerNorm(dim)
        self.mlp = MLP(dim, d_hidden, dim, rng)

    def linears(self):
        return [
            self.attention.query, self.attention.key, self.attention.value, self.attention.output,
            self.mlp.fc1, self.mlp.fc2,
        ]

    def forward(self, x):
        normalized, attention_norm_cache = self.attention_norm.forward(x)
        attended, attention_cache = self.attention.forward(normalized)
        x = x + attended
        normalized, mlp_norm_cache = self.mlp_norm.forward(x)
        branch, mlp_cache = self.mlp.forward(normalized)
        return x + branch, (attention_norm_cache, attention_cache, mlp_norm_cache, mlp_cache)

    def backward(self, dy, cache):
        attention_norm_cache, attention_cache, mlp_norm_cache, mlp_cache = cache
        dx = dy + self.mlp_norm.backward(self.mlp.backward(dy, mlp_cache), mlp_norm_cache)
        return dx + self.attention_norm.backward(self.attention.backward(dx, attention_cache), attention_norm_cache)


class Embedding(Module):
    """
    Lookup table mapping integer ids to rows.
    """

    def __init__(self, vocab_size, dim, rng):
        self.vocab_size = vocab_size
        self.table = Parameter(glorot_uniform(rng, vocab_size, dim))

    def forward(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        return self.table.value[ids], ids

    def backward(self, dy, cache):
        if self.table.trainable:
            np.add.at(self.table.grad, cache, dy)
