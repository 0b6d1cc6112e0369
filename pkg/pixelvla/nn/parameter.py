"""
Parameters and the module container every neural component is built from.
"""
import math

import numpy as np

DTYPE = np.float32


def glorot_uniform(rng, d_out, d_in):
    """
    Return a ``d_out x d_in`` float32 matrix uniform in +/- (6 / (d_in + d_out)) ** 0.5.
    """
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_out, d_in)).astype(DTYPE)


def spawn_generators(seed, count):
    """
    Split ``seed`` into ``count`` independent generators.
    """
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in sequence.spawn(count)]


class Parameter:
    """
    A tensor value together with its accumulated gradient.

    Gradients are only accumulated while ``trainable`` is set; a frozen
    parameter keeps an all-zero gradient.
    """

    def __init__(self, value, trainable=True):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0)

    def astype(self, dtype):
        self.value = self.value.astype(dtype)
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return 'Parameter(shape={}, trainable={})'.format(self.value.shape, self.trainable)


class Module:
    """
    Base class of every layer.

    Parameters are discovered by walking instance attributes in definition
    order: ``Parameter`` values, nested ``Module`` values, and lists of either.
    Forward passes return ``(output, cache)`` and never store state on the
    module, so a module can be shared by concurrent readers.
    """

    def named_parameters(self, prefix=''):
        for name, attribute in vars(self).items():
            path = prefix + name
            if isinstance(attribute, Parameter):
                yield path, attribute
            elif isinstance(attribute, Module):
                yield from attribute.named_parameters(path + '.')
            elif isinstance(attribute, (list, tuple)):
                for index, item in enumerate(attribute):
                    if isinstance(item, Parameter):
                        yield '{}.{}'.format(path, index), item
                    elif isinstance(item, Module):
                        yield from item.named_parameters('{}.{}.'.format(path, index))

    def parameters(self):
        return [parameter for _, parameter in self.named_parameters()]

    def trainable_parameters(self):
        return [(name, parameter) for name, parameter in self.named_parameters() if parameter.trainable]

    def zero_grad(self):
        for parameter in self.parameters():
            parameter.zero_grad()

    def freeze(self):
        for parameter in self.parameters():
            parameter.trainable = False
        return self

    def unfreeze(self):
        for parameter in self.parameters():
            parameter.trainable = True
        return self

    def astype(self, dtype):
        for parameter in self.parameters():
            parameter.astype(dtype)
        return self
