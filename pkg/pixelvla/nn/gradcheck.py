"""
Central finite-difference verification of analytic gradients.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from pixelvla.exceptions import GradientError

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
DEFAULT_MAX_ENTRIES = 64
ERROR_FLOOR = 1e-6


class DifferentiableOp:
    """
    A forward/backward pair bound to the module and inputs gradcheck perturbs.

    Subclasses implement ``forward(inputs) -> (output, cache)`` and
    ``backward(doutput, cache) -> {input name: gradient}``. Every trainable
    parameter of ``module`` and every array in ``inputs`` is checked.
    """
    name = 'op'

    def __init__(self, module, inputs):
        self.module = module
        self.inputs = inputs

    def forward(self, inputs):
        raise NotImplementedError

    def backward(self, doutput, cache):
        raise NotImplementedError


@dataclass
class GradEntry:
    name: str
    kind: str
    relative_error: float
    checked: int


@dataclass
class GradReport:
    op_name: str
    tol: float
    entries: list = field(default_factory=list)

    @property
    def max_error(self):
        return max((entry.relative_error for entry in self.entries), default=0.0)

    @property
    def passed(self):
        return all(entry.relative_error < self.tol for entry in self.entries)

    def failures(self):
        return [entry for entry in self.entries if entry.relative_error >= self.tol]


def relative_error(analytic, numeric):
    """
    Return ``|a - n| / max(|a|, |n|, 1e-6)`` in the Euclidean norm.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), ERROR_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _numeric_gradient(array, indices, objective, step):
    numeric = np.empty(len(indices), dtype=np.float64)
    flat = array.reshape(-1)
    for position, index in enumerate(indices):
        original = flat[index]
        flat[index] = original + step
        plus = objective()
        flat[index] = original - step
        minus = objective()
        flat[index] = original
        numeric[position] = (plus - minus) / (2.0 * step)
    return numeric


def _sample_indices(size, max_entries, rng):
    if size <= max_entries:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_entries, replace=False))


def gradcheck(op_handle, seed=0, tol=1e-4, step=DEFAULT_STEP, max_entries=DEFAULT_MAX_ENTRIES):
    """
    Compare analytic gradients of ``op_handle(rng)`` with central differences.

    The op is promoted to float64 for the check and its output is reduced to a
    scalar by a seeded random-weighted sum. Up to ``max_entries`` coordinates
    per tensor are sampled.
    """
    rng = np.random.default_rng(seed)
    op = op_handle(rng)
    op.module.astype(np.float64)
    inputs = {name: np.array(value, dtype=np.float64) for name, value in op.inputs.items()}

    output, cache = op.forward(inputs)
    probe = rng.uniform(-1.0, 1.0, size=np.shape(output))
    op.module.zero_grad()
    input_grads = op.backward(probe, cache)

    def objective():
        value, _ = op.forward(inputs)
        return float(np.sum(value * probe))

    report = GradReport(op_name=op.name, tol=tol)
    targets = [
        (name, 'parameter', parameter.value, parameter.grad)
        for name, parameter in op.module.named_parameters() if parameter.trainable
    ]
    targets += [(name, 'input', inputs[name], input_grads[name]) for name in inputs]
    for name, kind, array, analytic in targets:
        if not np.all(np.isfinite(analytic)):
            raise GradientError('Analytic gradient of {} {} in {} is not finite'.format(kind, name, op.name))
        indices = _sample_indices(array.size, max_entries, rng)
        numeric = _numeric_gradient(array, indices, objective, step)
        error = relative_error(np.asarray(analytic, dtype=np.float64).reshape(-1)[indices], numeric)
        report.entries.append(GradEntry(name=name, kind=kind, relative_error=error, checked=len(indices)))
    logger.debug('gradcheck %s seed=%s max relative error %.3e', op.name, seed, report.max_error)
    return report
