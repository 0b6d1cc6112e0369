"""
Registry of small-dimension gradient checks, one per differentiable component.

Every case is a ``DifferentiableOp`` built from a seeded generator, so
``gradcheck(CASES[name], seed=...)`` is reproducible.
"""
import logging

import numpy as np

from pixelvla.backbone import Backbone
from pixelvla.decoder import ActionDecoder, l1_loss
from pixelvla.episodes import VisualPrompt
from pixelvla.exceptions import ConfigurationError
from pixelvla.nn import MLP, DifferentiableOp, Linear, Module, MultiHeadAttention, TransformerBlock, attach_adapter
from pixelvla.nn import gradcheck
from pixelvla.pixel_encoder import PixelEncoder
from pixelvla.prompt_encoder import PromptEncoder
from pixelvla.vision import FeaturePyramid, VisionStub

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def _randomize_adapters(adapters, rng):
    for adapter in adapters:
        adapter.up.value = rng.normal(0.0, 0.5, size=adapter.up.shape).astype(adapter.up.value.dtype)
        adapter.up.zero_grad()


class LayerOp(DifferentiableOp):
    """
    A module with a single array input ``x``.
    """

    def forward(self, inputs):
        return self.module.forward(inputs['x'])

    def backward(self, doutput, cache):
        return {'x': self.module.backward(doutput, cache)}


class LinearCase(LayerOp):
    name = 'linear'

    def __init__(self, rng):
        super().__init__(Linear(5, 4, rng), {'x': rng.normal(size=(3, 5))})


class LoRACase(LayerOp):
    """
    Dense layer with a rank-2 adapter; only the adapter trains.
    """
    name = 'lora'

    def __init__(self, rng):
        linear = Linear(6, 5, rng)
        _randomize_adapters([attach_adapter(linear, 2, 4.0, rng)], rng)
        super().__init__(linear, {'x': rng.normal(size=(3, 6))})


class MLPCase(LayerOp):
    name = 'mlp'

    def __init__(self, rng):
        super().__init__(MLP(5, 7, 4, rng), {'x': rng.normal(size=(3, 5))})


class AttentionCase(LayerOp):
    name = 'attention'

    def __init__(self, rng):
        super().__init__(MultiHeadAttention(8, 2, rng), {'x': rng.normal(size=(4, 8))})


class BlockCase(LayerOp):
    name = 'block'

    def __init__(self, rng):
        super().__init__(TransformerBlock(8, 2, 12, rng), {'x': rng.normal(size=(4, 8))})


class VisionCase(DifferentiableOp):
    """
    Visual token projection with respect to the coarsest feature grid.
    """
    name = 'vision'

    def __init__(self, rng):
        super().__init__(VisionStub(2, (4,), 6, rng), {'coarsest': rng.normal(size=(2, 3, 4))})

    def forward(self, inputs):
        return self.module.visual_tokens(FeaturePyramid(levels=[inputs['coarsest']]))

    def backward(self, doutput, cache):
        return {'coarsest': self.module.visual_tokens_backward(doutput, cache)}


class PixelCase(DifferentiableOp):
    name = 'pixel'

    def __init__(self, rng):
        mask = np.where(rng.uniform(size=(8, 8)) < 0.5, 255, 0).astype(np.uint8)
        mask[0, 0] = mask[7, 7] = 255
        self.mask = mask
        super().__init__(PixelEncoder((3, 4), 4, 2, rng), {
            'level0': rng.normal(size=(4, 4, 3)),
            'level1': rng.normal(size=(2, 2, 4)),
        })

    def forward(self, inputs):
        return self.module.forward([inputs['level0'], inputs['level1']], self.mask)

    def backward(self, doutput, cache):
        level0, level1 = self.module.backward(doutput, cache)
        return {'level0': level0, 'level1': level1}


class PromptCase(DifferentiableOp):
    """
    Every prompt kind at once; coordinates are data, so only parameters are checked.
    """
    name = 'prompt'

    def __init__(self, rng):
        x1, x2 = sorted(rng.uniform(0.05, 0.95, size=2))
        y1, y2 = sorted(rng.uniform(0.05, 0.95, size=2))
        self.prompts = [
            VisualPrompt.point(*rng.uniform(size=2)),
            VisualPrompt.line(*rng.uniform(size=4)),
            VisualPrompt.box(x1, y1, x2, y2),
            VisualPrompt.mask_ref(),
        ]
        self.mask = np.where(rng.uniform(size=(32, 32)) < 0.3, 255, 0).astype(np.uint8)
        super().__init__(PromptEncoder(8, 6, 3, rng), {})

    def forward(self, inputs):
        return self.module.forward(self.prompts, self.mask)

    def backward(self, doutput, cache):
        self.module.backward(doutput, cache)
        return {}


class BackboneCase(DifferentiableOp):
    """
    One adapted transformer block; the base weights stay frozen.
    """
    name = 'backbone'

    def __init__(self, rng):
        backbone = Backbone(16, 8, 1, 2, 2, rng)
        _randomize_adapters(backbone.attach_adapters(2, 4.0, rng), rng)
        for adapter in backbone.adapters():
            adapter.unfreeze()
        super().__init__(backbone, {'tokens': rng.normal(size=(6, 8))})

    def forward(self, inputs):
        return self.module.forward(inputs['tokens'])

    def backward(self, doutput, cache):
        return {'tokens': self.module.backward(doutput, cache)}


class DecoderCase(DifferentiableOp):
    name = 'decoder'

    def __init__(self, rng):
        super().__init__(ActionDecoder(6, 8, 2, rng), {'states': rng.normal(size=(2, 3, 6))})

    def forward(self, inputs):
        return self.module.forward(inputs['states'])

    def backward(self, doutput, cache):
        return {'states': self.module.backward(doutput, cache)}


class L1Case(DifferentiableOp):
    """
    L1 objective at residuals kept at least 0.05 away from zero.
    """
    name = 'l1'

    def __init__(self, rng):
        pred = rng.normal(size=(3, 7))
        offsets = rng.uniform(0.05, 1.0, size=pred.shape) * rng.choice((-1.0, 1.0), size=pred.shape)
        self.target = pred + offsets
        super().__init__(Module(), {'pred': pred})

    def forward(self, inputs):
        loss, grad = l1_loss(inputs['pred'], self.target)
        return np.float64(loss), grad

    def backward(self, doutput, cache):
        return {'pred': cache * doutput}


CASES = {
    case.name: case
    for case in (
        LinearCase, LoRACase, MLPCase, AttentionCase, BlockCase, VisionCase, PixelCase, PromptCase,
        BackboneCase, DecoderCase, L1Case,
    )
}


def run_gradchecks(names=None, seeds=DEFAULT_SEEDS, tol=1e-4):
    """
    Check every case in ``names`` (all by default) under every seed; return the reports.
    """
    names = list(CASES) if not names else list(names)
    unknown = [name for name in names if name not in CASES]
    if unknown:
        raise ConfigurationError('Unknown gradient check {}; available: {}'.format(
            ', '.join(unknown), ', '.join(sorted(CASES))))
    reports = []
    for name in names:
        for seed in seeds:
            report = gradcheck(CASES[name], seed=seed, tol=tol)
            logger.info('gradcheck %s seed %s: max relative error %.2e (%s)',
                        name, seed, report.max_error, 'pass' if report.passed else 'FAIL')
            reports.append((seed, report))
    return reports
