"""
Visual prompt encoder: Fourier coordinate features plus learned kind embeddings.
"""
import math

import numpy as np

from pixelvla.episodes import PromptKind
from pixelvla.exceptions import PromptError, ValidationError
from pixelvla.nn import MLP, Linear, Module, Parameter, glorot_uniform
from pixelvla.pixel_encoder import downsample_mask

MASK_GRID = 16


def fourier_pe(xy, frequencies):
    """
    Return ``[sin(2 pi G xy), cos(2 pi G xy)]`` for points ``xy`` of shape ``(..., 2)``.
    """
    xy = np.asarray(xy, dtype=frequencies.dtype)
    if xy.shape[-1] != 2:
        raise ValidationError('Expected (x, y) coordinates, got shape {}'.format(xy.shape))
    if np.any(xy < 0.0) or np.any(xy > 1.0) or not np.all(np.isfinite(xy)):
        raise ValidationError('Prompt coordinates must lie in [0, 1]')
    angles = (2.0 * math.pi) * (xy @ frequencies.T)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def prompt_points(prompt, line_samples):
    """
    Return the ``n x 2`` coordinates a geometric prompt contributes, one row per token.
    """
    coords = np.asarray(prompt.coords, dtype=np.float64)
    if prompt.kind is PromptKind.POINT:
        return coords.reshape(1, 2)
    if prompt.kind is PromptKind.BOX:
        return coords.reshape(2, 2)
    if prompt.kind is PromptKind.LINE:
        start, end = coords[:2], coords[2:]
        steps = np.linspace(0.0, 1.0, line_samples)[:, None]
        return start + steps * (end - start)
    raise PromptError('{} prompts carry no coordinates'.format(prompt.kind.name.lower()))


def token_count(prompts, line_samples):
    return sum(line_samples if prompt.kind is PromptKind.LINE else 2 if prompt.kind is PromptKind.BOX else 1
               for prompt in prompts)


class PromptEncoder(Module):
    """
    Every token is ``MLP(fourier_pe(coords) + type_embedding[kind])``.

    Mask references use a 16x16 area-downsampled mask through ``mask_projection``
    in place of the Fourier features. The frequency bank never trains.
    """

    def __init__(self, pe_dim, embed_dim, line_samples, rng, pe_scale=1.0):
        if pe_dim % 2:
            raise ValidationError('Positional encoding width must be even, got {}'.format(pe_dim))
        self.pe_dim = pe_dim
        self.embed_dim = embed_dim
        self.line_samples = line_samples
        self.frequencies = Parameter(rng.normal(0.0, pe_scale, size=(pe_dim // 2, 2)), trainable=False)
        self.type_embeddings = Parameter(glorot_uniform(rng, len(PromptKind), pe_dim))
        self.mask_projection = Linear(MASK_GRID * MASK_GRID, pe_dim, rng)
        self.mlp = MLP(pe_dim, embed_dim, embed_dim, rng)

    def unfreeze(self):
        super().unfreeze()
        self.frequencies.trainable = False
        return self

    def empty(self):
        return np.zeros((0, self.embed_dim), dtype=self.type_embeddings.value.dtype)

    def forward(self, prompts, mask=None):
        """
        Return ``(E_s, cache)``; ``cache[0]`` holds the prompt kind of every token.
        """
        if not prompts:
            return self.empty(), ([], None, [])
        rows, kinds, mask_rows = [], [], []
        for prompt in prompts:
            if prompt.kind is PromptKind.MASK_REF:
                if mask is None:
                    raise PromptError('A mask reference prompt needs the episode mask')
                weights = downsample_mask(mask, (MASK_GRID, MASK_GRID)).reshape(-1)
                projected, projection_cache = self.mask_projection.forward(
                    weights.astype(self.type_embeddings.value.dtype))
                mask_rows.append((len(kinds), projection_cache))
                rows.append(projected[None, :])
                kinds.append(prompt.kind.value)
            else:
                points = prompt_points(prompt, self.line_samples)
                rows.append(fourier_pe(points, self.frequencies.value))
                kinds.extend([prompt.kind.value] * len(points))
        kinds = np.asarray(kinds, dtype=np.int64)
        features = np.concatenate(rows, axis=0) + self.type_embeddings.value[kinds]
        tokens, mlp_cache = self.mlp.forward(features)
        return tokens, (kinds, mlp_cache, mask_rows)

    def backward(self, dtokens, cache):
        kinds, mlp_cache, mask_rows = cache
        if mlp_cache is None:
            return
        dfeatures = self.mlp.backward(dtokens, mlp_cache)
        if self.type_embeddings.trainable:
            np.add.at(self.type_embeddings.grad, kinds, dfeatures)
        for row, projection_cache in mask_rows:
            self.mask_projection.backward(dfeatures[row], projection_cache)


def encode_prompts(prompts, mask, encoder):
    """
    Return ``(E_s, kinds)`` with one kind label per token.
    """
    tokens, cache = encoder.forward(prompts, mask)
    return tokens, [PromptKind(kind) for kind in cache[0]]
