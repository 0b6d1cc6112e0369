"""
Frozen multiscale feature extractor and visual token projector.
"""
from dataclasses import dataclass

import numpy as np

from pixelvla.exceptions import ConfigurationError, ValidationError
from pixelvla.nn import MLP, DTYPE, Module, Parameter, glorot_uniform


@dataclass
class FeaturePyramid:
    """
    ``levels[i]`` is an ``H_i x W_i x D_i`` grid; each level halves the previous one.
    """
    levels: list

    @property
    def shapes(self):
        return [level.shape for level in self.levels]

    @property
    def coarsest(self):
        return self.levels[-1]

    def validate(self):
        if not self.levels:
            raise ValidationError('A feature pyramid needs at least one level')
        for finer, coarser in zip(self.levels, self.levels[1:]):
            if coarser.shape[0] * 2 != finer.shape[0] or coarser.shape[1] * 2 != finer.shape[1]:
                raise ValidationError('Pyramid levels {} and {} are not dyadic'.format(finer.shape, coarser.shape))
        if not all(np.all(np.isfinite(level)) for level in self.levels):
            raise ValidationError('Pyramid contains non-finite features')
        return self


def average_pool(grid):
    """
    2x2 average pooling of an ``H x W x C`` grid.
    """
    height, width, channels = grid.shape
    return grid.reshape(height // 2, 2, width // 2, 2, channels).mean(axis=(1, 3))


class VisionStub(Module):
    """
    Seeded random patch projection followed by pooled channel projections.

    Every weight is frozen and bias-free, so the pyramid of an all-zero image
    is exactly zero.
    """

    def __init__(self, patch_size, level_dims, embed_dim, rng):
        self.patch_size = patch_size
        self.level_dims = tuple(level_dims)
        if not self.level_dims:
            raise ConfigurationError('The vision stub needs at least one feature level')
        self.patch_projection = Parameter(
            glorot_uniform(rng, self.level_dims[0], patch_size * patch_size * 3), trainable=False
        )
        self.level_projections = [
            Parameter(glorot_uniform(rng, d_out, d_in), trainable=False)
            for d_in, d_out in zip(self.level_dims, self.level_dims[1:])
        ]
        self.projector = MLP(self.level_dims[-1], embed_dim, embed_dim, rng).freeze()

    @property
    def num_levels(self):
        return len(self.level_dims)

    def unfreeze(self):
        return self

    def grid_shape(self, image_shape):
        """
        Return ``(H_L, W_L)`` of the coarsest level for an ``H x W`` image.
        """
        height, width = image_shape[:2]
        factor = self.patch_size * 2 ** (self.num_levels - 1)
        if height % factor or width % factor:
            raise ConfigurationError(
                'Image size {}x{} is not divisible by patch size {} times 2^{}'.format(
                    height, width, self.patch_size, self.num_levels - 1)
            )
        return height // factor, width // factor

    def extract_pyramid(self, image):
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValidationError('Expected an H x W x 3 image, got shape {}'.format(image.shape))
        self.grid_shape(image.shape)
        dtype = self.patch_projection.value.dtype
        pixels = image.astype(dtype) / dtype.type(255.0)
        size = self.patch_size
        rows, cols = image.shape[0] // size, image.shape[1] // size
        patches = pixels.reshape(rows, size, cols, size, 3).transpose(0, 2, 1, 3, 4).reshape(rows, cols, -1)
        levels = [patches @ self.patch_projection.value.T]
        for projection in self.level_projections:
            levels.append(average_pool(levels[-1]) @ projection.value.T)
        return FeaturePyramid(levels=levels)

    def visual_tokens(self, pyramid):
        """
        Project the coarsest level, flattened row-major, into ``N_v x D`` tokens.
        """
        coarsest = pyramid.coarsest
        tokens, cache = self.projector.forward(coarsest.reshape(-1, coarsest.shape[-1]))
        return tokens, (coarsest.shape, cache)

    def visual_tokens_backward(self, dtokens, cache):
        shape, projector_cache = cache
        return self.projector.backward(dtokens, projector_cache).reshape(shape)

    def encode(self, image):
        pyramid = self.extract_pyramid(image)
        tokens, _ = self.visual_tokens(pyramid)
        return pyramid, tokens


def zero_pyramid(shapes, dtype=DTYPE):
    return FeaturePyramid(levels=[np.zeros(shape, dtype=dtype) for shape in shapes])
