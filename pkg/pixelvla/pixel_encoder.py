"""
Multiscale pixel-aware encoder.

For every pyramid level the target mask is area-downsampled to the level
grid, the features are averaged under the resulting soft weights, and the
pooled vector is projected to the embedding width. The projections are summed
and an MLP turns the sum into ``N_p`` pixel-aware tokens.
"""
import numpy as np

from pixelvla.exceptions import ConfigurationError, DimensionError, EmptyMaskError
from pixelvla.nn import MLP, Linear, Module

MASK_EPSILON = 1e-6


def downsample_mask(mask, target_shape):
    """
    Area-average a ``{0, 255}`` mask onto a ``target_shape`` grid of weights in [0, 1].
    """
    mask = np.asarray(mask)
    height, width = mask.shape
    rows, cols = target_shape
    if rows < 1 or cols < 1 or height % rows or width % cols:
        raise ConfigurationError('Mask {}x{} cannot be pooled onto a {}x{} grid'.format(height, width, rows, cols))
    weights = mask.astype(np.float64) / 255.0
    return weights.reshape(rows, height // rows, cols, width // cols).mean(axis=(1, 3))


def mask_pool(features, weights, eps=MASK_EPSILON):
    """
    Return the ``weights``-weighted mean of an ``H x W x C`` feature grid.
    """
    if features.shape[:2] != weights.shape:
        raise DimensionError('Mask weights {} do not match the feature grid {}'.format(weights.shape, features.shape))
    total = weights.sum()
    if total <= eps:
        raise EmptyMaskError('Mask is empty at {}x{} resolution'.format(*weights.shape))
    weights = weights.astype(features.dtype)
    return np.einsum('hw,hwc->c', weights, features) / features.dtype.type(total)


def mask_pool_backward(dpooled, weights, dtype):
    weights = weights.astype(dtype)
    return weights[:, :, None] * dpooled[None, None, :] / weights.sum()


class PixelEncoder(Module):

    def __init__(self, level_dims, embed_dim, num_tokens, rng):
        self.embed_dim = embed_dim
        self.num_tokens = num_tokens
        self.projections = [Linear(level_dim, embed_dim, rng) for level_dim in level_dims]
        self.mlp = MLP(embed_dim, embed_dim, num_tokens * embed_dim, rng)

    def forward(self, levels, mask):
        levels = getattr(levels, 'levels', levels)
        if len(levels) != len(self.projections):
            raise DimensionError('Encoder has {} level projections, pyramid has {} levels'.format(
                len(self.projections), len(levels)))
        summed = 0.0
        level_caches = []
        for features, projection in zip(levels, self.projections):
            weights = downsample_mask(mask, features.shape[:2])
            projected, projection_cache = projection.forward(mask_pool(features, weights))
            summed = summed + projected
            level_caches.append((weights, features.dtype, projection_cache))
        flat, mlp_cache = self.mlp.forward(summed)
        return flat.reshape(self.num_tokens, self.embed_dim), (level_caches, mlp_cache)

    def backward(self, dtokens, cache):
        """
        Accumulate parameter gradients and return the gradient of every pyramid level.
        """
        level_caches, mlp_cache = cache
        dsummed = self.mlp.backward(dtokens.reshape(-1), mlp_cache)
        return [
            mask_pool_backward(projection.backward(dsummed, projection_cache), weights, dtype)
            for projection, (weights, dtype, projection_cache) in zip(self.projections, level_caches)
        ]


def encode_pixels(pyramid, mask, encoder):
    tokens, _ = encoder.forward(pyramid, mask)
    return tokens
