"""
Visual prompts derived from a target mask.
"""
import numpy as np

from pixelvla.episodes import VisualPrompt
from pixelvla.exceptions import PromptError

LINE_TRIES = 1000


def mask_cells(mask):
    rows, cols = np.nonzero(np.asarray(mask))
    if rows.size == 0:
        raise PromptError('Cannot derive visual prompts from an empty mask')
    return rows, cols


def bounding_box(mask):
    """
    Tight box of the mask support in normalized coordinates, pixel edges included.
    """
    height, width = np.shape(mask)
    rows, cols = mask_cells(mask)
    return VisualPrompt.box(cols.min() / width, rows.min() / height, (cols.max() + 1) / width, (rows.max() + 1) / height)


def derive_visual_prompts(mask, seed, episode_id, n_points=3):
    """
    Return ``n_points`` points, one line and one bounding box for ``mask``.

    Points are centers of mask cells drawn uniformly. The line joins two
    points of the box that both fall inside the mask; after ``LINE_TRIES``
    rejections it joins two sampled cell centers instead. The generator is
    seeded by ``(seed, episode_id)``.
    """
    mask = np.asarray(mask)
    height, width = mask.shape
    rows, cols = mask_cells(mask)
    rng = np.random.default_rng([seed, episode_id])

    def cell_center(index):
        return (cols[index] + 0.5) / width, (rows[index] + 0.5) / height

    prompts = [VisualPrompt.point(*cell_center(index)) for index in rng.integers(rows.size, size=n_points)]

    x_low, x_high = cols.min(), cols.max() + 1
    y_low, y_high = rows.min(), rows.max() + 1
    line = None
    for _ in range(LINE_TRIES):
        xs = rng.uniform(x_low, x_high, size=2)
        ys = rng.uniform(y_low, y_high, size=2)
        pixel_cols = np.minimum(xs.astype(np.int64), width - 1)
        pixel_rows = np.minimum(ys.astype(np.int64), height - 1)
        if np.all(mask[pixel_rows, pixel_cols] > 0):
            line = VisualPrompt.line(xs[0] / width, ys[0] / height, xs[1] / width, ys[1] / height)
            break
    if line is None:
        start, end = rng.integers(rows.size, size=2)
        line = VisualPrompt.line(*cell_center(start), *cell_center(end))
    prompts.append(line)
    prompts.append(bounding_box(mask))
    return prompts
