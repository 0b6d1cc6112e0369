import numpy as np
from django.test import SimpleTestCase

from pixelvla.annotation.prompts import bounding_box, derive_visual_prompts
from pixelvla.episodes import PromptKind, VisualPrompt
from pixelvla.exceptions import PromptError
from pixelvla.tests.mixins import EpisodeMixin


def inside(mask, x, y):
    height, width = mask.shape
    return mask[min(int(y * height), height - 1), min(int(x * width), width - 1)] > 0


class BoundingBoxTests(EpisodeMixin, SimpleTestCase):

    def test_pixel_edges_included(self):
        mask = self.make_mask(None, 8, box=(2, 5, 1, 6))
        self.assertEqual(bounding_box(mask), VisualPrompt.box(1 / 8, 2 / 8, 6 / 8, 5 / 8))

    def test_empty_mask(self):
        with self.assertRaises(PromptError):
            bounding_box(np.zeros((4, 4), dtype=np.uint8))


class DeriveVisualPromptsTests(EpisodeMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.mask = self.make_mask(None, 32, box=(4, 20, 10, 26))

    def test_kinds_and_count(self):
        prompts = derive_visual_prompts(self.mask, seed=0, episode_id=3, n_points=4)
        self.assertEqual([prompt.kind for prompt in prompts],
                         [PromptKind.POINT] * 4 + [PromptKind.LINE, PromptKind.BOX])
        self.assertEqual(prompts[-1], bounding_box(self.mask))

    def test_points_and_line_lie_on_the_mask(self):
        for episode_id in range(20):
            prompts = derive_visual_prompts(self.mask, seed=1, episode_id=episode_id)
            for prompt in prompts[:3]:
                self.assertTrue(inside(self.mask, *prompt.coords))
            x1, y1, x2, y2 = prompts[3].coords
            self.assertTrue(inside(self.mask, x1, y1))
            self.assertTrue(inside(self.mask, x2, y2))

    def test_seeded_by_episode(self):
        first = derive_visual_prompts(self.mask, seed=7, episode_id=2)
        self.assertEqual(first, derive_visual_prompts(self.mask, seed=7, episode_id=2))
        self.assertNotEqual(first, derive_visual_prompts(self.mask, seed=7, episode_id=3))
        self.assertNotEqual(first, derive_visual_prompts(self.mask, seed=8, episode_id=2))

    def test_line_falls_back_to_cell_centers(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[0, 0] = mask[63, 63] = 255
        line = derive_visual_prompts(mask, seed=0, episode_id=0)[3]
        centers = {(0.5 / 64, 0.5 / 64), (63.5 / 64, 63.5 / 64)}
        centers = {tuple(float(np.float32(value)) for value in center) for center in centers}
        self.assertIn(line.coords[:2], centers)
        self.assertIn(line.coords[2:], centers)

    def test_empty_mask(self):
        with self.assertRaises(PromptError):
            derive_visual_prompts(np.zeros((8, 8), dtype=np.uint8), seed=0, episode_id=0)

    def test_single_pixel_mask(self):
        mask = np.zeros((16, 16), dtype=np.uint8)
        mask[5, 9] = 255
        prompts = derive_visual_prompts(mask, seed=3, episode_id=1)
        center = VisualPrompt.point(9.5 / 16, 5.5 / 16)
        self.assertEqual(prompts[:3], [center] * 3)
        x1, y1, x2, y2 = prompts[3].coords
        self.assertTrue(inside(mask, x1, y1))
        self.assertTrue(inside(mask, x2, y2))
        self.assertEqual(prompts[4], VisualPrompt.box(9 / 16, 5 / 16, 10 / 16, 6 / 16))

    def test_random_masks(self):
        rng = np.random.default_rng(11)
        for episode_id in range(1000):
            mask = np.zeros((16, 16), dtype=np.uint8)
            for _ in range(int(rng.integers(1, 4))):
                row, col = rng.integers(0, 16, size=2)
                mask[row:row + int(rng.integers(1, 7)), col:col + int(rng.integers(1, 7))] = 255
            prompts = derive_visual_prompts(mask, seed=11, episode_id=episode_id)
            for prompt in prompts[:3]:
                self.assertTrue(inside(mask, *prompt.coords))
            x1, y1, x2, y2 = prompts[3].coords
            self.assertTrue(inside(mask, x1, y1))
            self.assertTrue(inside(mask, x2, y2))
            rows, cols = np.nonzero(mask)
            self.assertEqual(prompts[4], VisualPrompt.box(
                cols.min() / 16, rows.min() / 16, (cols.max() + 1) / 16, (rows.max() + 1) / 16))
