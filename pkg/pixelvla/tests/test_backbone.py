import numpy as np
from django.test import SimpleTestCase

from pixelvla.backbone import (
    Backbone,
    assemble_sequence,
    backbone_forward,
    fnv1a,
    tokenize_instruction,
)
from pixelvla.episodes import render_template
from pixelvla.exceptions import ContractError, DimensionError, ValidationError


class TokenizerTests(SimpleTestCase):

    def test_fnv1a(self):
        self.assertEqual(fnv1a(''), 0x811C9DC5)
        self.assertEqual(fnv1a('a'), 0xE40C292C)

    def test_words_only(self):
        tokens = tokenize_instruction('Move, near!', 256)
        self.assertEqual(len(tokens), 2)
        self.assertEqual(tokens.ids, (fnv1a('move') % 256, fnv1a('near') % 256))
        self.assertIsNone(tokens.annotation_splice)

    def test_markers_record_splices(self):
        tokens = tokenize_instruction(render_template('pick the eggplant', True, True), 1024)
        self.assertEqual(len(tokens), 11)
        self.assertEqual(tokens.annotation_splice, 11)
        self.assertEqual(tokens.prompt_splice, 11)

    def test_template_without_clause(self):
        tokens = tokenize_instruction(render_template('move near', False, False), 1024)
        self.assertEqual(len(tokens), 8)
        self.assertIsNone(tokens.prompt_splice)

    def test_empty(self):
        with self.assertRaises(ValidationError):
            tokenize_instruction('  ', 1024)


class AssembleSequenceTests(SimpleTestCase):

    def segments(self, counts, dim=8):
        rng = np.random.default_rng(0)
        return [rng.normal(size=(count, dim)) for count in counts]

    def test_layout(self):
        sequence = assemble_sequence(*self.segments((16, 5, 4, 1, 8)))
        layout = sequence.layout
        self.assertEqual(sequence.tokens.shape, (34, 8))
        self.assertEqual(layout.length, 34)
        self.assertEqual(layout.language, range(16, 21))
        self.assertEqual(layout.pixel, range(21, 25))
        self.assertEqual(layout.prompt, range(25, 26))
        self.assertEqual(layout.registers, range(26, 34))
        covered = [index for segment in layout.ranges() for index in segment]
        self.assertEqual(covered, list(range(34)))

    def test_random_layouts_tile_the_sequence(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            counts = [int(count) for count in rng.integers(0, 12, size=4)] + [int(rng.integers(1, 9))]
            sequence = assemble_sequence(*[rng.normal(size=(count, 4)) for count in counts])
            layout = sequence.layout
            self.assertEqual(layout.length, sum(counts))
            self.assertEqual(len(sequence.tokens), sum(counts))
            self.assertEqual([len(segment) for segment in layout.ranges()], counts)
            covered = [index for segment in layout.ranges() for index in segment]
            self.assertEqual(covered, list(range(sum(counts))))

    def test_dropping_pixel_and_prompt_gives_stage_one_sequence(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            counts = [int(count) for count in rng.integers(1, 10, size=5)]
            visual, language, pixel, prompt, registers = [rng.normal(size=(count, 4)) for count in counts]
            full = assemble_sequence(visual, language, pixel, prompt, registers)
            plain = assemble_sequence(visual, language, pixel[:0], prompt[:0], registers)
            kept = np.ones(full.layout.length, dtype=bool)
            kept[full.layout.slice('pixel')] = False
            kept[full.layout.slice('prompt')] = False
            np.testing.assert_array_equal(full.tokens[kept], plain.tokens)
            self.assertEqual(plain.layout.registers, range(counts[0] + counts[1], plain.layout.length))
            self.assertEqual(len(plain.layout.pixel) + len(plain.layout.prompt), 0)

    def test_segments_keep_their_rows(self):
        segments = self.segments((4, 3, 0, 2, 2))
        sequence = assemble_sequence(*segments)
        np.testing.assert_array_equal(sequence.tokens[sequence.layout.slice('prompt')], segments[3])
        self.assertEqual(len(sequence.layout.pixel), 0)

    def test_needs_registers(self):
        with self.assertRaises(ContractError):
            assemble_sequence(*self.segments((4, 3, 2, 2, 0)))

    def test_width_mismatch(self):
        segments = self.segments((4, 3, 2, 2, 2))
        segments[2] = np.zeros((2, 5))
        with self.assertRaises(DimensionError):
            assemble_sequence(*segments)

    def test_placeholder_must_close_instruction(self):
        tokens = tokenize_instruction(render_template('move near', True, True), 64)
        segments = self.segments((4, len(tokens), 2, 2, 2))
        assemble_sequence(*segments, tokens=tokens)
        segments[1] = segments[1][:-1]
        with self.assertRaises(ContractError):
            assemble_sequence(*segments, tokens=tokens)


class BackboneTests(SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.backbone = Backbone(16, 8, 2, 2, 3, np.random.default_rng(0))
        self.tokens = np.random.default_rng(1).normal(size=(7, 8)).astype(np.float32)

    def test_base_is_frozen(self):
        self.assertEqual(self.backbone.trainable_parameters(), [])

    def test_shape_is_preserved(self):
        hidden, _ = self.backbone.forward(self.tokens)
        self.assertEqual(hidden.shape, (7, 8))

    def test_fresh_adapters_leave_output_unchanged(self):
        before, _ = self.backbone.forward(self.tokens)
        adapters = self.backbone.attach_adapters(2, 4.0, np.random.default_rng(2))
        after, _ = self.backbone.forward(self.tokens)
        self.assertEqual(len(adapters), 12)
        np.testing.assert_array_equal(before, after)

    def test_only_adapters_train(self):
        self.backbone.attach_adapters(2, 4.0, np.random.default_rng(2))
        names = [name for name, _ in self.backbone.trainable_parameters()]
        self.assertTrue(names)
        self.assertTrue(all('.adapter.' in name for name in names))
        self.assertFalse(any('.adapter.' in name for name, _ in self.backbone.base_parameters()))

    def test_embed_language(self):
        tokens = tokenize_instruction('move near the block', 16)
        embedded = self.backbone.embed_language(tokens)
        self.assertEqual(embedded.shape, (4, 8))
        np.testing.assert_array_equal(embedded[0], self.backbone.token_embedding.table.value[tokens.ids[0]])

    def test_backbone_forward(self):
        sequence = assemble_sequence(*[np.ones((count, 8), dtype=np.float32) for count in (2, 2, 1, 0, 3)])
        self.assertEqual(backbone_forward(sequence, self.backbone).shape, (8, 8))
