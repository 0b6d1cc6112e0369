import json
import os
import shutil
import tempfile
from dataclasses import replace
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from pixelvla.annotation.backends import SyntheticBackendSuite
from pixelvla.episodes import VisualPrompt
from pixelvla.exceptions import ConfigurationError, EmptyMaskError
from pixelvla.model import ModelConfig, PixelVLA, load_model
from pixelvla.nn import read_checkpoint
from pixelvla.synthetic import linear_task, two_object_task, write_dataset
from pixelvla.tests.mixins import TempDirMixin
from pixelvla.training import (
    CHECKPOINT_NAME,
    METRICS_NAME,
    SUMMARY_NAME,
    StageConfig,
    evaluate,
    infer_action,
    load_dataset,
    train,
)


def fresh_parameters(seed, chunk):
    model = PixelVLA(ModelConfig.from_settings(chunk_size=chunk, seed=seed))
    return {name: parameter.value for name, parameter in model.named_parameters()}


class TrainingTestCase(TempDirMixin, SimpleTestCase):
    """
    Writes the toy corpora once per class into a shared directory.
    """

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.workdir = tempfile.mkdtemp(prefix='pixelvla-train-')
        cls.linear_dir = os.path.join(cls.workdir, 'linear')
        cls.linear = linear_task(16, seed=0)
        write_dataset(cls.linear_dir, 'linear', cls.linear)
        cls.pairs_dir = os.path.join(cls.workdir, 'pairs')
        cls.pairs = two_object_task(4, seed=0)
        write_dataset(cls.pairs_dir, 'two-object', cls.pairs)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.workdir, ignore_errors=True)
        super().tearDownClass()

    @classmethod
    def run_stage(cls, out, **values):
        return train(StageConfig(out=os.path.join(cls.workdir, out), chunk=1, **values))


class LoadDatasetTests(TrainingTestCase):

    def test_one_sample_per_timestep(self):
        samples, stats = load_dataset(self.linear_dir, 4)
        self.assertEqual(len(samples), 16)
        self.assertEqual(samples[0].target.shape, (4, 7))
        self.assertIsNone(samples[0].mask)
        self.assertTrue(np.all(np.abs(samples[0].target) <= 1.0))
        self.assertEqual(stats.low.shape, (7,))

    def test_targets_of_the_pairs_are_unit(self):
        samples, _ = load_dataset(self.pairs_dir, 1, require_annotation=True)
        self.assertEqual(len(samples), 8)
        for sample in samples:
            np.testing.assert_array_equal(np.abs(sample.target), np.ones((1, 7)))
            self.assertTrue(np.any(sample.mask))
            self.assertEqual(len(sample.prompts), 5)

    def test_stage_two_needs_annotation(self):
        with self.assertRaises(ConfigurationError):
            load_dataset(self.linear_dir, 1, require_annotation=True)

    def test_empty_dataset(self):
        with self.assertRaises(ConfigurationError):
            load_dataset(self.tmpdir, 1)


class StageOneTests(TrainingTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.checkpoint, cls.metrics = cls.run_stage('stage1', stage=1, steps=2000, lr=1e-3, data=cls.linear_dir)

    def test_decoder_learns_the_linear_map(self):
        self.assertEqual(len(self.metrics.losses), 2000)
        self.assertLessEqual(self.metrics.final_eval_l1, 0.1 * self.metrics.initial_loss)

    def test_only_the_decoder_moves(self):
        self.assertEqual(self.metrics.frozen_digest_before, self.metrics.frozen_digest_after)
        self.assertNotEqual(self.metrics.trainable_digest_before, self.metrics.trainable_digest_after)
        initial = fresh_parameters(0, 1)
        for name, value in read_checkpoint(self.checkpoint).items():
            if not name.startswith('decoder.'):
                np.testing.assert_array_equal(value, initial[name], err_msg=name)

    def test_outputs(self):
        out = os.path.dirname(self.checkpoint)
        self.assertEqual(os.path.basename(self.checkpoint), CHECKPOINT_NAME)
        with open(os.path.join(out, METRICS_NAME), encoding='utf-8') as metrics_file:
            rows = metrics_file.read().splitlines()
        self.assertEqual(rows[0], 'step,loss')
        self.assertEqual(len(rows), 2001)
        with open(os.path.join(out, SUMMARY_NAME), encoding='utf-8') as summary_file:
            summary = json.load(summary_file)
        self.assertEqual(summary['stage'], 1)
        self.assertEqual(summary['final_eval_l1'], self.metrics.final_eval_l1)

    def test_evaluation_is_repeatable(self):
        first, second = evaluate(self.checkpoint, self.linear_dir), evaluate(self.checkpoint, self.linear_dir)
        self.assertEqual(first.mean, self.metrics.final_eval_l1)
        self.assertEqual(first.to_json(), second.to_json())
        self.assertEqual(first.count, 16)
        self.assertEqual(len(first.p90_per_dim), 7)

    def test_evaluation_ignores_episode_order(self):
        shuffled_dir = os.path.join(self.tmpdir, 'shuffled')
        order = np.random.default_rng(3).permutation(len(self.linear))
        write_dataset(shuffled_dir, 'shuffled', [self.linear[index] for index in order])
        self.assertEqual(evaluate(self.checkpoint, shuffled_dir).to_json(),
                         evaluate(self.checkpoint, self.linear_dir).to_json())

    def test_exact_predictions_score_zero(self):
        model, _ = load_model(self.checkpoint)

        def predicted_targets(*args, **kwargs):
            samples, norm_stats = load_dataset(*args, **kwargs)
            return [
                replace(sample, target=model.act(model.prepare(sample.frame, sample.instruction)))
                for sample in samples
            ], norm_stats

        with mock.patch('pixelvla.training.load_dataset', side_effect=predicted_targets):
            result = evaluate(self.checkpoint, self.linear_dir)
        self.assertEqual(result.mean, 0.0)
        self.assertEqual(result.mean_per_dim, [0.0] * 7)
        self.assertEqual(result.p50_per_dim, [0.0] * 7)
        self.assertEqual(result.p90_per_dim, [0.0] * 7)

    def test_init_must_match_the_chunk_size(self):
        with self.assertRaises(ConfigurationError):
            train(StageConfig(stage=1, steps=2, data=self.linear_dir, chunk=2, init=self.checkpoint,
                              out=os.path.join(self.tmpdir, 'rechunk')))

    def test_same_seed_same_run(self):
        first, first_metrics = self.run_stage('repeat-a', stage=1, steps=30, data=self.linear_dir)
        second, second_metrics = self.run_stage('repeat-b', stage=1, steps=30, data=self.linear_dir)
        self.assertEqual(first_metrics.losses, second_metrics.losses)
        with open(first, 'rb') as left, open(second, 'rb') as right:
            self.assertEqual(left.read(), right.read())

    def test_mask_is_ignored(self):
        frame = self.pairs[0].frames[0]
        plain = infer_action(self.checkpoint, frame, 'move near')
        masked = infer_action(self.checkpoint, frame, 'move near', mask=self.pairs[0].masks[0],
                              prompts=self.pairs[0].prompts)
        np.testing.assert_array_equal(plain, masked)
        self.assertEqual(plain.shape, (1, 7))


class StageTwoTests(TrainingTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.checkpoint, cls.metrics = cls.run_stage(
            'stage2', stage=2, steps=1500, skip_stage1=True, data=cls.pairs_dir, rank=2)
        cls.blind_checkpoint, cls.blind_metrics = cls.run_stage(
            'blind', stage=2, steps=100, skip_stage1=True, data=cls.pairs_dir, rank=2, mask_blind=True)

    def test_mask_tells_the_pairs_apart(self):
        self.assertLessEqual(self.metrics.final_eval_l1, 0.1)

    def test_mask_blind_cannot(self):
        self.assertGreaterEqual(self.blind_metrics.final_eval_l1, 0.99)
        _, metadata = load_model(self.blind_checkpoint)
        self.assertTrue(metadata.mask_blind)

    def test_low_rank_contract(self):
        self.assertEqual(self.metrics.frozen_digest_before, self.metrics.frozen_digest_after)
        self.assertTrue(self.metrics.adapter_ranks)
        self.assertTrue(all(rank <= 2 for rank in self.metrics.adapter_ranks))
        model, metadata = load_model(self.checkpoint)
        self.assertEqual((metadata.stage, metadata.lora), (2, (2, 8.0)))
        initial = fresh_parameters(0, 1)
        for name, parameter in model.backbone.base_parameters():
            np.testing.assert_array_equal(parameter.value, initial['backbone.' + name], err_msg=name)
        for name, parameter in model.vision.named_parameters():
            np.testing.assert_array_equal(parameter.value, initial['vision.' + name], err_msg=name)

    def test_prompts_alone_match_the_supplied_mask(self):
        loaded = load_model(self.checkpoint)
        backends = SyntheticBackendSuite()
        for episode in self.pairs:
            frame, instruction = episode.frames[0], episode.instruction
            with_mask = infer_action(loaded, frame, instruction, mask=episode.masks[0], prompts=episode.prompts)
            predicted = infer_action(loaded, frame, instruction, prompts=episode.prompts, backends=backends)
            np.testing.assert_array_equal(predicted, with_mask)

    def test_actions_stay_within_bounds(self):
        model, metadata = load_model(self.checkpoint)
        episode = self.pairs[0]
        actions = infer_action((model, metadata), episode.frames[0], episode.instruction, mask=episode.masks[0],
                               prompts=episode.prompts)
        self.assertTrue(np.all(actions >= metadata.norm_stats.low))
        self.assertTrue(np.all(actions <= metadata.norm_stats.high))

    def test_prompts_without_backend(self):
        episode = self.pairs[0]
        with self.assertRaises(ConfigurationError):
            infer_action(self.checkpoint, episode.frames[0], episode.instruction, prompts=episode.prompts)

    def test_prompts_on_background(self):
        episode = self.pairs[0]
        with self.assertRaises(EmptyMaskError):
            infer_action(self.checkpoint, episode.frames[0], episode.instruction,
                         prompts=[VisualPrompt.point(0.01, 0.01)], backends=SyntheticBackendSuite())

    def test_stage_two_from_stage_one(self):
        init, _ = self.run_stage('chain-1', stage=1, steps=5, data=self.pairs_dir)
        checkpoint, metrics = self.run_stage('chain-2', stage=2, steps=5, data=self.pairs_dir, init=init, rank=2)
        model, metadata = load_model(checkpoint)
        self.assertEqual(metadata.stage, 2)
        self.assertEqual(len(metrics.losses), 5)
        stage_one = read_checkpoint(init)
        for name, value in stage_one.items():
            if name.startswith('backbone.') or name.startswith('vision.'):
                np.testing.assert_array_equal(dict(model.named_parameters())[name].value, value, err_msg=name)

    def test_stage_two_needs_a_start(self):
        with self.assertRaises(ConfigurationError):
            self.run_stage('no-init', stage=2, steps=5, data=self.pairs_dir)

    def test_stage_two_needs_annotations(self):
        with self.assertRaises(ConfigurationError):
            self.run_stage('plain', stage=2, steps=5, skip_stage1=True, data=self.linear_dir)
