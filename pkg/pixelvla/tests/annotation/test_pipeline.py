import json
import os
import shutil
import tempfile
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from pixelvla.annotation import pipeline
from pixelvla.annotation.backends import Detection, SubprocessBackendSuite, SyntheticBackendSuite
from pixelvla.annotation.pipeline import (
    AnnotationStatus,
    RegionProposal,
    annotate_dataset,
    compose_discrete_video,
    find_gripper_close,
    mask_inside_fraction,
    propose_region,
    segment_target,
)
from pixelvla.episodes import EPISODES_DIR, episode_paths, read_episode, read_manifest
from pixelvla.exceptions import PipelineError, ProposalError, ValidationError
from pixelvla.synthetic import episode_filename, generate_corpus
from pixelvla.tests.mixins import EpisodeMixin, TempDirMixin


def episode_bytes(data_dir):
    return {path.name: path.read_bytes() for path in episode_paths(data_dir)}


class GripperCloseTests(EpisodeMixin, SimpleTestCase):

    def test_first_closed_step(self):
        episode = self.make_episode(np.random.default_rng(0), length=5)
        episode.actions[:, 6] = [0.0, 0.0, 1.0, 1.0, 0.0]
        self.assertEqual(find_gripper_close(episode), 2)

    def test_never_closes(self):
        episode = self.make_episode(np.random.default_rng(0), length=4)
        episode.actions[:, 6] = 0.1
        self.assertIsNone(find_gripper_close(episode))

    def test_discrete_video_skips_open_episodes(self):
        rng = np.random.default_rng(1)
        episodes = [self.make_episode(rng, length=3) for _ in range(3)]
        episodes[0].actions[:, 6] = [0.0, 1.0, 1.0]
        episodes[1].actions[:, 6] = 0.0
        episodes[2].actions[:, 6] = [1.0, 1.0, 1.0]
        video = compose_discrete_video(episodes)
        self.assertEqual(video.episode_ids, [0, 2])
        self.assertEqual(video.close_frames, [1, 0])
        self.assertEqual(video.excluded, [1])
        np.testing.assert_array_equal(video.frames[0], episodes[0].frames[1])

    def test_no_close_anywhere(self):
        episode = self.make_episode(np.random.default_rng(2))
        episode.actions[:, 6] = 0.0
        with self.assertRaises(PipelineError):
            compose_discrete_video([episode])
        with self.assertRaises(PipelineError):
            compose_discrete_video([])


class RegionProposalTests(SimpleTestCase):

    def test_expansion_about_center(self):
        proposal = propose_region((0.4, 0.4, 0.6, 0.6), 1.5)
        for value, expected in zip(proposal.box, (0.35, 0.35, 0.65, 0.65)):
            self.assertAlmostEqual(value, expected)

    def test_clamped_to_image(self):
        proposal = propose_region((0.0, 0.9, 0.2, 1.0), 1.5)
        for value, expected in zip(proposal.box, (0.0, 0.875, 0.25, 1.0)):
            self.assertAlmostEqual(value, expected)

    def test_degenerate_box(self):
        with self.assertRaises(ProposalError):
            propose_region((0.5, 0.5, 0.5, 0.7), 1.5)
        with self.assertRaises(ProposalError):
            RegionProposal(box=(0.2, 0.2, 1.2, 0.4))


class SegmentTargetTests(EpisodeMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.frame = np.zeros((16, 16, 3), dtype=np.uint8)
        self.proposal = RegionProposal(box=(0.0, 0.0, 0.5, 0.5))
        self.inside = self.make_mask(None, 16, box=(1, 6, 1, 6))
        self.outside = self.make_mask(None, 16, box=(10, 15, 10, 15))
        self.backends = mock.Mock()

    def test_inside_fraction(self):
        straddling = self.make_mask(None, 16, box=(0, 4, 6, 10))
        self.assertEqual(mask_inside_fraction(straddling, self.proposal.box), 0.5)
        self.assertEqual(mask_inside_fraction(np.zeros((16, 16)), self.proposal.box), 0.0)

    def test_keeps_candidates_inside_the_proposal(self):
        self.backends.detect.return_value = [
            Detection(box=(0.0, 0.0, 0.4, 0.4), confidence=0.8),
            Detection(box=(0.6, 0.6, 1.0, 1.0), confidence=0.95),
        ]
        self.backends.predict_mask.side_effect = [(self.inside, 0.8), (self.outside, 0.95)]
        segmentation = segment_target(self.frame, 'red block', self.proposal, self.backends)
        self.assertEqual(segmentation.status, AnnotationStatus.OK)
        self.assertEqual(segmentation.confidence, 0.8)
        np.testing.assert_array_equal(segmentation.mask, self.inside)
        self.backends.detect.assert_called_once_with(self.frame, 'red block')

    def test_most_confident_survivor_wins(self):
        other = self.make_mask(None, 16, box=(2, 4, 2, 4))
        self.backends.detect.return_value = [
            Detection(box=(0.0, 0.0, 0.4, 0.4), confidence=0.5),
            Detection(box=(0.1, 0.1, 0.3, 0.3), confidence=0.7),
        ]
        self.backends.predict_mask.side_effect = [(self.inside, 0.5), (other, 0.7)]
        segmentation = segment_target(self.frame, 'red block', self.proposal, self.backends)
        np.testing.assert_array_equal(segmentation.mask, other)

    def test_low_confidence(self):
        self.backends.detect.return_value = [Detection(box=(0.0, 0.0, 0.4, 0.4), confidence=0.2)]
        self.backends.predict_mask.return_value = (self.inside, 0.2)
        segmentation = segment_target(self.frame, 'red block', self.proposal, self.backends)
        self.assertEqual(segmentation.status, AnnotationStatus.LOW_CONFIDENCE)
        self.assertIsNone(segmentation.mask)

    def test_nothing_inside(self):
        self.backends.detect.return_value = [Detection(box=(0.6, 0.6, 1.0, 1.0), confidence=0.9)]
        self.backends.predict_mask.return_value = (self.outside, 0.9)
        segmentation = segment_target(self.frame, 'red block', self.proposal, self.backends)
        self.assertEqual(segmentation.status, AnnotationStatus.NO_DETECTION)

    def test_empty_target(self):
        with self.assertRaises(ValidationError):
            segment_target(self.frame, ' ', self.proposal, self.backends)


class AnnotateCorpusTests(TempDirMixin, SimpleTestCase):
    """
    One 200-scene corpus, a fifth of which name an object missing from the scene.
    """

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.corpus_dir = tempfile.mkdtemp(prefix='pixelvla-corpus-')
        cls.scenes = generate_corpus(os.path.join(cls.corpus_dir, 'raw'), 200, seed=0)
        cls.annotated_dir = os.path.join(cls.corpus_dir, 'annotated')
        cls.report = annotate_dataset(
            os.path.join(cls.corpus_dir, 'raw'), cls.annotated_dir, SyntheticBackendSuite(seed=0), seed=0,
        )

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.corpus_dir, ignore_errors=True)
        super().tearDownClass()

    def test_filter_rate(self):
        self.assertEqual(self.report.total, 200)
        self.assertEqual(self.report.ok, 160)
        self.assertEqual(self.report.filter_rate, 0.2)
        self.assertEqual(self.report.per_status['no_detection'], 40)
        self.assertEqual(self.report.triplets, sum(scene.episode.length for scene in self.scenes if scene.solvable))

    def test_failed_episodes_are_unsolvable_ones(self):
        for entry, scene in zip(self.report.entries, self.scenes):
            self.assertEqual(entry.status is AnnotationStatus.OK, scene.solvable)

    def test_masks_match_ground_truth(self):
        for index, scene in enumerate(self.scenes):
            if not scene.solvable:
                continue
            episode = read_episode(os.path.join(self.annotated_dir, EPISODES_DIR, episode_filename(index)))
            predicted, truth = episode.masks[0] > 0, scene.target_mask > 0
            iou = np.logical_and(predicted, truth).sum() / np.logical_or(predicted, truth).sum()
            self.assertGreaterEqual(iou, 0.99)
            self.assertEqual(episode.target_text, scene.target.kind.name)
            self.assertEqual(len(episode.prompts), 5)
            self.assertTrue(np.all(episode.masks == episode.masks[0]))

    def test_outputs(self):
        self.assertEqual(len(episode_paths(self.annotated_dir)), 160)
        manifest = read_manifest(self.annotated_dir)
        self.assertEqual(manifest.episode_count, 160)
        self.assertIsNotNone(manifest.norm_stats)
        with open(os.path.join(self.annotated_dir, 'annotation_report.json')) as report_file:
            content = json.load(report_file)
        self.assertEqual(content['filter_rate'], 0.2)
        self.assertEqual(len(content['per_episode']), 200)

    def test_rerun_is_bitwise_identical(self):
        report = annotate_dataset(
            os.path.join(self.corpus_dir, 'raw'), self.tmpdir, SyntheticBackendSuite(seed=0), seed=0, jobs=4,
        )
        self.assertEqual(report.to_json(), self.report.to_json())
        self.assertEqual(episode_bytes(self.tmpdir), episode_bytes(self.annotated_dir))


class AnnotateDatasetTests(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.raw_dir = os.path.join(self.tmpdir, 'raw')
        generate_corpus(self.raw_dir, 5, seed=3)

    def test_subprocess_suite_matches_in_process(self):
        expected_dir = os.path.join(self.tmpdir, 'expected')
        expected = annotate_dataset(self.raw_dir, expected_dir, SyntheticBackendSuite(seed=3), seed=3)
        with SubprocessBackendSuite(seed=3) as backends:
            report = annotate_dataset(self.raw_dir, os.path.join(self.tmpdir, 'out'), backends, seed=3, jobs=2)
        self.assertEqual(report.to_json(), expected.to_json())
        self.assertEqual(episode_bytes(os.path.join(self.tmpdir, 'out')), episode_bytes(expected_dir))

    def test_missing_corpus(self):
        with self.assertRaises(PipelineError):
            annotate_dataset(os.path.join(self.tmpdir, 'absent'), self.tmpdir, SyntheticBackendSuite(), seed=0)

    def test_rerun_over_smaller_corpus_drops_old_episodes(self):
        output_dir = os.path.join(self.tmpdir, 'out')
        first = annotate_dataset(self.raw_dir, output_dir, SyntheticBackendSuite(), seed=0)
        self.assertEqual(len(episode_paths(output_dir)), first.ok)
        small_dir = os.path.join(self.tmpdir, 'small')
        generate_corpus(small_dir, 2, seed=4)
        report = annotate_dataset(small_dir, output_dir, SyntheticBackendSuite(), seed=0)
        expected = [entry.name for entry in report.entries if entry.status is AnnotationStatus.OK]
        self.assertEqual([path.name for path in episode_paths(output_dir)], sorted(expected))
        self.assertEqual(read_manifest(output_dir).episode_count, len(expected))

    def test_input_corpus_is_never_overwritten(self):
        with self.assertRaises(PipelineError):
            annotate_dataset(self.raw_dir, self.raw_dir, SyntheticBackendSuite(), seed=0)
        self.assertEqual(len(episode_paths(self.raw_dir)), 5)

    def test_write_failure_removes_partial_outputs(self):
        output_dir = os.path.join(self.tmpdir, 'out')
        real_write = pipeline.atomic_write

        def failing_write(path, payload):
            if path.endswith('.json'):
                raise OSError('disk full')
            real_write(path, payload)

        with mock.patch.object(pipeline, 'atomic_write', side_effect=failing_write):
            with self.assertRaises(PipelineError):
                annotate_dataset(self.raw_dir, output_dir, SyntheticBackendSuite(), seed=0)
        self.assertEqual(episode_paths(output_dir), [])
