import io
import json

import ddt
import numpy as np
from django.test import SimpleTestCase, override_settings

from pixelvla.annotation.backends import (
    SyntheticBackendSuite,
    decode_image,
    encode_image,
    extract_target,
    handle_request,
    load_backend_suite,
    pixel_box,
    support_box,
)
from pixelvla.annotation.serve import serve
from pixelvla.exceptions import BackendError, ConfigurationError
from pixelvla.synthetic import PALETTE, generate_scene


@ddt.ddt
class ExtractTargetTests(SimpleTestCase):

    @ddt.data(
        ('pick up the red block', 'red block'),
        ('move the blue ball near the green cup', 'blue ball'),
        ('stack the yellow can on the red block', 'yellow can'),
        ('Put the purple eggplant into the drawer', 'purple eggplant'),
        ('wave hello', ''),
    )
    @ddt.unpack
    def test_extract(self, instruction, target):
        self.assertEqual(extract_target(instruction), target)


class BoxHelperTests(SimpleTestCase):

    def test_pixel_box(self):
        self.assertEqual(pixel_box((0.25, 0.25, 0.5, 0.75), (8, 8)), (2, 6, 2, 4))
        self.assertEqual(pixel_box((0.0, 0.0, 1.0, 1.0), (4, 6, 3)), (0, 4, 0, 6))

    def test_support_box(self):
        mask = np.zeros((4, 8), dtype=bool)
        mask[1:3, 2:4] = True
        self.assertEqual(support_box(mask), (0.25, 0.25, 0.5, 0.75))
        self.assertIsNone(support_box(np.zeros((4, 4), dtype=bool)))


class SyntheticBackendSuiteTests(SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.scene = generate_scene(np.random.default_rng(4))
        self.suite = SyntheticBackendSuite(seed=0)
        self.frame = self.scene.episode.frames[0]

    def test_gripper_found_in_every_frame(self):
        detections = self.suite.segment_gripper(self.scene.episode.frames)
        self.assertEqual(len(detections), self.scene.episode.length)
        self.assertTrue(all(detection.box is not None for detection in detections))

    def test_gripper_missing(self):
        detection, = self.suite.segment_gripper([np.zeros((8, 8, 3), dtype=np.uint8)])
        self.assertIsNone(detection.box)
        self.assertEqual(detection.confidence, 0.0)

    def test_detect_and_segment_target(self):
        detection, = self.suite.detect(self.frame, self.scene.target.kind.name)
        mask, confidence = self.suite.predict_mask(self.frame, detection.box)
        self.assertEqual(confidence, 1.0)
        np.testing.assert_array_equal(mask, self.scene.target_mask)

    def test_absent_object(self):
        present = {scene_object.kind for scene_object in self.scene.objects}
        absent = next(kind for kind in PALETTE if kind not in present)
        self.assertEqual(self.suite.detect(self.frame, absent.name), [])
        self.assertEqual(self.suite.detect(self.frame, 'unicorn'), [])

    def test_empty_region(self):
        mask, confidence = self.suite.predict_mask(self.frame, (0.0, 0.0, 0.05, 0.05))
        self.assertFalse(np.any(mask))
        self.assertEqual(confidence, 0.0)


class ProtocolTests(SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.scene = generate_scene(np.random.default_rng(5))
        self.suite = SyntheticBackendSuite()

    def test_image_round_trip(self):
        frame = self.scene.episode.frames[2]
        np.testing.assert_array_equal(decode_image(encode_image(frame)), frame)

    def test_undecodable_image(self):
        with self.assertRaises(BackendError):
            decode_image('bm90IGEgcG5n')

    def test_detect_request(self):
        response = handle_request(self.suite, {
            'op': 'detect', 'image': encode_image(self.scene.episode.frames[0]), 'text': self.scene.named.name,
        })
        self.assertEqual(len(response['boxes']), 1)
        self.assertEqual(response['confidences'], [0.9])

    def test_unknown_operation(self):
        with self.assertRaises(BackendError):
            handle_request(self.suite, {'op': 'teleport'})

    def test_serve_answers_every_line(self):
        requests = '\n'.join([
            json.dumps({'op': 'reason_target', 'text': 'pick up the green cup'}),
            '',
            'not json',
            json.dumps({'op': 'teleport'}),
        ])
        output = io.StringIO()
        self.assertEqual(serve(io.StringIO(requests), output, self.suite), 3)
        responses = [json.loads(line) for line in output.getvalue().splitlines()]
        self.assertEqual(responses[0], {'text': 'green cup'})
        self.assertIn('error', responses[1])
        self.assertIn('error', responses[2])


class LoadBackendSuiteTests(SimpleTestCase):

    def test_synthetic(self):
        with load_backend_suite('synthetic', seed=3) as suite:
            self.assertIsInstance(suite, SyntheticBackendSuite)
            self.assertEqual(suite.seed, 3)

    def test_unknown_name(self):
        with self.assertRaises(ConfigurationError):
            load_backend_suite('oracle-of-delphi')

    @override_settings(PIXELVLA={'BACKENDS': {'broken': 'pixelvla.annotation.backends.MissingSuite'}})
    def test_unimportable_suite(self):
        with self.assertRaises(ConfigurationError):
            load_backend_suite('broken')
