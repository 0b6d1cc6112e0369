"""
Perception and reasoning backends of the annotation pipeline.

A backend suite plays four roles: gripper segmentation over a frame sequence,
target reasoning over the instruction, open-vocabulary detection and
box-prompted mask prediction. Boxes are ``(x1, y1, x2, y2)`` in normalized
image coordinates with pixel edges included.
"""
import base64
import io
import json
import logging
import re
import subprocess
import sys
import threading
from dataclasses import dataclass

import numpy as np
from django.utils.module_loading import import_string
from PIL import Image

from pixelvla.conf import get_setting
from pixelvla.exceptions import BackendError, ConfigurationError
from pixelvla.synthetic import GRIPPER_COLOR, KINDS_BY_NAME, PALETTE

logger = logging.getLogger(__name__)

ACTION_VERBS = ('pick', 'put', 'move', 'stack', 'open', 'close')
FILLER_WORDS = ('up', 'the', 'a', 'an')
STOP_WORDS = ('near', 'on', 'onto', 'into', 'in', 'to', 'from', 'and', 'with', 'at', 'next', 'beside')
DETECTION_CONFIDENCE = 0.9


@dataclass(frozen=True)
class Detection:
    box: tuple
    confidence: float


def pixel_box(box, shape):
    """
    Integer ``(row0, row1, col0, col1)`` slice bounds of a normalized box on an ``H x W`` grid.
    """
    height, width = shape[:2]
    x1, y1, x2, y2 = box
    col0, row0 = int(np.floor(x1 * width)), int(np.floor(y1 * height))
    col1, row1 = int(np.ceil(x2 * width)), int(np.ceil(y2 * height))
    return max(row0, 0), min(row1, height), max(col0, 0), min(col1, width)


def support_box(mask):
    """
    Normalized box of the nonzero cells of ``mask``, or ``None`` when empty.
    """
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return None
    height, width = mask.shape
    return (cols.min() / width, rows.min() / height, (cols.max() + 1) / width, (rows.max() + 1) / height)


def color_mask(frame, color):
    return np.all(frame == np.asarray(color, dtype=np.uint8), axis=-1)


def extract_target(instruction):
    """
    First noun phrase after an action verb, e.g. ``pick up the red block`` gives ``red block``.
    """
    words = re.findall(r'[a-z0-9]+', instruction.lower())
    for position, word in enumerate(words):
        if word not in ACTION_VERBS:
            continue
        phrase = []
        for follower in words[position + 1:]:
            if follower in STOP_WORDS:
                break
            if follower in FILLER_WORDS and not phrase:
                continue
            phrase.append(follower)
        if phrase:
            return ' '.join(phrase)
    return ''


class BackendSuite:
    """
    Interface of a backend suite; answers must be deterministic given input and seed.
    """

    NAME = None
    concurrent_safe = True

    def __init__(self, seed=0):
        self.seed = seed

    def segment_gripper(self, frames):
        """
        Return one ``Detection`` per frame; ``box`` is ``None`` where no gripper is visible.
        """
        raise NotImplementedError

    def reason_target(self, instruction):
        raise NotImplementedError

    def detect(self, frame, text):
        raise NotImplementedError

    def predict_mask(self, frame, box):
        """
        Return ``(mask, confidence)`` with a ``{0, 255}`` mask of the whole frame.
        """
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


class SyntheticBackendSuite(BackendSuite):
    """
    Oracle backends answering from the exact colors of synthetic scenes.
    """

    NAME = 'synthetic'

    def segment_gripper(self, frames):
        detections = []
        for frame in frames:
            box = support_box(color_mask(frame, GRIPPER_COLOR))
            detections.append(Detection(box=box, confidence=1.0 if box else 0.0))
        return detections

    def reason_target(self, instruction):
        return extract_target(instruction)

    def detect(self, frame, text):
        kind = KINDS_BY_NAME.get(text.strip().lower())
        if kind is None:
            return []
        box = support_box(color_mask(frame, kind.color))
        return [Detection(box=box, confidence=DETECTION_CONFIDENCE)] if box else []

    def predict_mask(self, frame, box):
        row0, row1, col0, col1 = pixel_box(box, frame.shape)
        crop = frame[row0:row1, col0:col1]
        counts = [int(color_mask(crop, kind.color).sum()) for kind in PALETTE]
        if not counts or max(counts) == 0:
            return np.zeros(frame.shape[:2], dtype=np.uint8), 0.0
        kind = PALETTE[int(np.argmax(counts))]
        return color_mask(frame, kind.color).astype(np.uint8) * 255, 1.0


def encode_image(array):
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(array)).save(buffer, format='PNG')
    return base64.b64encode(buffer.getvalue()).decode('ascii')


def decode_image(payload):
    try:
        with Image.open(io.BytesIO(base64.b64decode(payload))) as image:
            return np.array(image)
    except (ValueError, OSError) as exc:
        raise BackendError('Backend returned an undecodable image: {}'.format(exc)) from exc


class SubprocessBackendSuite(BackendSuite):
    """
    Talks line-delimited JSON to a backend server over its standard streams.

    Requests carry ``op``, ``image`` (base64 PNG), ``text`` and ``box``;
    responses carry ``boxes``, ``confidences``, ``mask`` (base64 PNG) and
    ``text``, or ``error``. The server handles one request at a time.
    """

    NAME = 'subprocess'
    concurrent_safe = False

    def __init__(self, seed=0, command=None):
        super().__init__(seed)
        self.command = list(command or [sys.executable, '-m', 'pixelvla.annotation.serve', '--seed', str(seed)])
        self._lock = threading.Lock()
        try:
            self.process = subprocess.Popen(  # pylint: disable=consider-using-with
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1,
            )
        except OSError as exc:
            raise BackendError('Cannot start backend server {}: {}'.format(self.command, exc)) from exc
        logger.info('Started backend server %s (pid %s)', ' '.join(self.command), self.process.pid)

    def request(self, op, image=None, text=None, box=None):
        payload = {'op': op, 'text': text, 'box': list(box) if box is not None else None}
        if image is not None:
            payload['image'] = encode_image(image)
        with self._lock:
            try:
                self.process.stdin.write(json.dumps(payload) + '\n')
                self.process.stdin.flush()
                line = self.process.stdout.readline()
            except (BrokenPipeError, ValueError) as exc:
                raise BackendError('Backend server is gone: {}'.format(exc)) from exc
        if not line:
            raise BackendError('Backend server closed its output during {!r}'.format(op))
        try:
            response = json.loads(line)
        except ValueError as exc:
            raise BackendError('Backend answered {!r} with invalid JSON: {}'.format(op, exc)) from exc
        if response.get('error'):
            raise BackendError('Backend failed {!r}: {}'.format(op, response['error']))
        return response

    def segment_gripper(self, frames):
        detections = []
        for frame in frames:
            response = self.request('segment_gripper', image=frame)
            boxes = response.get('boxes') or []
            confidences = response.get('confidences') or []
            detections.append(Detection(
                box=tuple(boxes[0]) if boxes else None, confidence=float(confidences[0]) if confidences else 0.0,
            ))
        return detections

    def reason_target(self, instruction):
        return self.request('reason_target', text=instruction).get('text') or ''

    def detect(self, frame, text):
        response = self.request('detect', image=frame, text=text)
        return [
            Detection(box=tuple(box), confidence=float(confidence))
            for box, confidence in zip(response.get('boxes') or [], response.get('confidences') or [])
        ]

    def predict_mask(self, frame, box):
        response = self.request('predict_mask', image=frame, box=box)
        confidences = response.get('confidences') or [0.0]
        return decode_image(response['mask']).astype(np.uint8), float(confidences[0])

    def close(self):
        if self.process.poll() is None:
            self.process.stdin.close()
            try:
                self.process.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.process.kill()
                self.process.wait()


def handle_request(suite, request):
    """
    Answer one protocol request with ``suite``.
    """
    op = request.get('op')
    image = decode_image(request['image']) if request.get('image') else None
    if op == 'segment_gripper':
        detection = suite.segment_gripper([image])[0]
        return {
            'boxes': [list(detection.box)] if detection.box else [],
            'confidences': [detection.confidence] if detection.box else [],
        }
    if op == 'reason_target':
        return {'text': suite.reason_target(request.get('text') or '')}
    if op == 'detect':
        detections = suite.detect(image, request.get('text') or '')
        return {
            'boxes': [list(detection.box) for detection in detections],
            'confidences': [detection.confidence for detection in detections],
        }
    if op == 'predict_mask':
        mask, confidence = suite.predict_mask(image, tuple(request['box']))
        return {'mask': encode_image(mask), 'confidences': [confidence]}
    raise BackendError('Unknown backend operation {!r}'.format(op))


def load_backend_suite(name, seed=0):
    """
    Instantiate the backend suite registered under ``name`` in the ``BACKENDS`` setting.
    """
    backends = get_setting('BACKENDS')
    if name not in backends:
        raise ConfigurationError('Unknown backend suite {!r}; available: {}'.format(name, sorted(backends)))
    try:
        suite_class = import_string(backends[name])
    except ImportError as exc:
        raise ConfigurationError('Cannot import backend suite {!r}: {}'.format(backends[name], exc)) from exc
    return suite_class(seed=seed)
