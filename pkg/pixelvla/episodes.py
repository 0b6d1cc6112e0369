"""
Episode records, action normalization and the instruction template.

Episode record layout (little-endian): magic ``PXVL``, u32 version, u32 T,
u16 H, u16 W, u32 instruction length + UTF-8, u32 target length + UTF-8,
frames T*H*W*3 u8, masks T*H*W u8, actions T*7 f32, u32 prompt count, then per
prompt a u8 kind tag followed by its f32 coordinates.
"""
import json
import logging
import os
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from pixelvla.exceptions import DegenerateStatsError, EpisodeIOError, FormatError, ValidationError
from pixelvla.utils import atomic_write

logger = logging.getLogger(__name__)

MAGIC = b'PXVL'
VERSION = 1
ACTION_DIM = 7
GRIPPER_DIM = ACTION_DIM - 1
NUM_BINS = 256
EPISODE_SUFFIX = '.pxvl'
EPISODES_DIR = 'episodes'
MANIFEST_NAME = 'manifest.json'

ANNOTATIONS_MARKER = '{</annotations>}'
PROMPTS_MARKER = '{</visual prompts>}'
TEMPLATE_PREFIX = 'What should the robot do to {}'
TEMPLATE_REFER_CLAUSE = ', refer to {} {}'.format(ANNOTATIONS_MARKER, PROMPTS_MARKER)


class PromptKind(Enum):
    POINT = 0
    LINE = 1
    BOX = 2
    MASK_REF = 3

    @property
    def coord_count(self):
        return {PromptKind.POINT: 2, PromptKind.LINE: 4, PromptKind.BOX: 4, PromptKind.MASK_REF: 0}[self]


@dataclass(frozen=True)
class VisualPrompt:
    """
    A point, line, box or mask reference in normalized image coordinates.

    Coordinates are rounded to float32 on construction so that they survive
    the episode format unchanged.
    """
    kind: PromptKind
    coords: tuple = ()

    def __post_init__(self):
        kind = PromptKind(self.kind)
        coords = tuple(float(np.float32(value)) for value in self.coords)
        if len(coords) != kind.coord_count:
            raise ValidationError('{} prompts take {} coordinates, got {}'.format(
                kind.name.lower(), kind.coord_count, len(coords)))
        if any(not 0.0 <= value <= 1.0 for value in coords):
            raise ValidationError('Prompt coordinates must lie in [0, 1], got {}'.format(coords))
        if kind is PromptKind.BOX and (coords[0] > coords[2] or coords[1] > coords[3]):
            raise ValidationError('Box corners must satisfy x1 <= x2 and y1 <= y2, got {}'.format(coords))
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'coords', coords)

    @classmethod
    def point(cls, x, y):
        return cls(PromptKind.POINT, (x, y))

    @classmethod
    def line(cls, x1, y1, x2, y2):
        return cls(PromptKind.LINE, (x1, y1, x2, y2))

    @classmethod
    def box(cls, x1, y1, x2, y2):
        return cls(PromptKind.BOX, (x1, y1, x2, y2))

    @classmethod
    def mask_ref(cls):
        return cls(PromptKind.MASK_REF, ())

    @classmethod
    def parse(cls, text):
        """
        Parse ``point:x,y``, ``line:x1,y1,x2,y2``, ``box:x1,y1,x2,y2`` or ``mask``.
        """
        kind_name, _, values = text.strip().partition(':')
        try:
            kind = PromptKind[kind_name.strip().upper().replace('MASK', 'MASK_REF')]
        except KeyError:
            raise ValidationError('Unknown prompt kind in {!r}'.format(text)) from None
        try:
            coords = tuple(float(value) for value in values.split(',')) if values.strip() else ()
        except ValueError:
            raise ValidationError('Prompt coordinates in {!r} are not numbers'.format(text)) from None
        return cls(kind, coords)


class Episode:
    """
    One demonstration: frames, per-frame masks and actions, instruction, prompts and target text.
    """

    def __init__(self, frames, masks, actions, instruction, prompts=(), target_text=''):
        self.frames = np.ascontiguousarray(frames, dtype=np.uint8)
        self.masks = np.ascontiguousarray(masks, dtype=np.uint8)
        self.actions = np.ascontiguousarray(actions, dtype=np.float32)
        self.instruction = instruction
        self.prompts = list(prompts)
        self.target_text = target_text

    @property
    def length(self):
        return self.frames.shape[0]

    @property
    def image_shape(self):
        return self.frames.shape[1:3]

    @property
    def is_annotated(self):
        return bool(self.target_text) and bool(np.any(self.masks))

    def validate(self):
        if self.frames.ndim != 4 or self.frames.shape[3] != 3 or self.frames.shape[0] < 1:
            raise ValidationError('Frames must have shape T x H x W x 3 with T >= 1, got {}'.format(self.frames.shape))
        length, height, width = self.frames.shape[:3]
        if self.masks.shape != (length, height, width):
            raise ValidationError('Masks shape {} does not match frames {}'.format(self.masks.shape, self.frames.shape))
        if self.actions.shape != (length, ACTION_DIM):
            raise ValidationError('Actions must have shape {} x {}, got {}'.format(length, ACTION_DIM, self.actions.shape))
        if not np.all((self.masks == 0) | (self.masks == 255)):
            raise ValidationError('Masks may only contain 0 and 255')
        if not np.all(np.isfinite(self.actions)):
            raise ValidationError('Actions must be finite')
        gripper = self.actions[:, GRIPPER_DIM]
        if np.any(gripper < 0.0) or np.any(gripper > 1.0):
            raise ValidationError('Gripper channel must lie in [0, 1]')
        if height > 0xFFFF or width > 0xFFFF:
            raise ValidationError('Frames larger than 65535 pixels per side cannot be stored')
        for prompt in self.prompts:
            if not isinstance(prompt, VisualPrompt):
                raise ValidationError('Prompts must be VisualPrompt instances, got {!r}'.format(prompt))
        return self

    def replace(self, **changes):
        values = {
            'frames': self.frames, 'masks': self.masks, 'actions': self.actions,
            'instruction': self.instruction, 'prompts': self.prompts, 'target_text': self.target_text,
        }
        values.update(changes)
        return Episode(**values)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
            and self.masks.tobytes() == other.masks.tobytes()
            and self.actions.shape == other.actions.shape
            and self.actions.tobytes() == other.actions.tobytes()
            and self.instruction == other.instruction
            and self.target_text == other.target_text
            and self.prompts == other.prompts
        )

    def __repr__(self):
        return 'Episode(T={}, image={}, instruction={!r}, prompts={}, target_text={!r})'.format(
            self.length, self.image_shape, self.instruction, len(self.prompts), self.target_text)


def encode_episode(episode):
    episode.validate()
    length, height, width = episode.frames.shape[:3]
    instruction = episode.instruction.encode('utf-8')
    target = episode.target_text.encode('utf-8')
    chunks = [
        MAGIC,
        struct.pack('<IIHH', VERSION, length, height, width),
        struct.pack('<I', len(instruction)), instruction,
        struct.pack('<I', len(target)), target,
        episode.frames.tobytes(),
        episode.masks.tobytes(),
        episode.actions.astype('<f4').tobytes(),
        struct.pack('<I', len(episode.prompts)),
    ]
    for prompt in episode.prompts:
        chunks.append(struct.pack('<B', prompt.kind.value))
        chunks.append(struct.pack('<{}f'.format(len(prompt.coords)), *prompt.coords))
    return b''.join(chunks)


class _Cursor:

    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.payload):
            raise EpisodeIOError('Episode record truncated at byte {}'.format(len(self.payload)))
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_episode(payload):
    cursor = _Cursor(payload)
    magic = payload[:4]
    if magic != MAGIC:
        raise FormatError('Not an episode record: bad magic {!r}'.format(magic))
    cursor.take(4)
    version, length, height, width = cursor.unpack('<IIHH')
    if version != VERSION:
        raise FormatError('Unsupported episode version {}'.format(version))
    try:
        instruction = cursor.take(cursor.unpack('<I')[0]).decode('utf-8')
        target_text = cursor.take(cursor.unpack('<I')[0]).decode('utf-8')
    except UnicodeDecodeError as exc:
        raise FormatError('Episode text is not valid UTF-8: {}'.format(exc)) from exc
    pixels = length * height * width
    frames = np.frombuffer(cursor.take(pixels * 3), dtype=np.uint8).reshape(length, height, width, 3)
    masks = np.frombuffer(cursor.take(pixels), dtype=np.uint8).reshape(length, height, width)
    actions = np.frombuffer(cursor.take(length * ACTION_DIM * 4), dtype='<f4').reshape(length, ACTION_DIM)
    prompts = []
    for _ in range(cursor.unpack('<I')[0]):
        tag, = cursor.unpack('<B')
        try:
            kind = PromptKind(tag)
        except ValueError:
            raise FormatError('Unknown prompt kind tag {}'.format(tag)) from None
        coords = cursor.unpack('<{}f'.format(kind.coord_count))
        prompts.append(VisualPrompt(kind, coords))
    if cursor.offset != len(payload):
        raise FormatError('Episode record has {} trailing bytes'.format(len(payload) - cursor.offset))
    return Episode(
        frames=frames.copy(), masks=masks.copy(), actions=actions.astype(np.float32),
        instruction=instruction, prompts=prompts, target_text=target_text,
    )


def write_episode(episode, path):
    atomic_write(path, encode_episode(episode))


def read_episode(path):
    with open(path, 'rb') as episode_file:
        return decode_episode(episode_file.read())


@dataclass
class NormStats:
    """
    Per-dimension low/high bounds (1st and 99th percentile) of raw actions.
    """
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float32).reshape(ACTION_DIM)
        self.high = np.asarray(self.high, dtype=np.float32).reshape(ACTION_DIM)
        if not np.all(self.low < self.high):
            raise DegenerateStatsError('Normalization bounds must satisfy low < high in every dimension')

    def to_list(self):
        return [float(value) for value in self.low] + [float(value) for value in self.high]

    @classmethod
    def from_list(cls, values):
        if len(values) != 2 * ACTION_DIM:
            raise FormatError('Normalization stats need {} values, got {}'.format(2 * ACTION_DIM, len(values)))
        return cls(low=values[:ACTION_DIM], high=values[ACTION_DIM:])


def compute_norm_stats(actions):
    """
    Return the 1st/99th percentiles of each action dimension.

    Falls back to min/max when the percentiles collapse but the dimension still
    holds at least two distinct values; a constant dimension is an error.
    """
    stacked = np.concatenate([np.atleast_2d(np.asarray(chunk, dtype=np.float64)) for chunk in actions], axis=0) \
        if not isinstance(actions, np.ndarray) else np.atleast_2d(actions.astype(np.float64))
    if stacked.size == 0:
        raise DegenerateStatsError('Cannot compute normalization stats from an empty action stream')
    if stacked.shape[1] != ACTION_DIM:
        raise ValidationError('Actions must have {} dimensions, got {}'.format(ACTION_DIM, stacked.shape[1]))
    low, high = np.percentile(stacked, [1.0, 99.0], axis=0)
    minimum, maximum = stacked.min(axis=0), stacked.max(axis=0)
    for dim in range(ACTION_DIM):
        if minimum[dim] == maximum[dim]:
            raise DegenerateStatsError('Action dimension {} is constant ({})'.format(dim, minimum[dim]))
        if np.float32(low[dim]) >= np.float32(high[dim]):
            logger.warning('Percentiles collapse on action dimension %s, using min/max instead', dim)
            low[dim], high[dim] = minimum[dim], maximum[dim]
    return NormStats(low=low, high=high)


def normalize_action(action, stats):
    """
    Map raw actions affinely onto [-1, +1] per dimension and clip.
    """
    action = np.asarray(action, dtype=np.float32)
    scaled = 2.0 * (action - stats.low) / (stats.high - stats.low) - 1.0
    return np.clip(scaled, -1.0, 1.0).astype(np.float32)


def denormalize_action(normalized, stats):
    normalized = np.asarray(normalized, dtype=np.float32)
    return ((normalized + 1.0) * 0.5 * (stats.high - stats.low) + stats.low).astype(np.float32)


def discretize_action(normalized):
    """
    Return 256-bin indices of normalized actions (clipped to [-1, +1] first).
    """
    clipped = np.clip(np.asarray(normalized, dtype=np.float64), -1.0, 1.0)
    return np.minimum(np.floor((clipped + 1.0) / 2.0 * NUM_BINS), NUM_BINS - 1).astype(np.int64)


def undiscretize_action(bins):
    """
    Return the bin centers of 256-bin indices.
    """
    return (-1.0 + (np.asarray(bins, dtype=np.float64) + 0.5) / (NUM_BINS / 2)).astype(np.float32)


def render_template(instruction, has_annotation, has_prompts):
    """
    Render the visuomotor instruction template with literal placeholder markers.

    The ``refer to`` clause is omitted when the sample carries neither a mask
    annotation nor visual prompts.
    """
    if not instruction or not instruction.strip():
        raise ValidationError('Instruction must not be empty')
    text = TEMPLATE_PREFIX.format(instruction)
    if has_annotation or has_prompts:
        text += TEMPLATE_REFER_CLAUSE
    return text


@dataclass
class DatasetManifest:
    name: str
    episode_count: int
    norm_stats: NormStats = None
    pipeline_report_path: str = None

    def to_json(self):
        return {
            'name': self.name,
            'episode_count': self.episode_count,
            'norm_stats': self.norm_stats.to_list() if self.norm_stats is not None else None,
            'pipeline_report_path': self.pipeline_report_path,
        }


def episode_paths(data_dir):
    """
    Return the episode files of a dataset directory in name order.
    """
    directory = Path(data_dir) / EPISODES_DIR
    if not directory.is_dir():
        return []
    return sorted(path for path in directory.iterdir() if path.suffix == EPISODE_SUFFIX)


def write_manifest(data_dir, manifest):
    payload = json.dumps(manifest.to_json(), indent=2, sort_keys=True).encode('utf-8')
    atomic_write(os.path.join(data_dir, MANIFEST_NAME), payload)


def read_manifest(data_dir):
    path = Path(data_dir) / MANIFEST_NAME
    try:
        content = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        return None
    except ValueError as exc:
        raise FormatError('Manifest {} is not valid JSON: {}'.format(path, exc)) from exc
    norm_stats = content.get('norm_stats')
    return DatasetManifest(
        name=content.get('name', ''),
        episode_count=int(content.get('episode_count', 0)),
        norm_stats=NormStats.from_list(norm_stats) if norm_stats is not None else None,
        pipeline_report_path=content.get('pipeline_report_path'),
    )


def action_chunk(actions, start, chunk_size):
    """
    Return ``chunk_size`` actions from ``start``, repeating the last action past the end.
    """
    indices = np.minimum(np.arange(start, start + chunk_size), len(actions) - 1)
    return actions[indices]
