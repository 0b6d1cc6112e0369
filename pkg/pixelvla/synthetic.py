"""
Parametric tabletop scenes with exact ground truth.

A scene holds three colored objects in fixed slots along the table and a
magenta gripper that travels from its home position to the target object,
closes around it and lifts. Colors are exact, so the oracle backends can
answer every perception query from pixel values alone.

Two toy training corpora live here as well: a linear task whose actions are
a linear function of a uniform frame intensity, and a two-object task whose
actions depend only on which object the mask selects.
"""
import logging
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from pixelvla.annotation.prompts import derive_visual_prompts
from pixelvla.episodes import (
    ACTION_DIM,
    EPISODE_SUFFIX,
    EPISODES_DIR,
    DatasetManifest,
    Episode,
    compute_norm_stats,
    write_episode,
    write_manifest,
)

logger = logging.getLogger(__name__)

SCENE_SIZE = 64
BACKGROUND_COLOR = (96, 96, 96)
GRIPPER_COLOR = (255, 0, 255)
GRIPPER_HOME = (32, 10)
SLOT_CENTERS = (10, 32, 54)
OBJECTS_PER_SCENE = 3
LIFT = 4
UNSOLVABLE_FRACTION = 0.2


@dataclass(frozen=True)
class ObjectKind:
    name: str
    color: tuple
    shape: str


PALETTE = (
    ObjectKind('red block', (220, 40, 40), 'rect'),
    ObjectKind('blue ball', (40, 70, 220), 'circle'),
    ObjectKind('green cup', (40, 180, 60), 'rect'),
    ObjectKind('yellow can', (230, 210, 40), 'circle'),
    ObjectKind('purple eggplant', (130, 50, 160), 'circle'),
    ObjectKind('orange carrot', (240, 140, 30), 'rect'),
)
KINDS_BY_NAME = {kind.name: kind for kind in PALETTE}

INSTRUCTION_TEMPLATES = (
    'pick up the {target}',
    'move the {target} near the {other}',
    'put the {target} into the drawer',
    'stack the {target} on the {other}',
)


@dataclass(frozen=True)
class SceneObject:
    kind: ObjectKind
    center: tuple
    half_size: int

    @property
    def box(self):
        """
        Inclusive pixel box ``(x0, y0, x1, y1)``.
        """
        x, y = self.center
        return (x - self.half_size, y - self.half_size, x + self.half_size, y + self.half_size)

    def mask(self, size=SCENE_SIZE):
        image = Image.new('L', (size, size), 0)
        draw = ImageDraw.Draw(image)
        if self.kind.shape == 'circle':
            draw.ellipse(self.box, fill=255)
        else:
            draw.rectangle(self.box, fill=255)
        return np.array(image, dtype=np.uint8)


@dataclass
class SyntheticScene:
    episode: Episode
    objects: list
    target: SceneObject
    named: ObjectKind
    close_frame: int
    solvable: bool = True

    @property
    def target_mask(self):
        return self.target.mask(self.episode.frames.shape[1])


def gripper_mask(center, half_size, closed, size=SCENE_SIZE):
    """
    Palm above and two fingers beside a ``2 * half_size + 1`` wide opening centered on ``center``.
    """
    x, y = int(round(center[0])), int(round(center[1]))
    gap = 1 if closed else 3
    left, right = x - half_size - gap - 2, x + half_size + gap + 2
    image = Image.new('L', (size, size), 0)
    draw = ImageDraw.Draw(image)
    draw.rectangle((left, y - half_size - 4, right, y - half_size - 2), fill=255)
    draw.rectangle((left, y - half_size - 1, left + 1, y + half_size), fill=255)
    draw.rectangle((right - 1, y - half_size - 1, right, y + half_size), fill=255)
    return np.array(image, dtype=np.uint8)


def paint(canvas, mask, color):
    canvas[mask > 0] = color
    return canvas


def render_objects(objects, size=SCENE_SIZE):
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[:] = BACKGROUND_COLOR
    for scene_object in objects:
        paint(canvas, scene_object.mask(size), scene_object.kind.color)
    return canvas


def place_objects(rng, kinds, slots):
    return [
        SceneObject(
            kind=kind,
            center=(SLOT_CENTERS[slot] + int(rng.integers(-1, 2)), int(rng.integers(34, 51))),
            half_size=int(rng.integers(3, 6)),
        )
        for kind, slot in zip(kinds, slots)
    ]


def render_episode_frames(objects, target, close_frame):
    """
    Frames and gripper centers of an approach, close and lift trajectory.
    """
    base = render_objects(objects)
    home = np.array(GRIPPER_HOME, dtype=np.float64)
    goal = np.array(target.center, dtype=np.float64)
    centers = [home + (goal - home) * step / close_frame for step in range(close_frame + 1)]
    centers.append(goal - np.array([0.0, LIFT]))
    frames = []
    for step, center in enumerate(centers):
        frame = base.copy()
        paint(frame, gripper_mask(center, target.half_size, closed=step >= close_frame), GRIPPER_COLOR)
        frames.append(frame)
    return np.stack(frames), np.stack(centers)


def scripted_actions(rng, centers, close_frame, size=SCENE_SIZE):
    """
    Per-step translation toward the next gripper position, small noise on
    height and rotation, and the gripper channel closing at ``close_frame``.
    """
    length = len(centers)
    actions = np.zeros((length, ACTION_DIM), dtype=np.float32)
    deltas = np.diff(centers, axis=0, append=centers[-1:]) / size
    actions[:, 0] = deltas[:, 0]
    actions[:, 1] = deltas[:, 1]
    actions[:, 2:6] = rng.normal(0.0, 0.01, size=(length, 4))
    actions[:, 6] = (np.arange(length) >= close_frame).astype(np.float32)
    return actions


def generate_scene(rng, solvable=True):
    kinds = [PALETTE[index] for index in rng.choice(len(PALETTE), size=OBJECTS_PER_SCENE, replace=False)]
    slots = rng.permutation(len(SLOT_CENTERS))[:OBJECTS_PER_SCENE]
    objects = place_objects(rng, kinds, slots)
    target = objects[0]
    if solvable:
        named = target.kind
    else:
        absent = [kind for kind in PALETTE if kind not in kinds]
        named = absent[int(rng.integers(len(absent)))]
    other = objects[1].kind
    template = INSTRUCTION_TEMPLATES[int(rng.integers(len(INSTRUCTION_TEMPLATES)))]
    close_frame = int(rng.integers(3, 7))
    frames, centers = render_episode_frames(objects, target, close_frame)
    episode = Episode(
        frames=frames,
        masks=np.zeros(frames.shape[:3], dtype=np.uint8),
        actions=scripted_actions(rng, centers, close_frame),
        instruction=template.format(target=named.name, other=other.name),
    )
    return SyntheticScene(
        episode=episode.validate(), objects=objects, target=target, named=named,
        close_frame=close_frame, solvable=solvable,
    )


def episode_filename(index):
    return '{:06d}{}'.format(index, EPISODE_SUFFIX)


def write_dataset(output_dir, name, episodes):
    """
    Write ``episodes`` and a manifest with their normalization statistics.
    """
    directory = os.path.join(output_dir, EPISODES_DIR)
    os.makedirs(directory, exist_ok=True)
    for index, episode in enumerate(episodes):
        write_episode(episode, os.path.join(directory, episode_filename(index)))
    norm_stats = compute_norm_stats([episode.actions for episode in episodes])
    write_manifest(output_dir, DatasetManifest(name=name, episode_count=len(episodes), norm_stats=norm_stats))
    return norm_stats


def generate_corpus(output_dir, count, seed, unsolvable_fraction=UNSOLVABLE_FRACTION):
    """
    Write ``count`` unannotated scenes, exactly ``round(count * unsolvable_fraction)``
    of which name an object that is not in the scene.
    """
    rng = np.random.default_rng(seed)
    unsolvable = set(rng.permutation(count)[:int(round(count * unsolvable_fraction))].tolist())
    scenes = [generate_scene(rng, solvable=index not in unsolvable) for index in range(count)]
    write_dataset(output_dir, 'synthetic', [scene.episode for scene in scenes])
    logger.info('Generated %s synthetic scenes (%s unsolvable) in %s', count, len(unsolvable), output_dir)
    return scenes


def linear_task(count, seed, size=SCENE_SIZE):
    """
    Uniform gray frames of intensity ``c``; every action dimension is a fixed linear function of ``c``.
    """
    rng = np.random.default_rng(seed)
    intensities = np.sort(rng.uniform(0.1, 0.9, size=count))
    episodes = []
    for intensity in intensities:
        level = int(round(intensity * 255))
        c = level / 255.0
        frame = np.full((1, size, size, 3), level, dtype=np.uint8)
        action = np.array([[c, -c, 0.5 * c, 1.0 - c, 2.0 * c - 1.0, -0.5 * c, c]], dtype=np.float32)
        episodes.append(Episode(
            frames=frame, masks=np.zeros((1, size, size), dtype=np.uint8), actions=action,
            instruction='move near',
        ).validate())
    return episodes


TWO_OBJECT_ACTIONS = {
    'red block': (0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 1.0),
    'blue ball': (-0.5, 0.5, -0.5, 0.5, -0.5, 0.5, 0.0),
}


def two_object_task(pairs, seed, size=SCENE_SIZE):
    """
    Pairs of annotated episodes sharing one frame and one instruction; the
    mask selects either the red block or the blue ball and the actions follow it.
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for _ in range(pairs):
        kinds = [KINDS_BY_NAME[name] for name in TWO_OBJECT_ACTIONS]
        slots = rng.permutation(len(SLOT_CENTERS))[:len(kinds)]
        objects = place_objects(rng, kinds, slots)
        frame = render_objects(objects, size)
        for scene_object in objects:
            mask = scene_object.mask(size)
            episodes.append(Episode(
                frames=frame[None],
                masks=mask[None],
                actions=np.array([TWO_OBJECT_ACTIONS[scene_object.kind.name]], dtype=np.float32),
                instruction='pick up the object',
                prompts=derive_visual_prompts(mask, seed, len(episodes)),
                target_text=scene_object.kind.name,
            ).validate())
    return episodes
