"""
Annotation pipeline.

Stage one composes the gripper-close key frames of all episodes into a
discrete video, localizes the gripper on it and expands each gripper box
into a region proposal. Stage two reasons out the target object, segments it
on the initial observation inside the proposal and derives visual prompts
from the mask. The mask is propagated to every timestep of the episode.
"""
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from pixelvla.annotation.backends import pixel_box
from pixelvla.annotation.prompts import derive_visual_prompts
from pixelvla.conf import get_setting
from pixelvla.episodes import (
    EPISODES_DIR,
    GRIPPER_DIM,
    DatasetManifest,
    compute_norm_stats,
    encode_episode,
    episode_paths,
    read_episode,
    write_manifest,
)
from pixelvla.exceptions import (
    DegenerateStatsError,
    FormatError,
    PipelineError,
    ProposalError,
    ValidationError,
)
from pixelvla.utils import atomic_write

logger = logging.getLogger(__name__)

GRIPPER_CLOSED = 0.5
REPORT_NAME = 'annotation_report.json'


class AnnotationStatus(Enum):
    OK = 'ok'
    NO_GRIPPER_CLOSE = 'no_gripper_close'
    NO_GRIPPER_FOUND = 'no_gripper_found'
    NO_DETECTION = 'no_detection'
    LOW_CONFIDENCE = 'low_confidence'


@dataclass(frozen=True)
class RegionProposal:
    box: tuple

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
            raise ProposalError('Region proposal {} is not a box inside the image'.format(self.box))


def find_gripper_close(episode, threshold=GRIPPER_CLOSED):
    """
    Return the first timestep whose gripper channel is at least ``threshold``, or ``None``.
    """
    closed = np.flatnonzero(episode.actions[:, GRIPPER_DIM] >= threshold)
    return int(closed[0]) if closed.size else None


@dataclass
class DiscreteVideo:
    """
    One key frame per episode with a gripper-close state, in episode order.
    """
    frames: list = field(default_factory=list)
    episode_ids: list = field(default_factory=list)
    close_frames: list = field(default_factory=list)
    excluded: list = field(default_factory=list)


def compose_discrete_video(episodes):
    if not episodes:
        raise PipelineError('Cannot compose a discrete video from an empty dataset')
    video = DiscreteVideo()
    for episode_id, episode in enumerate(episodes):
        close_frame = find_gripper_close(episode)
        if close_frame is None:
            video.excluded.append(episode_id)
            continue
        video.frames.append(episode.frames[close_frame])
        video.episode_ids.append(episode_id)
        video.close_frames.append(close_frame)
    if not video.frames:
        raise PipelineError('No episode reaches a gripper-close state')
    return video


def propose_region(gripper_box, expansion):
    """
    Scale ``gripper_box`` about its center by ``expansion`` and clamp it to the image.
    """
    x1, y1, x2, y2 = (float(value) for value in gripper_box)
    if x2 <= x1 or y2 <= y1:
        raise ProposalError('Gripper box {} has no area'.format(gripper_box))
    center_x, center_y = (x1 + x2) / 2.0, (y1 + y2) / 2.0
    half_width, half_height = (x2 - x1) * expansion / 2.0, (y2 - y1) * expansion / 2.0
    return RegionProposal(box=(
        max(center_x - half_width, 0.0), max(center_y - half_height, 0.0),
        min(center_x + half_width, 1.0), min(center_y + half_height, 1.0),
    ))


def mask_inside_fraction(mask, box):
    support = np.asarray(mask) > 0
    total = int(support.sum())
    if total == 0:
        return 0.0
    row0, row1, col0, col1 = pixel_box(box, support.shape)
    return int(support[row0:row1, col0:col1].sum()) / total


@dataclass
class Segmentation:
    status: AnnotationStatus
    mask: np.ndarray = None
    confidence: float = None


def segment_target(frame, target_text, proposal, backends, threshold=None, min_inside=None):
    """
    Detect ``target_text``, keep candidates whose mask lies mostly inside the
    proposal, then return the most confident one at or above ``threshold``.
    """
    if not target_text or not target_text.strip():
        raise ValidationError('Target text must not be empty')
    threshold = get_setting('CONFIDENCE_THRESHOLD') if threshold is None else threshold
    min_inside = get_setting('MIN_INSIDE_FRACTION') if min_inside is None else min_inside
    survivors = []
    for detection in backends.detect(frame, target_text):
        mask, _ = backends.predict_mask(frame, detection.box)
        if mask_inside_fraction(mask, proposal.box) >= min_inside:
            survivors.append((detection.confidence, mask))
    if not survivors:
        return Segmentation(status=AnnotationStatus.NO_DETECTION)
    confident = [survivor for survivor in survivors if survivor[0] >= threshold]
    if not confident:
        return Segmentation(status=AnnotationStatus.LOW_CONFIDENCE, confidence=max(item[0] for item in survivors))
    confidence, mask = max(confident, key=lambda survivor: survivor[0])
    return Segmentation(status=AnnotationStatus.OK, mask=np.where(mask > 0, 255, 0).astype(np.uint8),
                        confidence=float(confidence))


@dataclass
class EpisodeOutcome:
    episode_id: int
    name: str
    status: AnnotationStatus
    length: int
    close_frame: int = None
    proposal: tuple = None
    confidence: float = None
    target_text: str = ''

    def to_json(self):
        return {
            'episode_id': self.episode_id,
            'name': self.name,
            'status': self.status.value,
            'length': self.length,
            'close_frame': self.close_frame,
            'proposal': [float(value) for value in self.proposal] if self.proposal else None,
            'confidence': self.confidence,
            'target_text': self.target_text,
        }


@dataclass
class AnnotationReport:
    entries: list
    seed: int = 0

    @property
    def total(self):
        return len(self.entries)

    @property
    def ok(self):
        return sum(1 for entry in self.entries if entry.status is AnnotationStatus.OK)

    @property
    def failed(self):
        return self.total - self.ok

    @property
    def filter_rate(self):
        return self.failed / self.total if self.total else 0.0

    @property
    def triplets(self):
        """
        Image-text-action triplets kept: the summed length of annotated episodes.
        """
        return sum(entry.length for entry in self.entries if entry.status is AnnotationStatus.OK)

    @property
    def per_status(self):
        counts = {status.value: 0 for status in AnnotationStatus}
        for entry in self.entries:
            counts[entry.status.value] += 1
        return counts

    def to_json(self):
        return {
            'total': self.total,
            'ok': self.ok,
            'failed': self.failed,
            'filter_rate': self.filter_rate,
            'triplets': self.triplets,
            'seed': self.seed,
            'per_status': self.per_status,
            'per_episode': [entry.to_json() for entry in self.entries],
        }


def annotate_episode(episode, episode_id, name, close_frame, gripper, backends, seed, expansion=None, n_points=None):
    """
    Run stage two for one episode; return its outcome and the annotated episode (``None`` on failure).
    """
    expansion = get_setting('REGION_EXPANSION') if expansion is None else expansion
    n_points = get_setting('PROMPT_POINTS') if n_points is None else n_points
    outcome = EpisodeOutcome(episode_id=episode_id, name=name, status=AnnotationStatus.NO_GRIPPER_CLOSE,
                             length=episode.length, close_frame=close_frame)
    if close_frame is None:
        return outcome, None
    if gripper is None or gripper.box is None:
        outcome.status = AnnotationStatus.NO_GRIPPER_FOUND
        return outcome, None
    try:
        proposal = propose_region(gripper.box, expansion)
    except ProposalError:
        outcome.status = AnnotationStatus.NO_GRIPPER_FOUND
        return outcome, None
    outcome.proposal = proposal.box
    target_text = backends.reason_target(episode.instruction).strip()
    outcome.target_text = target_text
    if not target_text:
        outcome.status = AnnotationStatus.NO_DETECTION
        return outcome, None
    segmentation = segment_target(episode.frames[0], target_text, proposal, backends)
    outcome.status = segmentation.status
    outcome.confidence = segmentation.confidence
    if segmentation.status is not AnnotationStatus.OK:
        return outcome, None
    masks = np.repeat(segmentation.mask[None], episode.length, axis=0)
    prompts = derive_visual_prompts(segmentation.mask, seed, episode_id, n_points=n_points)
    return outcome, episode.replace(masks=masks, prompts=prompts, target_text=target_text).validate()


def annotate_dataset(input_dir, output_dir, backends, seed, jobs=1, report_path=None):
    """
    Annotate every episode of ``input_dir`` into ``output_dir`` and write the report.

    Successful episodes keep their file names; failed ones are left out. An
    I/O failure removes everything written so far.
    Episode files an earlier run left in ``output_dir`` are removed.
    """
    paths = episode_paths(input_dir)
    if not paths:
        raise PipelineError('No episodes found in {}'.format(input_dir))
    if os.path.realpath(input_dir) == os.path.realpath(output_dir):
        raise PipelineError('Annotated episodes cannot overwrite their input corpus {}'.format(input_dir))
    try:
        episodes = [read_episode(path) for path in paths]
    except (OSError, FormatError) as exc:
        raise PipelineError('Cannot read the input corpus: {}'.format(exc)) from exc

    video = compose_discrete_video(episodes)
    detections = backends.segment_gripper(video.frames)
    if len(detections) != len(video.frames):
        raise PipelineError('Gripper segmenter returned {} boxes for {} key frames'.format(
            len(detections), len(video.frames)))
    close_frames = dict(zip(video.episode_ids, video.close_frames))
    grippers = dict(zip(video.episode_ids, detections))
    logger.info('Composed %s key frames, %s episodes without a gripper-close state',
                len(video.frames), len(video.excluded))

    if jobs > 1 and not backends.concurrent_safe:
        logger.info('Backend suite %s takes one client at a time, annotating serially', backends.NAME)
        jobs = 1

    def work(episode_id):
        return annotate_episode(
            episodes[episode_id], episode_id, paths[episode_id].name, close_frames.get(episode_id),
            grippers.get(episode_id), backends, seed,
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(work, range(len(episodes))))
    else:
        results = [work(episode_id) for episode_id in range(len(episodes))]

    report = AnnotationReport(entries=[outcome for outcome, _ in results], seed=seed)
    annotated = [(outcome.name, episode) for outcome, episode in results if episode is not None]
    for outcome in report.entries:
        if outcome.status is not AnnotationStatus.OK:
            logger.warning('Episode %s filtered out: %s', outcome.name, outcome.status.value)

    report_path = os.fspath(report_path) if report_path else os.path.join(output_dir, REPORT_NAME)
    _write_outputs(output_dir, annotated, report, report_path)
    logger.info('Annotated %s of %s episodes (filter rate %.3f, %s triplets)',
                report.ok, report.total, report.filter_rate, report.triplets)
    return report


def _write_outputs(output_dir, annotated, report, report_path):
    written = []
    try:
        directory = os.path.join(output_dir, EPISODES_DIR)
        os.makedirs(directory, exist_ok=True)
        names = {name for name, _ in annotated}
        for stale in episode_paths(output_dir):
            if stale.name not in names:
                stale.unlink()
        for name, episode in annotated:
            path = os.path.join(directory, name)
            atomic_write(path, encode_episode(episode))
            written.append(path)
        try:
            norm_stats = compute_norm_stats([episode.actions for _, episode in annotated]) if annotated else None
        except DegenerateStatsError as exc:
            logger.warning('No normalization statistics for the annotated corpus: %s', exc)
            norm_stats = None
        atomic_write(report_path, json.dumps(report.to_json(), indent=2, sort_keys=True).encode('utf-8'))
        written.append(report_path)
        write_manifest(output_dir, DatasetManifest(
            name='annotated', episode_count=len(annotated), norm_stats=norm_stats,
            pipeline_report_path=report_path,
        ))
    except OSError as exc:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        logger.error('Annotation aborted, removed %s partial outputs: %s', len(written), exc)
        raise PipelineError('Cannot write annotation outputs: {}'.format(exc)) from exc
