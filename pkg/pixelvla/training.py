"""
Two-stage visuomotor instruction tuning, evaluation and single-step inference.

Stage 1 trains the action decoder alone on plain instructions; every other
parameter is frozen, so the register states are computed once per sample.
Stage 2 attaches low-rank adapters to the backbone and trains them together
with the pixel encoder, the prompt encoder and the decoder.
"""
import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from pixelvla.annotation.backends import pixel_box
from pixelvla.conf import get_setting
from pixelvla.decoder import l1_loss
from pixelvla.episodes import (
    ACTION_DIM,
    action_chunk,
    compute_norm_stats,
    denormalize_action,
    episode_paths,
    normalize_action,
    read_episode,
    read_manifest,
)
from pixelvla.exceptions import ConfigurationError, EmptyMaskError, PromptError, TrainingError
from pixelvla.model import ModelConfig, PixelVLA, load_model, save_model
from pixelvla.nn import Adam, numerical_rank
from pixelvla.utils import atomic_write, tensor_digest

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'model.pxck'
METRICS_NAME = 'metrics.csv'
SUMMARY_NAME = 'train_metrics.json'
BOOLEAN_VALUES = {'1': True, 'true': True, 'yes': True, 'on': True, '0': False, 'false': False, 'no': False, 'off': False}


@dataclass
class StageConfig:
    stage: int = 1
    steps: int = None
    batch: int = None
    lr: float = None
    seed: int = 0
    rank: int = None
    alpha: float = None
    data: str = ''
    out: str = ''
    chunk: int = None
    skip_stage1: bool = False
    init: str = None
    mask_blind: bool = False
    log_every: int = None

    def __post_init__(self):
        self.stage = int(self.stage)
        if self.stage not in (1, 2):
            raise ConfigurationError('Training stage must be 1 or 2, got {}'.format(self.stage))
        defaults = {
            'steps': get_setting('STAGE{}_STEPS'.format(self.stage)),
            'batch': get_setting('BATCH_SIZE'),
            'lr': get_setting('STAGE{}_LR'.format(self.stage)),
            'rank': get_setting('LORA_RANK'),
            'alpha': get_setting('LORA_ALPHA'),
            'chunk': get_setting('CHUNK_SIZE'),
            'log_every': get_setting('LOG_EVERY'),
        }
        for name, default in defaults.items():
            if getattr(self, name) is None:
                setattr(self, name, default)
        if self.steps < 1 or self.batch < 1 or self.lr <= 0:
            raise ConfigurationError('Steps, batch size and learning rate must be positive')
        if self.stage == 1 and self.skip_stage1:
            raise ConfigurationError('skip_stage1 only applies to stage 2 runs')
        if self.skip_stage1 and self.init:
            raise ConfigurationError('skip_stage1 trains from a fresh model and cannot start from {}'.format(self.init))

    @classmethod
    def load(cls, path=None, **overrides):
        """
        Build a config from settings defaults, then the ``key=value`` file, then ``overrides``.
        """
        values = parse_config_file(path) if path else {}
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def to_json(self):
        return asdict(self)


def _convert(name, raw, kind):
    try:
        if kind is bool:
            return BOOLEAN_VALUES[raw.strip().lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except (KeyError, ValueError):
        raise ConfigurationError('Invalid value {!r} for {}'.format(raw, name)) from None
    return raw.strip() or None


def parse_config_file(path):
    """
    Parse a flat ``key=value`` file; blank lines and ``#`` comments are skipped.
    """
    kinds = {item.name: item.type for item in fields(StageConfig)}
    values = {}
    try:
        with open(path, encoding='utf-8') as config_file:
            lines = config_file.read().splitlines()
    except OSError as exc:
        raise ConfigurationError('Cannot read training config {}: {}'.format(path, exc)) from exc
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, separator, raw = line.partition('=')
        key = key.strip()
        if not separator or key not in kinds:
            raise ConfigurationError('{}:{}: expected a known key=value pair, got {!r}'.format(path, number, line))
        values[key] = _convert(key, raw.strip(), kinds[key])
    return values


@dataclass
class Sample:
    episode: int
    timestep: int
    frame: np.ndarray
    instruction: str
    target: np.ndarray
    mask: np.ndarray = None
    prompts: list = field(default_factory=list)


def load_dataset(data_dir, chunk_size, norm_stats=None, require_annotation=False):
    """
    Return ``(samples, norm_stats)``: one sample per timestep with its normalized target chunk.
    """
    paths = episode_paths(data_dir)
    if not paths:
        raise ConfigurationError('Dataset {} holds no episodes'.format(data_dir))
    try:
        episodes = [read_episode(path) for path in paths]
    except OSError as exc:
        raise ConfigurationError('Cannot read dataset {}: {}'.format(data_dir, exc)) from exc
    if require_annotation:
        missing = [path.name for path, episode in zip(paths, episodes) if not episode.is_annotated]
        if missing:
            raise ConfigurationError('Stage 2 needs an annotated dataset; {} episodes lack masks or target text '
                                     '(first: {})'.format(len(missing), missing[0]))
    if norm_stats is None:
        manifest = read_manifest(data_dir)
        norm_stats = manifest.norm_stats if manifest and manifest.norm_stats else \
            compute_norm_stats([episode.actions for episode in episodes])
    samples = []
    for index, episode in enumerate(episodes):
        normalized = normalize_action(episode.actions, norm_stats)
        for timestep in range(episode.length):
            samples.append(Sample(
                episode=index, timestep=timestep, frame=episode.frames[timestep], instruction=episode.instruction,
                target=action_chunk(normalized, timestep, chunk_size),
                mask=episode.masks[timestep] if episode.is_annotated else None,
                prompts=list(episode.prompts),
            ))
    return samples, norm_stats


def batch_indices(count, batch, seed):
    """
    Endless deterministic batches drawn from a fresh seeded permutation every epoch.
    """
    rng = np.random.default_rng(seed)
    order = np.empty(0, dtype=np.int64)
    while True:
        while len(order) < batch:
            order = np.concatenate([order, rng.permutation(count)])
        yield order[:batch]
        order = order[batch:]


def parameter_digests(model):
    frozen = [(name, parameter.value) for name, parameter in model.named_parameters() if not parameter.trainable]
    trainable = [(name, parameter.value) for name, parameter in model.named_parameters() if parameter.trainable]
    return tensor_digest(frozen), tensor_digest(trainable)


def frozen_names(model):
    return [name for name, parameter in model.named_parameters() if not parameter.trainable]


@dataclass
class TrainMetrics:
    stage: int
    losses: list = field(default_factory=list)
    wall_time: float = 0.0
    final_eval_l1: float = None
    frozen_digest_before: str = ''
    frozen_digest_after: str = ''
    trainable_digest_before: str = ''
    trainable_digest_after: str = ''
    adapter_ranks: list = field(default_factory=list)
    checkpoint: str = ''

    @property
    def initial_loss(self):
        return self.losses[0] if self.losses else None

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else None

    def to_json(self):
        content = asdict(self)
        content.pop('losses')
        content.update(steps=len(self.losses), initial_loss=self.initial_loss, final_loss=self.final_loss)
        return content


def write_metrics_csv(path, losses):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['step', 'loss'])
    for step, loss in enumerate(losses, start=1):
        writer.writerow([step, repr(loss)])
    atomic_write(path, buffer.getvalue().encode('utf-8'))


def audit_adapter_ranks(model):
    """
    Return ``(name, rank)`` of every materialized adapter delta; a rank above ``r`` is a contract breach.
    """
    ranks = []
    for linear_index, linear in enumerate(model.backbone.linears()):
        if linear.adapter is None:
            continue
        rank = numerical_rank(linear.adapter.materialize())
        if rank > linear.adapter.rank:
            raise TrainingError('Adapter {} has rank {} above its configured {}'.format(
                linear_index, rank, linear.adapter.rank))
        ranks.append(rank)
    return ranks


def _build_model(cfg):
    if cfg.init:
        model, _ = load_model(cfg.init)
        if model.config.chunk_size != cfg.chunk:
            raise ConfigurationError('Chunk size {} does not match the {}-action chunks of {}'.format(
                cfg.chunk, model.config.chunk_size, cfg.init))
        return model
    if cfg.stage == 2 and not cfg.skip_stage1:
        raise ConfigurationError('Stage 2 starts from a stage-1 checkpoint (init) unless skip_stage1 is set')
    return PixelVLA(ModelConfig.from_settings(chunk_size=cfg.chunk, seed=cfg.seed))


def _finish(cfg, model, metrics, norm_stats, started, frozen):
    digest_after = parameter_digests(model)
    metrics.frozen_digest_after, metrics.trainable_digest_after = digest_after
    if metrics.frozen_digest_after != metrics.frozen_digest_before:
        logger.error('Freeze audit failed for stage %s: frozen parameters changed', cfg.stage)
        raise TrainingError('Frozen parameters changed during stage {} training'.format(cfg.stage))
    if frozen != frozen_names(model):
        raise TrainingError('The frozen parameter set changed during stage {} training'.format(cfg.stage))
    if cfg.stage == 2:
        metrics.adapter_ranks = audit_adapter_ranks(model)
    metrics.wall_time = time.monotonic() - started
    os.makedirs(cfg.out, exist_ok=True)
    checkpoint = os.path.join(cfg.out, CHECKPOINT_NAME)
    save_model(checkpoint, model, cfg.stage, norm_stats, mask_blind=cfg.mask_blind)
    metrics.checkpoint = checkpoint
    metrics.final_eval_l1 = evaluate(checkpoint, cfg.data).mean
    write_metrics_csv(os.path.join(cfg.out, METRICS_NAME), metrics.losses)
    atomic_write(os.path.join(cfg.out, SUMMARY_NAME),
                 json.dumps(metrics.to_json(), indent=2, sort_keys=True).encode('utf-8'))
    logger.info('Stage %s finished in %.1fs: loss %.4f -> %.4f, evaluation L1 %.4f',
                cfg.stage, metrics.wall_time, metrics.initial_loss, metrics.final_loss, metrics.final_eval_l1)
    return checkpoint, metrics


def train_stage1(cfg):
    """
    Train the action decoder on cached register states of plain-instruction inputs.
    """
    if cfg.stage != 1:
        raise ConfigurationError('train_stage1 needs a stage 1 config')
    started = time.monotonic()
    samples, norm_stats = load_dataset(cfg.data, cfg.chunk)
    model = _build_model(cfg).configure_stage(1)
    metrics = TrainMetrics(stage=1)
    metrics.frozen_digest_before, metrics.trainable_digest_before = parameter_digests(model)
    frozen = frozen_names(model)
    logger.info('Stage 1: %s samples, %s steps, batch %s, lr %s', len(samples), cfg.steps, cfg.batch, cfg.lr)

    states = np.stack([model.register_hidden(model.prepare(sample.frame, sample.instruction)) for sample in samples])
    targets = np.stack([sample.target for sample in samples])
    optimizer = Adam(model.trainable_parameters(), lr=cfg.lr)
    batches = batch_indices(len(samples), cfg.batch, cfg.seed)
    for step in range(1, cfg.steps + 1):
        indices = next(batches)
        optimizer.zero_grad()
        predictions, cache = model.decoder.forward(states[indices])
        loss, dpredictions = l1_loss(predictions, targets[indices])
        model.decoder.backward(dpredictions.astype(predictions.dtype), cache)
        optimizer.step()
        metrics.losses.append(loss)
        logger.debug('stage 1 step %s loss %.6f', step, loss)
        if step % cfg.log_every == 0:
            logger.info('Stage 1 step %s/%s loss %.4f', step, cfg.steps, loss)
    return _finish(cfg, model, metrics, norm_stats, started, frozen)


def train_stage2(cfg):
    """
    Train adapters, pixel and prompt encoders and the decoder end to end.

    With ``mask_blind`` the samples carry neither pixel nor prompt segments.
    """
    if cfg.stage != 2:
        raise ConfigurationError('train_stage2 needs a stage 2 config')
    started = time.monotonic()
    samples, norm_stats = load_dataset(cfg.data, cfg.chunk, require_annotation=True)
    model = _build_model(cfg)
    if model.lora is None:
        model.attach_adapters(cfg.rank, cfg.alpha)
    model.configure_stage(2)
    metrics = TrainMetrics(stage=2)
    metrics.frozen_digest_before, metrics.trainable_digest_before = parameter_digests(model)
    frozen = frozen_names(model)
    logger.info('Stage 2%s: %s samples, %s steps, batch %s, lr %s, LoRA rank %s alpha %s',
                ' (mask-blind)' if cfg.mask_blind else '', len(samples), cfg.steps, cfg.batch, cfg.lr,
                model.lora[0], model.lora[1])

    inputs = [
        model.prepare(sample.frame, sample.instruction)
        if cfg.mask_blind else model.prepare(sample.frame, sample.instruction, sample.mask, sample.prompts)
        for sample in samples
    ]
    optimizer = Adam(model.trainable_parameters(), lr=cfg.lr)
    batches = batch_indices(len(samples), cfg.batch, cfg.seed)
    for step in range(1, cfg.steps + 1):
        indices = next(batches)
        optimizer.zero_grad()
        total = 0.0
        for index in indices:
            actions, cache = model.forward(inputs[index])
            loss, dactions = l1_loss(actions, samples[index].target)
            model.backward((dactions / len(indices)).astype(actions.dtype), cache)
            total += loss
        optimizer.step()
        loss = total / len(indices)
        metrics.losses.append(loss)
        logger.debug('stage 2 step %s loss %.6f', step, loss)
        if step % cfg.log_every == 0:
            logger.info('Stage 2 step %s/%s loss %.4f', step, cfg.steps, loss)
    return _finish(cfg, model, metrics, norm_stats, started, frozen)


def train(cfg):
    return train_stage1(cfg) if cfg.stage == 1 else train_stage2(cfg)


@dataclass
class EvaluationResult:
    count: int
    mean_per_dim: list
    p50_per_dim: list
    p90_per_dim: list
    mean: float

    def to_json(self):
        return asdict(self)


def _model_input(model, metadata, frame, instruction, mask, prompts):
    if metadata.stage == 1 or metadata.mask_blind:
        return model.prepare(frame, instruction)
    return model.prepare(frame, instruction, mask, prompts)


def evaluate(checkpoint, data_dir):
    """
    Per-dimension mean, median and 90th percentile of the normalized L1 error.

    The pass is deterministic and independent of episode order; parameters are not touched.
    """
    model, metadata = load_model(checkpoint)
    samples, _ = load_dataset(data_dir, model.config.chunk_size, norm_stats=metadata.norm_stats)
    errors = np.stack([
        np.abs(model.act(_model_input(model, metadata, sample.frame, sample.instruction, sample.mask, sample.prompts))
               - sample.target).astype(np.float64)
        for sample in samples
    ]).reshape(-1, ACTION_DIM)
    per_dim = [math.fsum(errors[:, dim]) / len(errors) for dim in range(ACTION_DIM)]
    result = EvaluationResult(
        count=len(samples),
        mean_per_dim=per_dim,
        p50_per_dim=[float(value) for value in np.percentile(errors, 50, axis=0)],
        p90_per_dim=[float(value) for value in np.percentile(errors, 90, axis=0)],
        mean=math.fsum(errors.reshape(-1)) / errors.size,
    )
    logger.info('Evaluated %s on %s samples: mean L1 %.4f', checkpoint, result.count, result.mean)
    return result


def prompt_region(prompts, shape):
    """
    Normalized box covering every coordinate of ``prompts``, at least one pixel wide.
    """
    coords = [value for prompt in prompts for value in prompt.coords]
    if not coords:
        raise PromptError('Mask reference prompts need a mask')
    xs, ys = coords[0::2], coords[1::2]
    height, width = shape[:2]
    row0, row1, col0, col1 = pixel_box((min(xs), min(ys), max(xs), max(ys)), shape)
    row0, col0 = min(row0, height - 1), min(col0, width - 1)
    row1, col1 = max(row1, row0 + 1), max(col1, col0 + 1)
    return (col0 / width, row0 / height, col1 / width, row1 / height)


def infer_action(checkpoint, frame, instruction, mask=None, prompts=(), backends=None):
    """
    Predict the denormalized ``N_c x 7`` action chunk for one observation.

    When prompts come without a mask, the backends' mask predictor fills it
    from the box covering the prompts.
    """
    model, metadata = checkpoint if isinstance(checkpoint, tuple) else load_model(checkpoint)
    prompts = list(prompts)
    if mask is None and prompts and metadata.stage == 2 and not metadata.mask_blind:
        if backends is None:
            raise ConfigurationError('Prompts without a mask need a mask-predictor backend')
        mask, confidence = backends.predict_mask(frame, prompt_region(prompts, np.shape(frame)))
        if not np.any(mask):
            raise EmptyMaskError('The mask predictor found nothing under the visual prompts')
        logger.info('Predicted a mask from %s prompts (confidence %.2f)', len(prompts), confidence)
    actions = model.act(_model_input(model, metadata, frame, instruction, mask, prompts))
    return denormalize_action(np.clip(actions, -1.0, 1.0), metadata.norm_stats)
