"""
The composed policy: vision stub, pixel and prompt encoders, backbone and action decoder.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from pixelvla.backbone import Backbone, assemble_sequence, tokenize_instruction
from pixelvla.conf import get_setting
from pixelvla.decoder import ActionDecoder, register_states
from pixelvla.episodes import NormStats, render_template
from pixelvla.exceptions import CheckpointError, ConfigurationError
from pixelvla.nn import Module, load_into, read_checkpoint, save_checkpoint, spawn_generators
from pixelvla.pixel_encoder import PixelEncoder
from pixelvla.prompt_encoder import PromptEncoder
from pixelvla.utils import atomic_write
from pixelvla.vision import VisionStub

logger = logging.getLogger(__name__)

SIDECAR_SUFFIX = '.json'
SIDECAR_VERSION = 1


@dataclass
class ModelConfig:
    image_size: int = 64
    patch_size: int = 4
    level_dims: tuple = (32, 32, 32)
    embed_dim: int = 64
    pixel_tokens: int = 4
    prompt_pe_dim: int = 128
    prompt_pe_scale: float = 1.0
    line_samples: int = 4
    num_layers: int = 2
    num_heads: int = 4
    vocab_size: int = 1024
    chunk_size: int = 8
    decoder_hidden: int = 128
    decoder_blocks: int = 2
    seed: int = 0

    def __post_init__(self):
        self.level_dims = tuple(self.level_dims)

    @classmethod
    def from_settings(cls, **overrides):
        values = {item.name: get_setting(item.name.upper()) for item in fields(cls) if item.name != 'seed'}
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_json(cls, content):
        known = {item.name for item in fields(cls)}
        return cls(**{key: value for key, value in content.items() if key in known})

    def to_json(self):
        content = asdict(self)
        content['level_dims'] = list(self.level_dims)
        return content


@dataclass
class PolicyInput:
    """
    Everything the forward pass needs for one observation, with the frozen encodings precomputed.
    """
    pyramid: object
    visual: np.ndarray
    tokens: object
    language: np.ndarray
    mask: np.ndarray = None
    prompts: list = field(default_factory=list)


class PixelVLA(Module):

    def __init__(self, config):
        self.config = config
        vision_rng, pixel_rng, prompt_rng, backbone_rng, decoder_rng, self._adapter_rng = spawn_generators(
            config.seed, 6)
        self.vision = VisionStub(config.patch_size, config.level_dims, config.embed_dim, vision_rng)
        self.pixel_encoder = PixelEncoder(config.level_dims, config.embed_dim, config.pixel_tokens, pixel_rng)
        self.prompt_encoder = PromptEncoder(
            config.prompt_pe_dim, config.embed_dim, config.line_samples, prompt_rng, pe_scale=config.prompt_pe_scale
        )
        self.backbone = Backbone(
            config.vocab_size, config.embed_dim, config.num_layers, config.num_heads, config.chunk_size, backbone_rng
        )
        self.decoder = ActionDecoder(config.embed_dim, config.decoder_hidden, config.decoder_blocks, decoder_rng)
        self.lora = None

    def attach_adapters(self, rank, alpha):
        if self.lora is not None:
            raise ConfigurationError('Adapters are already attached (rank {}, alpha {})'.format(*self.lora))
        self.backbone.attach_adapters(rank, alpha, self._adapter_rng)
        self.lora = (rank, float(alpha))
        return self.backbone.adapters()

    def configure_stage(self, stage):
        """
        Freeze everything, then unfreeze the trainable set of ``stage``.

        Stage 1 trains the decoder only. Stage 2 trains the adapters, both
        encoders and the decoder.
        """
        self.freeze()
        if stage == 1:
            self.decoder.unfreeze()
        elif stage == 2:
            if self.lora is None:
                raise ConfigurationError('Stage 2 needs adapters attached to the backbone')
            for adapter in self.backbone.adapters():
                adapter.unfreeze()
            self.pixel_encoder.unfreeze()
            self.prompt_encoder.unfreeze()
            self.decoder.unfreeze()
        else:
            raise ConfigurationError('Unknown training stage {}'.format(stage))
        return self

    def prepare(self, frame, instruction, mask=None, prompts=()):
        prompts = list(prompts)
        pyramid, visual = self.vision.encode(frame)
        rendered = render_template(instruction, has_annotation=mask is not None, has_prompts=bool(prompts))
        tokens = tokenize_instruction(rendered, self.config.vocab_size)
        return PolicyInput(
            pyramid=pyramid, visual=visual, tokens=tokens, language=self.backbone.embed_language(tokens),
            mask=mask, prompts=prompts,
        )

    def _sequence(self, policy_input):
        if policy_input.mask is not None:
            pixel, pixel_cache = self.pixel_encoder.forward(policy_input.pyramid, policy_input.mask)
        else:
            pixel, pixel_cache = np.zeros((0, self.config.embed_dim), dtype=policy_input.visual.dtype), None
        prompt, prompt_cache = self.prompt_encoder.forward(policy_input.prompts, policy_input.mask)
        sequence = assemble_sequence(
            policy_input.visual, policy_input.language, pixel, prompt, self.backbone.registers.value,
            tokens=policy_input.tokens,
        )
        return sequence, pixel_cache, prompt_cache

    def forward(self, policy_input):
        sequence, pixel_cache, prompt_cache = self._sequence(policy_input)
        hidden, backbone_cache = self.backbone.forward(sequence.tokens)
        actions, decoder_cache = self.decoder.forward(register_states(hidden, sequence.layout))
        return actions, (sequence.layout, hidden.shape, pixel_cache, prompt_cache, backbone_cache, decoder_cache)

    def backward(self, dactions, cache):
        layout, hidden_shape, pixel_cache, prompt_cache, backbone_cache, decoder_cache = cache
        dhidden = np.zeros(hidden_shape, dtype=dactions.dtype)
        dhidden[layout.slice('registers')] = self.decoder.backward(dactions, decoder_cache)
        dtokens = self.backbone.backward(dhidden, backbone_cache)
        if pixel_cache is not None:
            self.pixel_encoder.backward(dtokens[layout.slice('pixel')], pixel_cache)
        self.prompt_encoder.backward(dtokens[layout.slice('prompt')], prompt_cache)

    def act(self, policy_input):
        actions, _ = self.forward(policy_input)
        return actions

    def register_hidden(self, policy_input):
        """
        Final hidden states of the action registers, the decoder's only input.
        """
        sequence, _, _ = self._sequence(policy_input)
        hidden, _ = self.backbone.forward(sequence.tokens)
        return register_states(hidden, sequence.layout)


@dataclass
class ModelMetadata:
    config: ModelConfig
    stage: int
    norm_stats: NormStats
    lora: tuple = None
    mask_blind: bool = False

    def to_json(self):
        return {
            'version': SIDECAR_VERSION,
            'config': self.config.to_json(),
            'stage': self.stage,
            'lora': {'rank': self.lora[0], 'alpha': self.lora[1]} if self.lora else None,
            'norm_stats': self.norm_stats.to_list(),
            'mask_blind': self.mask_blind,
        }


def sidecar_path(path):
    return os.fspath(path) + SIDECAR_SUFFIX


def save_model(path, model, stage, norm_stats, mask_blind=False):
    """
    Write the parameters to ``path`` and the metadata sidecar next to it.
    """
    metadata = ModelMetadata(
        config=model.config, stage=stage, norm_stats=norm_stats, lora=model.lora, mask_blind=mask_blind,
    )
    save_checkpoint(path, model)
    atomic_write(sidecar_path(path), json.dumps(metadata.to_json(), indent=2, sort_keys=True).encode('utf-8'))
    logger.info('Saved stage %s checkpoint to %s', stage, path)
    return metadata


def read_metadata(path):
    try:
        with open(sidecar_path(path), encoding='utf-8') as sidecar:
            content = json.load(sidecar)
    except FileNotFoundError:
        raise CheckpointError('Checkpoint metadata {} is missing'.format(sidecar_path(path))) from None
    except ValueError as exc:
        raise CheckpointError('Checkpoint metadata {} is not valid JSON: {}'.format(sidecar_path(path), exc)) from exc
    if content.get('version') != SIDECAR_VERSION:
        raise CheckpointError('Unsupported checkpoint metadata version {}'.format(content.get('version')))
    lora = content.get('lora')
    try:
        return ModelMetadata(
            config=ModelConfig.from_json(content['config']),
            stage=int(content['stage']),
            norm_stats=NormStats.from_list(content['norm_stats']),
            lora=(int(lora['rank']), float(lora['alpha'])) if lora else None,
            mask_blind=bool(content.get('mask_blind', False)),
        )
    except (KeyError, TypeError) as exc:
        raise CheckpointError('Checkpoint metadata {} is incomplete: {}'.format(sidecar_path(path), exc)) from exc


def load_model(path):
    """
    Rebuild the model described by the sidecar of ``path`` and load its parameters.
    """
    metadata = read_metadata(path)
    model = PixelVLA(metadata.config)
    if metadata.lora:
        model.attach_adapters(*metadata.lora)
    try:
        tensors = read_checkpoint(path)
    except FileNotFoundError:
        raise CheckpointError('Checkpoint {} does not exist'.format(path)) from None
    load_into(model, tensors)
    model.freeze()
    return model, metadata
