"""
Sequence assembly and the small transformer backbone.
"""
import re
from dataclasses import dataclass

import numpy as np

from pixelvla.episodes import ANNOTATIONS_MARKER, PROMPTS_MARKER
from pixelvla.exceptions import ContractError, DimensionError, ValidationError
from pixelvla.nn import Embedding, LayerNorm, Module, Parameter, TransformerBlock, attach_adapter, glorot_uniform

FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193
SEGMENTS = ('visual', 'language', 'pixel', 'prompt', 'registers')

_MARKER_PATTERN = re.compile('({}|{})'.format(re.escape(ANNOTATIONS_MARKER), re.escape(PROMPTS_MARKER)))
_WORD_PATTERN = re.compile(r'[a-z0-9]+')


def fnv1a(text):
    value = FNV_OFFSET
    for byte in text.encode('utf-8'):
        value = ((value ^ byte) * FNV_PRIME) & 0xFFFFFFFF
    return value


@dataclass(frozen=True)
class InstructionTokens:
    """
    Hashed token ids plus the positions where pixel and prompt segments splice in.
    """
    ids: tuple
    annotation_splice: int = None
    prompt_splice: int = None

    def __len__(self):
        return len(self.ids)


def tokenize_instruction(text, vocab_size):
    """
    Lowercase, split on non-alphanumerics and hash every word into ``[0, vocab_size)``.

    Placeholder markers produce no token; their positions are recorded instead.
    """
    if not text or not text.strip():
        raise ValidationError('Instruction must not be empty')
    ids = []
    splices = {}
    for piece in _MARKER_PATTERN.split(text):
        if piece in (ANNOTATIONS_MARKER, PROMPTS_MARKER):
            splices[piece] = len(ids)
            continue
        ids.extend(fnv1a(word) % vocab_size for word in _WORD_PATTERN.findall(piece.lower()))
    return InstructionTokens(
        ids=tuple(ids),
        annotation_splice=splices.get(ANNOTATIONS_MARKER),
        prompt_splice=splices.get(PROMPTS_MARKER),
    )


@dataclass(frozen=True)
class SequenceLayout:
    visual: range
    language: range
    pixel: range
    prompt: range
    registers: range

    @property
    def length(self):
        return self.registers.stop

    def ranges(self):
        return [getattr(self, name) for name in SEGMENTS]

    def slice(self, name):
        segment = getattr(self, name)
        return slice(segment.start, segment.stop)


@dataclass
class EmbeddingSequence:
    tokens: np.ndarray
    layout: SequenceLayout


def assemble_sequence(visual, language, pixel, prompt, registers, tokens=None):
    """
    Concatenate ``[E_v | E_l | E_p | E_s | registers]`` and return the sequence with its layout.

    Pixel and prompt segments replace the placeholder markers, which always
    close the rendered instruction; ``tokens`` is checked against that when given.
    """
    segments = [visual, language, pixel, prompt, registers]
    dims = {segment.shape[-1] for segment in segments}
    if len(dims) != 1 or any(segment.ndim != 2 for segment in segments):
        raise DimensionError('All sequence segments must be n x D with one D, got {}'.format(
            [segment.shape for segment in segments]))
    if len(registers) == 0:
        raise ContractError('The sequence needs at least one action register')
    if tokens is not None:
        for splice in (tokens.annotation_splice, tokens.prompt_splice):
            if splice is not None and splice != len(language):
                raise ContractError('Placeholder at token {} does not close the {}-token instruction'.format(
                    splice, len(language)))
    bounds = np.cumsum([0] + [len(segment) for segment in segments])
    layout = SequenceLayout(*(range(int(start), int(stop)) for start, stop in zip(bounds, bounds[1:])))
    return EmbeddingSequence(tokens=np.concatenate(segments, axis=0), layout=layout)


class Backbone(Module):
    """
    Frozen hashed-token embedding, action registers and pre-norm transformer blocks.

    Only low-rank adapters attached to the block linears ever train.
    """

    def __init__(self, vocab_size, dim, num_layers, num_heads, num_registers, rng, mlp_ratio=2):
        self.vocab_size = vocab_size
        self.dim = dim
        self.token_embedding = Embedding(vocab_size, dim, rng)
        self.registers = Parameter(glorot_uniform(rng, num_registers, dim))
        self.blocks = [TransformerBlock(dim, num_heads, mlp_ratio * dim, rng) for _ in range(num_layers)]
        self.final_norm = LayerNorm(dim)
        self.freeze()

    def linears(self):
        return [linear for block in self.blocks for linear in block.linears()]

    def attach_adapters(self, rank, alpha, rng):
        return [attach_adapter(linear, rank, alpha, rng) for linear in self.linears()]

    def adapters(self):
        return [linear.adapter for linear in self.linears() if linear.adapter is not None]

    def base_parameters(self):
        """
        Every backbone parameter that is not part of an adapter.
        """
        return [(name, parameter) for name, parameter in self.named_parameters() if '.adapter.' not in name]

    def embed_language(self, tokens):
        embedded, _ = self.token_embedding.forward(list(tokens.ids))
        return embedded.reshape(len(tokens.ids), self.dim)

    def forward(self, tokens):
        hidden = tokens
        caches = []
        for block in self.blocks:
            hidden, cache = block.forward(hidden)
            caches.append(cache)
        output, norm_cache = self.final_norm.forward(hidden)
        return output, (caches, norm_cache)

    def backward(self, doutput, cache):
        caches, norm_cache = cache
        dhidden = self.final_norm.backward(doutput, norm_cache)
        for block, block_cache in zip(reversed(self.blocks), reversed(caches)):
            dhidden = block.backward(dhidden, block_cache)
        return dhidden


def backbone_forward(sequence, backbone):
    hidden, _ = backbone.forward(sequence.tokens)
    return hidden
