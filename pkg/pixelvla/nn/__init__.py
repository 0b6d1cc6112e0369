"""
Minimal deterministic differentiable-layer kernel.
"""
from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .gradcheck import DifferentiableOp, GradReport, gradcheck
from .layers import (
    MLP,
    Embedding,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    ResidualBlock,
    TransformerBlock,
    gelu,
    gelu_backward,
    linear_forward,
)
from .lora import LoRAAdapter, attach_adapter, lora_forward, merge_adapter, numerical_rank
from .optim import Adam, OptimizerState, optimizer_step
from .parameter import DTYPE, Module, Parameter, glorot_uniform, spawn_generators

__all__ = [
    'DTYPE', 'MLP', 'Adam', 'DifferentiableOp', 'Embedding', 'GradReport', 'LayerNorm', 'Linear', 'LoRAAdapter',
    'Module', 'MultiHeadAttention', 'OptimizerState', 'Parameter', 'ResidualBlock', 'TransformerBlock',
    'attach_adapter', 'gelu', 'gelu_backward', 'glorot_uniform', 'gradcheck', 'linear_forward', 'load_into',
    'lora_forward', 'merge_adapter', 'numerical_rank', 'optimizer_step', 'read_checkpoint', 'save_checkpoint',
    'spawn_generators',
]
