"""Transformer 组件与参数管理"""

from .blocks import (
    EVAL,
    ForwardContext,
    attention,
    causal_mask,
    combine_masks,
    decoder_layer,
    encoder_layer,
    key_mask,
    padding_mask,
    sinusoidal_positions,
)
from .params import ModelParams, ParamBinding, ParamInitializer, ParamScope

__all__ = [
    "EVAL",
    "ForwardContext",
    "attention",
    "causal_mask",
    "combine_masks",
    "decoder_layer",
    "encoder_layer",
    "key_mask",
    "padding_mask",
    "sinusoidal_positions",
    "ModelParams",
    "ParamBinding",
    "ParamInitializer",
    "ParamScope",
]
