"""NAR 模型与损失"""

from .losses import cross_entropy, label_smoothed_ce
from .nar_model import DecoderTrace, EncoderOutput, GlanceOverrides, NARLoss, NARModel, embed, init_encoder, run_encoder

__all__ = [
    "cross_entropy",
    "label_smoothed_ce",
    "DecoderTrace",
    "EncoderOutput",
    "GlanceOverrides",
    "NARLoss",
    "NARModel",
    "embed",
    "init_encoder",
    "run_encoder",
]
