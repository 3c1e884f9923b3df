"""Glancing 训练"""

from .glancing import (
    GlancingSampler,
    ctc_glance_positions,
    glance_count,
    glance_positions,
    hamming_distance,
    vanilla_glance_positions,
)

__all__ = [
    "GlancingSampler",
    "ctc_glance_positions",
    "glance_count",
    "glance_positions",
    "hamming_distance",
    "vanilla_glance_positions",
]
