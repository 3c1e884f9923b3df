"""弱 AR 解码头与多任务损失"""

from .heads import (
    HEAD_PREFIX,
    MultiTaskHeads,
    WeakARHead,
    all_selections,
    build_params,
    count_configured_params,
    count_params,
    head_prefix,
    mtl_loss,
    select_heads,
    strip_heads,
)

__all__ = [
    "HEAD_PREFIX",
    "MultiTaskHeads",
    "WeakARHead",
    "all_selections",
    "build_params",
    "count_configured_params",
    "count_params",
    "head_prefix",
    "mtl_loss",
    "select_heads",
    "strip_heads",
]
