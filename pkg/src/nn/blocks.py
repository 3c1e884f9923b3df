"""
Transformer 基本组件
多头注意力、逐位置 FFN、正弦位置编码、编码器层、解码器层
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tensor
from src.core.models import BlockConfig
from src.nn.params import ParamInitializer, ParamScope
from src.utils.error_handler import ContractError, DimensionError


@dataclass
class ForwardContext:
    """前向运行模式：训练模式下 dropout 从 rng 取掩码"""
    train: bool = False
    rng: Optional[np.random.Generator] = None


EVAL = ForwardContext(train=False)


# ==================== 掩码 ====================

def causal_mask(length: int) -> np.ndarray:
    """(L, L)，True 表示被屏蔽（未来位置）"""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def padding_mask(lengths: np.ndarray, max_len: int) -> np.ndarray:
    """(B, L)，True 表示 pad 位置"""
    lengths = np.asarray(lengths, dtype=np.int64)
    return np.arange(max_len)[None, :] >= lengths[:, None]


def key_mask(lengths: np.ndarray, max_len: int) -> np.ndarray:
    """(B, 1, L)，可广播到 (B, Lq, L) 的 key padding 掩码"""
    return padding_mask(lengths, max_len)[:, None, :]


# ==================== 位置编码 ====================

def sinusoidal_positions(length: int, d_model: int) -> Tensor:
    """固定的 sin/cos 位置编码表 (length, d_model)"""
    positions = np.arange(length, dtype=np.float64)[:, None]
    dims = np.arange(0, d_model, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, dims / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return Tensor(table)


# ==================== 参数登记 ====================

def init_linear(init: ParamInitializer, prefix: str, d_in: int, d_out: int) -> None:
    init.xavier(f"{prefix}.weight", (d_in, d_out))
    init.zeros(f"{prefix}.bias", (d_out,))


def init_layer_norm(init: ParamInitializer, prefix: str, d: int) -> None:
    init.ones(f"{prefix}.gain", (d,))
    init.zeros(f"{prefix}.bias", (d,))


def init_attention(init: ParamInitializer, prefix: str, d_model: int) -> None:
    for proj in ("q", "k", "v", "out"):
        init_linear(init, f"{prefix}.{proj}", d_model, d_model)


def init_ffn(init: ParamInitializer, prefix: str, d_model: int, d_ff: int) -> None:
    init_linear(init, f"{prefix}.fc1", d_model, d_ff)
    init_linear(init, f"{prefix}.fc2", d_ff, d_model)


def init_encoder_layer(init: ParamInitializer, prefix: str, cfg: BlockConfig) -> None:
    init_attention(init, f"{prefix}.self_attn", cfg.d_model)
    init_layer_norm(init, f"{prefix}.self_attn_norm", cfg.d_model)
    init_ffn(init, f"{prefix}.ffn", cfg.d_model, cfg.d_ff)
    init_layer_norm(init, f"{prefix}.ffn_norm", cfg.d_model)


def init_decoder_layer(init: ParamInitializer, prefix: str, cfg: BlockConfig) -> None:
    init_attention(init, f"{prefix}.self_attn", cfg.d_model)
    init_layer_norm(init, f"{prefix}.self_attn_norm", cfg.d_model)
    init_attention(init, f"{prefix}.cross_attn", cfg.d_model)
    init_layer_norm(init, f"{prefix}.cross_attn_norm", cfg.d_model)
    init_ffn(init, f"{prefix}.ffn", cfg.d_model, cfg.d_ff)
    init_layer_norm(init, f"{prefix}.ffn_norm", cfg.d_model)


# ==================== 前向 ====================

def linear(p: ParamScope, x: Tensor) -> Tensor:
    return ops.add(ops.matmul(x, p["weight"]), p["bias"])


def layer_norm(p: ParamScope, x: Tensor) -> Tensor:
    return ops.layer_norm(x, p["gain"], p["bias"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, length, d = x.shape
    return ops.transpose(ops.reshape(x, (b, length, n_heads, d // n_heads)), (0, 2, 1, 3))


def attention(
    p: ParamScope,
    query: Tensor,
    key_value: Tensor,
    mask: Optional[np.ndarray],
    n_heads: int,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, np.ndarray]]:
    """
    多头缩放点积注意力

    Args:
        p: 参数视图（q / k / v / out 四个线性层）
        query: (B, Lq, d)
        key_value: (B, Lk, d)
        mask: 可广播到 (B, Lq, Lk) 的布尔数组，True 的位置在 softmax 前置为 -inf
        n_heads: 头数
        return_weights: 是否同时返回注意力权重 (B, H, Lq, Lk)

    Raises:
        DimensionError: query / key_value 维度不一致
        ContractError: 某一行的所有位置都被屏蔽
    """
    if query.ndim != 3 or key_value.ndim != 3 or query.shape[-1] != key_value.shape[-1] \
            or query.shape[0] != key_value.shape[0]:
        raise DimensionError("attention", query.shape, key_value.shape)
    b, lq, d = query.shape
    lk = key_value.shape[1]
    if d % n_heads != 0:
        raise DimensionError("attention(heads)", (d,), (n_heads,))

    q = _split_heads(linear(p.scope("q"), query), n_heads)
    k = _split_heads(linear(p.scope("k"), key_value), n_heads)
    v = _split_heads(linear(p.scope("v"), key_value), n_heads)

    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d // n_heads))
    if mask is not None:
        full = np.broadcast_to(np.asarray(mask, dtype=bool), (b, lq, lk))
        if np.any(np.all(full, axis=-1)):
            raise ContractError("注意力掩码存在整行全部被屏蔽的情况，softmax 无定义")
        scores = ops.masked_fill(scores, full[:, None, :, :], -math.inf)
    weights = ops.softmax(scores, axis=-1)

    context = ops.matmul(weights, v)
    merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (b, lq, d))
    out = linear(p.scope("out"), merged)
    if return_weights:
        return out, weights.data
    return out


def feed_forward(p: ParamScope, x: Tensor, cfg: BlockConfig, ctx: ForwardContext) -> Tensor:
    hidden = ops.relu(linear(p.scope("fc1"), x))
    hidden = ops.dropout(hidden, cfg.dropout, ctx.rng, ctx.train)
    return linear(p.scope("fc2"), hidden)


def _sublayer(p: ParamScope, norm: str, x: Tensor, fn, cfg: BlockConfig, ctx: ForwardContext) -> Tensor:
    """残差 + layer norm；post-norm（默认）或 pre-norm"""
    if cfg.pre_norm:
        out = fn(layer_norm(p.scope(norm), x))
        return ops.add(x, ops.dropout(out, cfg.dropout, ctx.rng, ctx.train))
    out = fn(x)
    return layer_norm(p.scope(norm), ops.add(x, ops.dropout(out, cfg.dropout, ctx.rng, ctx.train)))


def encoder_layer(
    p: ParamScope,
    x: Tensor,
    src_mask: Optional[np.ndarray],
    cfg: BlockConfig,
    ctx: ForwardContext = EVAL,
) -> Tensor:
    """自注意力 + FFN，各带残差与 layer norm"""
    x = _sublayer(p, "self_attn_norm", x,
                  lambda h: attention(p.scope("self_attn"), h, h, src_mask, cfg.n_heads), cfg, ctx)
    return _sublayer(p, "ffn_norm", x, lambda h: feed_forward(p.scope("ffn"), h, cfg, ctx), cfg, ctx)


def decoder_layer(
    p: ParamScope,
    x: Tensor,
    memory: Tensor,
    self_mask: Optional[np.ndarray],
    cross_mask: Optional[np.ndarray],
    cfg: BlockConfig,
    ctx: ForwardContext = EVAL,
) -> Tensor:
    """
    解码器层：自注意力 -> 对 memory 的交叉注意力 -> FFN

    self_mask 传入下三角（因果）掩码时就是标准的 AR 解码层；
    NAR 解码器传入只屏蔽 pad 的掩码。
    """
    x = _sublayer(p, "self_attn_norm", x,
                  lambda h: attention(p.scope("self_attn"), h, h, self_mask, cfg.n_heads), cfg, ctx)
    x = _sublayer(p, "cross_attn_norm", x,
                  lambda h: attention(p.scope("cross_attn"), h, memory, cross_mask, cfg.n_heads), cfg, ctx)
    return _sublayer(p, "ffn_norm", x, lambda h: feed_forward(p.scope("ffn"), h, cfg, ctx), cfg, ctx)


def combine_masks(*masks: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """按位或合并若干可广播的掩码（None 被忽略）"""
    present = [np.asarray(m, dtype=bool) for m in masks if m is not None]
    if not present:
        return None
    out = present[0]
    for m in present[1:]:
        out = np.logical_or(out, m)
    return out
