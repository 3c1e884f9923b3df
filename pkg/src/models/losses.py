"""
交叉熵损失（带 label smoothing）
"""

from typing import Optional

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tensor
from src.utils.error_handler import ContractError, DimensionError


def label_smoothed_ce(
    logits: Tensor,
    targets: np.ndarray,
    valid_mask: Optional[np.ndarray] = None,
    epsilon: float = 0.1,
) -> Tensor:
    """
    有效位置上的平均 label-smoothed 交叉熵

    平滑分布 q = (1-ε)·onehot(y) + ε/V，逐位置损失为 -Σ_k q_k log p_k。

    Args:
        logits: (..., V)
        targets: (...)，目标 id
        valid_mask: (...)，True 表示计入损失（pad 位置为 False）；None 表示全部计入
        epsilon: 平滑系数 ε

    Returns:
        标量损失

    Raises:
        DimensionError: targets 形状与 logits 不匹配
        ContractError: 没有任何有效位置
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise DimensionError("label_smoothed_ce", logits.shape, targets.shape)
    if valid_mask is None:
        valid_mask = np.ones(targets.shape, dtype=bool)
    n_valid = int(np.sum(valid_mask))
    if n_valid == 0:
        raise ContractError("交叉熵没有有效位置")

    log_probs = ops.log_softmax(logits, axis=-1)
    nll = ops.scale(ops.pick(log_probs, targets), -(1.0 - epsilon))
    if epsilon > 0.0:
        smooth = ops.scale(ops.mean(log_probs, axis=-1), -epsilon)
        per_position = ops.add(nll, smooth)
    else:
        per_position = nll
    masked = ops.mul(per_position, valid_mask.astype(np.float64))
    return ops.scale(ops.sum(masked), 1.0 / n_valid)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """无平滑的平均交叉熵（长度预测）"""
    return label_smoothed_ce(logits, targets, None, epsilon=0.0)
