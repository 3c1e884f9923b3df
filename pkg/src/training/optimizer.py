"""
AdamW（解耦权重衰减）与学习率计划
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from src.core.models import LRSchedule, TrainConfig
from src.nn.params import ModelParams
from src.utils.error_handler import ContractError, ErrorHandler

logger = logging.getLogger(__name__)


@dataclass
class OptimState:
    """每个参数的一阶/二阶矩 + 已执行的步数"""
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


class AdamW:
    """
    Adam + 解耦权重衰减

        m_t = β1·m + (1-β1)·g
        v_t = β2·v + (1-β2)·g²
        θ ← θ - lr·wd·θ
        θ ← θ - lr · m̂_t / (√v̂_t + ε)

    没有梯度的参数按零梯度处理（仍然衰减、矩继续指数滑动）。
    任一梯度非有限时整步跳过并记入事件台账。
    """

    def __init__(
        self,
        params: ModelParams,
        lr: float = 5e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        error_handler: Optional[ErrorHandler] = None,
    ):
        if lr <= 0.0:
            raise ContractError(f"学习率必须为正, 实际为 {lr}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.error_handler = error_handler
        self.state = OptimState(
            exp_avg={name: np.zeros_like(arr) for name, arr in params.items()},
            exp_avg_sq={name: np.zeros_like(arr) for name, arr in params.items()},
        )

    @classmethod
    def from_config(cls, params: ModelParams, config: TrainConfig,
                    error_handler: Optional[ErrorHandler] = None) -> "AdamW":
        return cls(
            params,
            lr=config.lr,
            betas=tuple(config.betas),
            eps=config.eps,
            weight_decay=config.weight_decay,
            error_handler=error_handler,
        )

    def step(self, params: ModelParams, grads: Mapping[str, np.ndarray], lr: Optional[float] = None) -> bool:
        """
        执行一步更新

        Args:
            params: 原地更新的参数
            grads: {参数名: 梯度}
            lr: 本步学习率（默认 self.lr）

        Returns:
            是否真正执行了更新（非有限梯度时为 False）
        """
        unknown = [name for name in grads if name not in params]
        if unknown:
            raise ContractError(f"梯度对应的参数不存在: {unknown[:3]}")
        bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            detail = f"step={self.state.step + 1}, 非有限梯度参数: {bad[:3]}"
            if self.error_handler is not None:
                self.error_handler.record(ErrorHandler.NON_FINITE_GRAD, detail)
            else:
                logger.warning(f"⚠️ 跳过更新: {detail}")
            return False

        lr = self.lr if lr is None else lr
        beta1, beta2 = self.betas
        self.state.step += 1
        t = self.state.step
        bias1 = 1.0 - beta1 ** t
        bias2 = 1.0 - beta2 ** t

        for name, theta in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(theta)
            m = self.state.exp_avg[name]
            v = self.state.exp_avg_sq[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            updated = theta - lr * self.weight_decay * theta
            updated = updated - lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            params[name] = updated
        return True


def learning_rate(step: int, config: TrainConfig, total_steps: Optional[int] = None) -> float:
    """
    第 step 步（从 1 开始）的学习率

    线性 warmup（warmup_ratio × 总步数）后：constant 保持峰值；inverse_sqrt 按 √warmup/√step 衰减
    """
    total = total_steps if total_steps is not None else config.max_steps
    warmup = int(round(config.warmup_ratio * total))
    if warmup > 0 and step <= warmup:
        return config.lr * step / warmup
    if config.lr_schedule == LRSchedule.INVERSE_SQRT:
        return config.lr * math.sqrt(max(warmup, 1)) / math.sqrt(max(step, 1))
    return config.lr
