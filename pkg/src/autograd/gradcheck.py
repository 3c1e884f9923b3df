"""
有限差分梯度校验（中心差分）
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from src.autograd.tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)


class GradCheckResult(BaseModel):
    """梯度校验结果"""
    max_rel_error: float = Field(..., description="采样坐标上的最大相对误差")
    n_checked: int = Field(..., description="检查的坐标数")
    worst: Dict[str, float] = Field(default_factory=dict, description="误差最大的坐标信息")

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
    n_coords: int = 20,
    rng: Optional[np.random.Generator] = None,
    wrt: Optional[Sequence[int]] = None,
) -> GradCheckResult:
    """
    用中心差分校验 backward() 的梯度

    Args:
        fn: 接收叶子张量列表、返回标量 loss 的函数（必须是确定性的）
        inputs: 输入数组
        h: 差分步长
        n_coords: 每个输入采样的坐标数（不超过其元素数）
        rng: 采样坐标用的随机数生成器
        wrt: 需要校验的输入下标，默认全部

    Returns:
        GradCheckResult
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.array(a, dtype=np.float64, copy=True) for a in inputs]
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)

    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    loss = fn(leaves)
    grads = backward(loss)

    def evaluate(values: List[np.ndarray]) -> float:
        return fn([Tensor(v) for v in values]).item()

    worst_err = 0.0
    worst: Dict[str, float] = {}
    n_checked = 0
    for i in wrt:
        leaf = leaves[i]
        analytic = grads[leaf.node].data if leaf.node in grads else np.zeros_like(arrays[i])
        size = arrays[i].size
        coords = rng.choice(size, size=min(n_coords, size), replace=False)
        for flat in coords:
            idx = np.unravel_index(int(flat), arrays[i].shape)
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i][idx] += h
            minus[i][idx] -= h
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * h)
            err = relative_error(float(analytic[idx]), numeric)
            n_checked += 1
            if err > worst_err:
                worst_err = err
                worst = {"input": float(i), "flat_index": float(flat), "analytic": float(analytic[idx]), "numeric": numeric}

    if worst_err > 1e-4:
        logger.warning(f"⚠️ 梯度校验误差偏大: max_rel_error={worst_err:.3e}, worst={worst}")
    return GradCheckResult(max_rel_error=worst_err, n_checked=n_checked, worst=worst)
