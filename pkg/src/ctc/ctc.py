"""
CTC：对数域前向/后向算法的边际似然损失、Viterbi 对齐、贪心折叠解码与前缀束搜索
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autograd.ops import as_tensor
from src.autograd.tensor import Tensor, find_tape
from src.core.models import CTCStatus
from src.data.synthetic import ctc_min_length
from src.data.vocab import BLANK
from src.utils.error_handler import ContractError, DimensionError

logger = logging.getLogger(__name__)

NEG_INF = -math.inf


class UnrepresentableTargetError(ContractError):
    """解码长度不足以通过 CTC 对齐表示目标序列"""
    pass


@dataclass
class CTCLattice:
    """
    扩展目标（blank 交错，长度 2n+1）上的对数前向表

    Attributes:
        alpha: (T, 2n+1)，alpha[t, s] 含第 t 步的发射概率
        extended: 扩展后的符号序列，偶数位为 blank
    """
    alpha: np.ndarray
    extended: np.ndarray

    @property
    def log_likelihood(self) -> float:
        last = self.alpha[-1]
        if len(self.extended) == 1:
            return float(last[0])
        return float(np.logaddexp(last[-1], last[-2]))


@dataclass
class CTCLossResult:
    loss: Tensor
    status: CTCStatus

    @property
    def representable(self) -> bool:
        return self.status == CTCStatus.OK


def extend_target(target: Sequence[int], blank: int = BLANK) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = np.asarray(target, dtype=np.int64)
    return ext


def is_representable(T: int, target: Sequence[int]) -> bool:
    return len(target) > 0 and T >= ctc_min_length(list(target))


def _skip_allowed(ext: np.ndarray, blank: int) -> np.ndarray:
    """s-2 -> s 的跳转是否允许：s 不是 blank 且与 s-2 的符号不同"""
    skip = np.zeros(len(ext), dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def ctc_forward(log_probs: np.ndarray, target: Sequence[int], blank: int = BLANK) -> CTCLattice:
    """对数域前向递推（重复符号必须经过 blank）"""
    ext = extend_target(target, blank)
    T, S = log_probs.shape[0], len(ext)
    emit = log_probs[:, ext]
    skip = _skip_allowed(ext, blank)

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]
    return CTCLattice(alpha=alpha, extended=ext)


def _ctc_beta(log_probs: np.ndarray, ext: np.ndarray, blank: int) -> np.ndarray:
    """后向表，beta[t, s] 只含 t+1 之后的发射概率"""
    T, S = log_probs.shape[0], len(ext)
    emit = log_probs[:, ext]
    skip = _skip_allowed(ext, blank)

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b
    return beta


def _ctc_single(lp: np.ndarray, target: Sequence[int], blank: int) -> Tuple[float, np.ndarray]:
    """单个样本的 (loss, d loss / d log_probs)"""
    lattice = ctc_forward(lp, target, blank)
    log_p = lattice.log_likelihood
    beta = _ctc_beta(lp, lattice.extended, blank)
    occupancy = np.exp(lattice.alpha + beta - log_p)
    grad = np.zeros_like(lp)
    T = lp.shape[0]
    np.add.at(
        grad,
        (np.repeat(np.arange(T), len(lattice.extended)), np.tile(lattice.extended, T)),
        -occupancy.reshape(-1),
    )
    return -log_p, grad


def ctc_loss(log_probs: Tensor, target_ids: Sequence[int], blank: int = BLANK) -> CTCLossResult:
    """
    CTC 负对数边际似然

    Args:
        log_probs: (T, V)，每行已 log-softmax 归一化
        target_ids: 目标 id 序列（n >= 1）
        blank: blank 的 id

    Returns:
        CTCLossResult；目标不可表示时 loss 为 +inf，status=UNREPRESENTABLE

    Raises:
        ContractError: 目标为空
        DimensionError: log_probs 不是二维
    """
    log_probs = as_tensor(log_probs)
    if log_probs.ndim != 2:
        raise DimensionError("ctc_loss", log_probs.shape, (len(target_ids),))
    if len(target_ids) == 0:
        raise ContractError("ctc_loss 的目标序列不能为空")
    T = log_probs.shape[0]
    if not is_representable(T, target_ids):
        return CTCLossResult(loss=Tensor(math.inf), status=CTCStatus.UNREPRESENTABLE)

    value, grad = _ctc_single(log_probs.data, target_ids, blank)
    out = np.asarray(value)
    tape = find_tape([log_probs])
    loss = Tensor(out) if tape is None else tape.record("ctc_loss", (log_probs,), out, lambda g: (g * grad,))
    return CTCLossResult(loss=loss, status=CTCStatus.OK)


def ctc_loss_batch(
    log_probs: Tensor,
    targets: Sequence[Sequence[int]],
    input_lengths: Sequence[int],
    blank: int = BLANK,
) -> Tuple[Optional[Tensor], List[CTCStatus]]:
    """
    batch 版本：对可表示的样本取平均，不可表示的样本跳过

    Args:
        log_probs: (B, T_max, V)
        targets: 每个样本的目标 id
        input_lengths: 每个样本实际的解码长度

    Returns:
        (平均 loss 或 None（全部不可表示）, 每个样本的状态)
    """
    if log_probs.ndim != 3 or log_probs.shape[0] != len(targets):
        raise DimensionError("ctc_loss_batch", log_probs.shape, (len(targets),))
    statuses: List[CTCStatus] = []
    grad = np.zeros_like(log_probs.data)
    total = 0.0
    count = 0
    for b, (target, T) in enumerate(zip(targets, input_lengths)):
        if len(target) == 0:
            raise ContractError(f"第 {b} 个样本的目标序列为空")
        if not is_representable(int(T), target):
            statuses.append(CTCStatus.UNREPRESENTABLE)
            continue
        value, g = _ctc_single(log_probs.data[b, : int(T)], target, blank)
        total += value
        grad[b, : int(T)] = g
        count += 1
        statuses.append(CTCStatus.OK)

    if count == 0:
        return None, statuses
    out = np.asarray(total / count)
    grad /= count
    tape = find_tape([log_probs])
    if tape is None:
        return Tensor(out), statuses
    return tape.record("ctc_loss_batch", (log_probs,), out, lambda g: (g * grad,)), statuses


def sequence_log_mass(log_probs: np.ndarray, target: Sequence[int], blank: int = BLANK) -> float:
    """折叠后等于 target 的所有路径的对数总概率（target 可为空）"""
    if len(target) == 0:
        return float(np.sum(log_probs[:, blank]))
    if not is_representable(log_probs.shape[0], target):
        return NEG_INF
    return ctc_forward(log_probs, target, blank).log_likelihood


# ==================== 解码 ====================

def collapse(ids: Sequence[int], blank: int = BLANK) -> List[int]:
    """先合并相邻重复，再删除 blank"""
    out: List[int] = []
    prev: Optional[int] = None
    for i in ids:
        i = int(i)
        if i != prev and i != blank:
            out.append(i)
        prev = i
    return out


def ctc_greedy_decode(log_probs: np.ndarray, blank: int = BLANK) -> List[int]:
    """逐行 argmax（并列取较小 id）后折叠"""
    return collapse(np.argmax(np.asarray(log_probs), axis=-1).tolist(), blank)


Prefix = Tuple[int, ...]


def _logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    return max(a, b) + math.log1p(math.exp(-abs(a - b)))


def _prefix_beam(log_probs: np.ndarray, width: int, blank: int) -> Tuple[List[Prefix], bool]:
    """
    单次前缀束搜索

    每个前缀维护 (以 blank 结尾, 以非 blank 结尾) 两部分对数概率，
    同一前缀的不同对齐用 logaddexp 合并，每步按 (-总分, 前缀) 保留前 width 个。

    Returns:
        (最后一步存活的前缀, 是否发生过剪枝)
    """
    T, V = log_probs.shape
    beams: Dict[Prefix, Tuple[float, float]] = {(): (0.0, NEG_INF)}
    pruned = False

    for t in range(T):
        row = [float(x) for x in log_probs[t]]
        nxt: Dict[Prefix, List[float]] = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (p_blank, p_nonblank) in beams.items():
            p_total = _logaddexp(p_blank, p_nonblank)
            entry = nxt[prefix]
            entry[0] = _logaddexp(entry[0], p_total + row[blank])
            last = prefix[-1] if prefix else None
            for k in range(V):
                if k == blank:
                    continue
                extended = nxt[prefix + (k,)]
                if k == last:
                    # 重复符号：不经 blank 留在原前缀，经 blank 才扩展
                    entry[1] = _logaddexp(entry[1], p_nonblank + row[k])
                    extended[1] = _logaddexp(extended[1], p_blank + row[k])
                else:
                    extended[1] = _logaddexp(extended[1], p_total + row[k])
        ranked = sorted(nxt.items(), key=lambda kv: (-_logaddexp(kv[1][0], kv[1][1]), kv[0]))
        pruned = pruned or len(ranked) > width
        beams = {prefix: (pb, pnb) for prefix, (pb, pnb) in ranked[:width]}

    return list(beams), pruned


def ctc_beam_search(log_probs: np.ndarray, beam: int, blank: int = BLANK) -> List[int]:
    """
    前缀束搜索，返回精确边际概率最大的前缀（并列取字典序较小者）

    剪枝后的累计分数只是近似，候选最终用 sequence_log_mass 精确重打分。
    宽度 beam 的一次搜索若从未剪枝，候选已覆盖全部前缀，结果即全局最优；
    否则候选取宽度 1..beam 各次搜索的存活前缀与 greedy 输出的并集，
    因此输出的边际概率随 beam 单调不减，且不低于 greedy。
    """
    if beam < 1:
        raise ContractError(f"beam 必须 >= 1, 实际为 {beam}")
    log_probs = np.asarray(log_probs, dtype=np.float64)

    survivors, pruned = _prefix_beam(log_probs, beam, blank)
    candidates = set(survivors)
    candidates.add(tuple(ctc_greedy_decode(log_probs, blank)))
    if pruned:
        for width in range(1, beam):
            candidates.update(_prefix_beam(log_probs, width, blank)[0])

    masses = {prefix: sequence_log_mass(log_probs, prefix, blank) for prefix in candidates}
    best = min(masses, key=lambda prefix: (-masses[prefix], prefix))
    return list(best)


def ctc_viterbi_align(log_probs: np.ndarray, target_ids: Sequence[int], blank: int = BLANK) -> List[int]:
    """
    最大概率对齐路径（max-plus 前向 + 回溯）

    Returns:
        长度 T 的扩展状态下标序列；ext[path] 折叠后等于 target；并列时取较小的扩展状态下标

    Raises:
        UnrepresentableTargetError: 目标不可表示
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    T = log_probs.shape[0]
    if not is_representable(T, target_ids):
        raise UnrepresentableTargetError(
            f"解码长度 T={T} 不足以表示长度 {len(target_ids)} 的目标"
        )
    ext = extend_target(target_ids, blank)
    S = len(ext)
    emit = log_probs[:, ext]
    skip = _skip_allowed(ext, blank)

    delta = np.full((T, S), NEG_INF)
    backptr = np.zeros((T, S), dtype=np.int64)
    delta[0, 0] = emit[0, 0]
    delta[0, 1] = emit[0, 1]
    states = np.arange(S)
    for t in range(1, T):
        prev = delta[t - 1]
        from_two = np.full(S, NEG_INF)
        from_two[2:] = np.where(skip[2:], prev[:-2], NEG_INF)
        from_one = np.full(S, NEG_INF)
        from_one[1:] = prev[:-1]
        # 候选按前驱下标升序排列，argmax 取第一个最大值即较小下标
        candidates = np.stack([from_two, from_one, prev])
        choice = np.argmax(candidates, axis=0)
        delta[t] = candidates[choice, states] + emit[t]
        backptr[t] = states - (2 - choice)

    last = S - 1 if delta[T - 1, S - 1] > delta[T - 1, S - 2] else S - 2
    if delta[T - 1, last] == NEG_INF:
        raise UnrepresentableTargetError("不存在概率非零的对齐路径")
    path = [int(last)]
    for t in range(T - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path
