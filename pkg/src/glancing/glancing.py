"""
Glancing 训练

两遍前向：第一遍（不求导、评估模式）得到模型当前预测，按与参考的差异数量 × ratio
采样若干参考 token，第二遍把它们的目标端嵌入放进解码器输入对应位置。
CTC 变体先用 Viterbi 对齐把参考 token 映射到解码位置。
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.autograd import ops
from src.autograd.tensor import no_grad
from src.core.models import GlancingConfig, NARVariant
from src.ctc.ctc import UnrepresentableTargetError, ctc_viterbi_align, extend_target
from src.data.batching import Batch
from src.models.nar_model import DecoderTrace, GlanceOverrides, NARModel
from src.nn.params import ModelParams, ParamBinding
from src.utils.error_handler import ContractError, ErrorHandler

logger = logging.getLogger(__name__)


def hamming_distance(prediction: Sequence[int], reference: Sequence[int]) -> int:
    if len(prediction) != len(reference):
        raise ContractError(f"比较序列长度不一致: {len(prediction)} vs {len(reference)}")
    return int(sum(1 for p, r in zip(prediction, reference) if int(p) != int(r)))


def glance_count(prediction: Sequence[int], reference: Sequence[int], ratio: float) -> int:
    """floor(ratio × hamming(prediction, reference))"""
    return int(np.floor(ratio * hamming_distance(prediction, reference)))


def _sample(candidates: Sequence[int], count: int, rng: np.random.Generator) -> List[int]:
    """无放回采样；count 为 0 时不消耗随机数"""
    count = min(count, len(candidates))
    if count <= 0:
        return []
    chosen = rng.choice(len(candidates), size=count, replace=False)
    return sorted(int(candidates[int(i)]) for i in chosen)


def vanilla_glance_positions(
    log_probs: np.ndarray,
    reference: Sequence[int],
    ratio: float,
    rng: np.random.Generator,
) -> Dict[int, int]:
    """在全部 T 个位置中均匀采样 glance_count 个，替换为对应位置的参考 token"""
    prediction = np.argmax(log_probs, axis=-1)
    count = glance_count(prediction, reference, ratio)
    positions = _sample(list(range(len(reference))), count, rng)
    return {pos: int(reference[pos]) for pos in positions}


def ctc_glance_positions(
    log_probs: np.ndarray,
    reference: Sequence[int],
    ratio: float,
    rng: np.random.Generator,
) -> Dict[int, int]:
    """
    CTC：Viterbi 对齐得到每个位置的扩展符号，差异数在对齐序列上计算；
    采样参考 token，替换到该 token 在对齐路径中第一次出现的解码位置

    Raises:
        UnrepresentableTargetError: 参考在该解码长度下不可表示
    """
    path = ctc_viterbi_align(log_probs, reference)
    ext = extend_target(reference)
    aligned = ext[np.asarray(path)]
    count = glance_count(np.argmax(log_probs, axis=-1), aligned, ratio)

    first_position: Dict[int, int] = {}
    for t, state in enumerate(path):
        if state % 2 == 1:
            first_position.setdefault((state - 1) // 2, t)
    tokens = _sample(sorted(first_position), count, rng)
    return {first_position[i]: int(reference[i]) for i in tokens}


def glance_positions(
    trace: DecoderTrace,
    batch: Batch,
    ratio: float,
    variant: NARVariant,
    rng: np.random.Generator,
    error_handler: Optional[ErrorHandler] = None,
) -> GlanceOverrides:
    """
    根据第一遍的解码结果生成每个样本的替换表 {解码位置: 参考 token id}

    CTC 参考不可表示的样本跳过 glancing（空替换表）
    """
    log_probs = ops.log_softmax(trace.logits, axis=-1).data
    overrides: GlanceOverrides = []
    for b, reference in enumerate(batch.targets()):
        T = int(trace.lengths[b])
        if ratio <= 0.0:
            overrides.append({})
            continue
        if variant == NARVariant.VANILLA:
            overrides.append(vanilla_glance_positions(log_probs[b, :T], reference, ratio, rng))
            continue
        try:
            overrides.append(ctc_glance_positions(log_probs[b, :T], reference, ratio, rng))
        except UnrepresentableTargetError as e:
            if error_handler is not None:
                error_handler.record(ErrorHandler.GLANCE_SKIPPED, f"batch 内第 {b} 个样本: {e}")
            overrides.append({})
    return overrides


class GlancingSampler:
    """
    训练循环中的 glancing 第一遍

    第一遍用常量参数、评估模式运行（不进入 tape、不消耗 dropout 随机数）
    """

    def __init__(self, model: NARModel, config: GlancingConfig, total_steps: int,
                 error_handler: Optional[ErrorHandler] = None):
        self.model = model
        self.config = config
        self.total_steps = total_steps
        self.error_handler = error_handler

    def ratio(self, step: int) -> float:
        return self.config.ratio(step, self.total_steps)

    def overrides(self, params: ModelParams, batch: Batch, step: int, rng: np.random.Generator) -> GlanceOverrides:
        ratio = self.ratio(step)
        if ratio <= 0.0:
            return [{} for _ in range(batch.size)]
        with no_grad():
            _, trace = self.model.forward(ParamBinding(params, None), batch)
        overrides = glance_positions(trace, batch, ratio, self.model.variant, rng, self.error_handler)
        n_glanced = sum(len(o) for o in overrides)
        logger.debug(f"glancing step={step}: ratio={ratio:.3f}, 替换 token 数={n_glanced}")
        return overrides
