"""
语料级 BLEU（空格分词，n >= 2 的精度使用加一平滑）
"""

import logging
import math
from collections import Counter
from typing import List, Sequence, Tuple

from pydantic import BaseModel, Field

from src.utils.error_handler import ContractError

logger = logging.getLogger(__name__)

Sentence = Sequence[str]

SMOOTHING = "add-one for n>=2"


class BleuResult(BaseModel):
    """BLEU 计算明细"""
    score: float = Field(..., description="0-100")
    correct: List[int] = Field(default_factory=list, description="每阶裁剪后的匹配数")
    total: List[int] = Field(default_factory=list, description="每阶假设 n-gram 总数")
    precisions: List[float] = Field(default_factory=list, description="每阶（平滑后）精度")
    brevity_penalty: float = 1.0
    sys_len: int = 0
    ref_len: int = 0
    smoothing: str = SMOOTHING


def ngram_counts(tokens: Sentence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_stats(hypothesis: Sentence, reference: Sentence, max_n: int = 4) -> Tuple[List[int], List[int]]:
    """单句的 (裁剪匹配数, 假设 n-gram 数)，按阶排列"""
    correct, total = [], []
    for n in range(1, max_n + 1):
        hyp_counts = ngram_counts(hypothesis, n)
        ref_counts = ngram_counts(reference, n)
        correct.append(sum(min(c, ref_counts[g]) for g, c in hyp_counts.items()))
        total.append(max(len(hypothesis) - n + 1, 0))
    return correct, total


def corpus_bleu(hypotheses: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 4) -> BleuResult:
    """
    语料级 BLEU = BP × exp(Σ_n log p_n / max_n) × 100

    p_1 = 裁剪匹配数 / 假设 unigram 数；n >= 2 时 p_n = (匹配数 + 1) / (总数 + 1)

    Args:
        hypotheses: 分词后的假设
        references: 分词后的参考（每句一个参考）
        max_n: 最高阶

    Returns:
        BleuResult

    Raises:
        ContractError: 句数不一致或存在空参考
    """
    if len(hypotheses) != len(references):
        raise ContractError(f"假设与参考句数不一致: {len(hypotheses)} vs {len(references)}")
    if any(len(ref) == 0 for ref in references):
        raise ContractError("参考译文中存在空句")

    correct = [0] * max_n
    total = [0] * max_n
    sys_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        c, t = sentence_stats(hyp, ref, max_n)
        correct = [a + b for a, b in zip(correct, c)]
        total = [a + b for a, b in zip(total, t)]
        sys_len += len(hyp)
        ref_len += len(ref)

    if sys_len == 0 or correct[0] == 0:
        precisions = [0.0] * max_n
        return BleuResult(score=0.0, correct=correct, total=total, precisions=precisions,
                          brevity_penalty=0.0 if sys_len == 0 else 1.0, sys_len=sys_len, ref_len=ref_len)

    precisions = [correct[0] / total[0]]
    precisions += [(correct[n] + 1) / (total[n] + 1) for n in range(1, max_n)]
    brevity_penalty = 1.0 if sys_len > ref_len else math.exp(1.0 - ref_len / sys_len)
    log_mean = sum(math.log(p) for p in precisions) / max_n
    score = 100.0 * brevity_penalty * math.exp(log_mean)
    return BleuResult(
        score=score,
        correct=correct,
        total=total,
        precisions=precisions,
        brevity_penalty=brevity_penalty,
        sys_len=sys_len,
        ref_len=ref_len,
    )


def bleu(hypotheses: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 4) -> float:
    return corpus_bleu(hypotheses, references, max_n).score
