"""重复 token 比例"""

from typing import Sequence, Tuple


def repetition_counts(sequence: Sequence) -> Tuple[int, int]:
    """(与前一个 token 相同的 token 数, token 总数)"""
    repeats = sum(1 for prev, cur in zip(sequence, sequence[1:]) if prev == cur)
    return repeats, len(sequence)


def repetition_rate(sequences: Sequence[Sequence]) -> float:
    """语料级合并统计：Σ 重复数 / Σ token 数；没有 token 时为 0"""
    repeats = total = 0
    for seq in sequences:
        r, n = repetition_counts(seq)
        repeats += r
        total += n
    return repeats / total if total else 0.0
