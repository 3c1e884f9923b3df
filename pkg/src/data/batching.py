"""
batch 构造：按长度排序分桶，每个 batch 的 token 数（含 pad）不超过预算，每个 epoch 用种子打乱 batch 顺序
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from src.data.vocab import PAD
from src.utils.error_handler import ContractError

logger = logging.getLogger(__name__)

IdPair = Tuple[List[int], List[int]]


@dataclass
class Batch:
    """
    pad 后的源/目标 id 矩阵

    Attributes:
        src_ids: (B, m_max)
        src_lengths: (B,)
        tgt_ids: (B, n_max)
        tgt_lengths: (B,)
        indices: 每行对应的原始句对下标
    """
    src_ids: np.ndarray
    src_lengths: np.ndarray
    tgt_ids: np.ndarray
    tgt_lengths: np.ndarray
    indices: np.ndarray

    @property
    def size(self) -> int:
        return int(self.src_ids.shape[0])

    @property
    def src_pad_mask(self) -> np.ndarray:
        """(B, m_max)，True 表示 pad"""
        return np.arange(self.src_ids.shape[1])[None, :] >= self.src_lengths[:, None]

    @property
    def tgt_pad_mask(self) -> np.ndarray:
        return np.arange(self.tgt_ids.shape[1])[None, :] >= self.tgt_lengths[:, None]

    @property
    def n_tokens(self) -> int:
        return int(self.src_lengths.sum() + self.tgt_lengths.sum())

    def targets(self) -> List[List[int]]:
        return [self.tgt_ids[b, : int(n)].tolist() for b, n in enumerate(self.tgt_lengths)]


def pad_sequences(seqs: Sequence[Sequence[int]], pad: int = PAD) -> Tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max()) if len(seqs) else 0), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def make_batch(pairs: Sequence[IdPair], indices: Sequence[int] = ()) -> Batch:
    """
    把若干 (src_ids, tgt_ids) 组成一个 batch

    Raises:
        ContractError: 空 batch 或存在空序列
    """
    if not pairs:
        raise ContractError("batch 为空")
    if any(len(src) == 0 or len(tgt) == 0 for src, tgt in pairs):
        raise ContractError("batch 中存在空的源句或目标句")
    src_ids, src_lengths = pad_sequences([src for src, _ in pairs])
    tgt_ids, tgt_lengths = pad_sequences([tgt for _, tgt in pairs])
    idx = np.asarray(list(indices) if len(indices) else range(len(pairs)), dtype=np.int64)
    return Batch(src_ids, src_lengths, tgt_ids, tgt_lengths, idx)


class TokenBucketSampler:
    """
    token 预算分桶

    句对按 (源长, 目标长, 下标) 排序后顺序切分，
    每个 batch 满足 batch_size × max(源长, 目标长) <= max_tokens（单句超预算时独占一个 batch）。
    """

    def __init__(self, pairs: Sequence[IdPair], max_tokens: int):
        if not pairs:
            raise ContractError("训练语料为空，无法构造 batch")
        self.pairs = list(pairs)
        self.max_tokens = max_tokens
        self.buckets = self._build_buckets()
        logger.info(f"📦 分桶完成: pairs={len(self.pairs)}, batches={len(self.buckets)}, max_tokens={max_tokens}")

    def _build_buckets(self) -> List[List[int]]:
        order = sorted(
            range(len(self.pairs)),
            key=lambda i: (len(self.pairs[i][0]), len(self.pairs[i][1]), i),
        )
        buckets: List[List[int]] = []
        current: List[int] = []
        widest = 0
        for i in order:
            width = max(len(self.pairs[i][0]), len(self.pairs[i][1]))
            if current and (len(current) + 1) * max(widest, width) > self.max_tokens:
                buckets.append(current)
                current, widest = [], 0
            current.append(i)
            widest = max(widest, width)
        if current:
            buckets.append(current)
        return buckets

    def __len__(self) -> int:
        return len(self.buckets)

    def epoch(self, rng: np.random.Generator) -> Iterator[Batch]:
        """按 rng 打乱 batch 顺序后逐个产出"""
        for j in rng.permutation(len(self.buckets)):
            bucket = self.buckets[int(j)]
            yield make_batch([self.pairs[i] for i in bucket], bucket)

    def batches(self, rng: np.random.Generator) -> Iterator[Batch]:
        """无限迭代：一个 epoch 结束后用同一个 rng 重新打乱"""
        while True:
            yield from self.epoch(rng)
