"""
可复现的合成任务生成器

copy / reverse：单一目标的对照任务
two_mode_reorder：每个源句恰有两个合法目标（多模态）
toy_translation：替换密码 + 相邻交换，单一目标
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from src.core.models import SyntheticTaskSpec, TaskType
from src.data.corpus import ParallelPair, Sentence, save_corpus
from src.data.vocab import RESERVED_COUNT
from src.utils.error_handler import ConfigError, ContractError

logger = logging.getLogger(__name__)

# 默认 CTC 上采样倍数下，允许的不可表示句对比例上限
MAX_UNREPRESENTABLE_FRACTION = 0.01
DEFAULT_UPSAMPLE = 2


def alphabet(vocab_size: int) -> List[str]:
    """文本 token 表：w0, w1, ...（数量 = vocab_size - 保留符号数）"""
    if vocab_size <= RESERVED_COUNT:
        raise ConfigError(f"vocab_size={vocab_size} 必须大于保留符号数 {RESERVED_COUNT}")
    return [f"w{i}" for i in range(vocab_size - RESERVED_COUNT)]


def _substitution(tokens: List[str], rng: np.random.Generator) -> Dict[str, str]:
    perm = rng.permutation(len(tokens))
    return {tok: tokens[int(j)] for tok, j in zip(tokens, perm)}


def _swap_adjacent(sentence: Sentence) -> Sentence:
    out = list(sentence)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def _swap_halves(sentence: Sentence) -> Sentence:
    half = len(sentence) // 2
    return sentence[half:] + sentence[:half]


def ctc_min_length(target: Sequence) -> int:
    """CTC 对齐所需的最短解码长度 = n + 相邻重复数"""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def generate(spec: SyntheticTaskSpec, stream: int = 0) -> List[ParallelPair]:
    """
    按 spec 生成平行语料（纯函数：相同 spec 产生相同结果）

    替换表只由 spec.seed 决定；stream 区分 train / dev / test 的源句采样流。

    Raises:
        ConfigError: vocab_size 不大于保留符号数
        ContractError: 默认上采样下不可表示的句对超过 1%
    """
    tokens = alphabet(spec.vocab_size)
    substitution = _substitution(tokens, np.random.default_rng(spec.seed))
    rng = np.random.default_rng([spec.seed, stream])

    pool_size = max(1, -(-spec.n_pairs // spec.repeats))
    pool: List[Sentence] = []
    for _ in range(pool_size):
        length = int(rng.integers(spec.len_min, spec.len_max + 1))
        pool.append([tokens[int(i)] for i in rng.integers(0, len(tokens), size=length)])

    pairs: List[ParallelPair] = []
    for i in range(spec.n_pairs):
        src = pool[i % pool_size]
        if spec.task == TaskType.COPY:
            tgt = list(src)
        elif spec.task == TaskType.REVERSE:
            tgt = list(reversed(src))
        elif spec.task == TaskType.TWO_MODE_REORDER:
            mapped = [substitution[t] for t in src]
            tgt = _swap_halves(mapped) if rng.random() < 0.5 else mapped
        else:
            tgt = _swap_adjacent([substitution[t] for t in src])
        pairs.append((list(src), tgt))

    order = rng.permutation(len(pairs))
    pairs = [pairs[int(j)] for j in order]

    unrepresentable = sum(
        1 for src, tgt in pairs if ctc_min_length(tgt) > DEFAULT_UPSAMPLE * len(src)
    )
    if unrepresentable > MAX_UNREPRESENTABLE_FRACTION * len(pairs):
        raise ContractError(
            f"默认上采样 {DEFAULT_UPSAMPLE} 下不可表示的句对过多: {unrepresentable}/{len(pairs)}"
        )

    logger.info(
        f"🧪 生成合成语料: task={spec.task.value}, n_pairs={len(pairs)}, "
        f"源句池={pool_size}, seed={spec.seed}"
    )
    return pairs


def write_splits(
    spec: SyntheticTaskSpec,
    out_dir: Union[str, Path],
    n_eval: int = 500,
) -> Dict[str, int]:
    """生成 train / dev / test 三个划分并写入 out_dir（共享同一个替换表）"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sizes = {"train": spec.n_pairs, "dev": n_eval, "test": n_eval}
    for offset, (name, n) in enumerate(sizes.items()):
        split_spec = spec.model_copy(update={"n_pairs": n})
        pairs = generate(split_spec, stream=offset)
        save_corpus(out_dir / name, pairs)
    logger.info(f"✅ 语料已写入 {out_dir}: {sizes}")
    return sizes

