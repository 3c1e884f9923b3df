"""
词表：token <-> id 双射，保留符号 pad=0, bos=1, eos=2, unk=3, blank=4
"""

import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

from src.utils.error_handler import ConfigError, CorpusError

logger = logging.getLogger(__name__)

PAD = 0
BOS = 1
EOS = 2
UNK = 3
BLANK = 4
RESERVED_TOKENS = ["<pad>", "<s>", "</s>", "<unk>", "<blank>"]
RESERVED_COUNT = len(RESERVED_TOKENS)

# 解码输出时删除的符号（unk 保留）
_STRIP_IDS = {PAD, BOS, EOS, BLANK}


class Vocab:
    """
    词表

    Attributes:
        itos: id -> token（前 RESERVED_COUNT 个为保留符号）
        stoi: token -> id
    """

    def __init__(self, tokens: Sequence[str]):
        """
        Args:
            tokens: 文本 token（不含保留符号），按 id 顺序
        """
        self.itos: List[str] = list(RESERVED_TOKENS)
        self.stoi: Dict[str, int] = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
        for tok in tokens:
            if tok in self.stoi:
                raise ConfigError(f"词表中 token 重复或与保留符号冲突: {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def text_tokens(self) -> List[str]:
        return self.itos[RESERVED_COUNT:]

    def encode(self, tokens: Union[str, Sequence[str]]) -> List[int]:
        """token 序列（或空格分隔的字符串）-> id；词表外 token 编码为 unk"""
        if isinstance(tokens, str):
            tokens = tokens.split()
        return [self.stoi.get(tok, UNK) for tok in tokens]

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> List[str]:
        if strip_special:
            return [self.itos[i] for i in ids if int(i) not in _STRIP_IDS]
        return [self.itos[i] for i in ids]

    def save(self, path: Union[str, Path]) -> None:
        """一行一个文本 token，id = RESERVED_COUNT + 行号"""
        Path(path).write_text("".join(f"{tok}\n" for tok in self.text_tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        path = Path(path)
        if not path.is_file():
            raise CorpusError(f"词表文件不存在: {path}")
        return cls([line for line in path.read_text(encoding="utf-8").splitlines() if line])

    @classmethod
    def from_full_list(cls, itos: Sequence[str]) -> "Vocab":
        """从包含保留符号的完整列表（检查点 manifest）恢复"""
        if list(itos[:RESERVED_COUNT]) != RESERVED_TOKENS:
            raise CorpusError("词表的保留符号与当前版本不一致")
        return cls(itos[RESERVED_COUNT:])


def build_vocab(corpus: Iterable[Sequence[str]], max_size: Optional[int] = None) -> Vocab:
    """
    按频率构建词表，频率相同按字典序

    Args:
        corpus: token 序列的可迭代对象
        max_size: 词表总大小上限（含保留符号）

    Returns:
        Vocab
    """
    counter: Counter = Counter()
    for sentence in corpus:
        counter.update(tok for tok in sentence if tok not in RESERVED_TOKENS)
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        if max_size <= RESERVED_COUNT:
            raise ConfigError(f"max_size={max_size} 必须大于保留符号数 {RESERVED_COUNT}")
        ranked = ranked[: max_size - RESERVED_COUNT]
    vocab = Vocab([tok for tok, _ in ranked])
    logger.info(f"📚 构建词表: size={len(vocab)}, 语料不同 token 数={len(counter)}")
    return vocab
