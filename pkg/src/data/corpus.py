"""
平行语料读写：`<name>.src` / `<name>.tgt` 两个对齐的 UTF-8 文件，每行一个空格分词的句子
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from src.utils.error_handler import CorpusError, ErrorHandler

logger = logging.getLogger(__name__)

Sentence = List[str]
ParallelPair = Tuple[Sentence, Sentence]
PathLike = Union[str, Path]


def read_tokenized(path: PathLike) -> List[Sentence]:
    """按行读取并空格分词，空行保留为空列表"""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"文件不存在: {path}")
    with path.open("r", encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def write_tokenized(path: PathLike, sentences: Sequence[Sequence[str]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for sentence in sentences:
            f.write(" ".join(sentence) + "\n")


def load_corpus(
    src_path: PathLike,
    tgt_path: PathLike,
    error_handler: Optional[ErrorHandler] = None,
) -> List[ParallelPair]:
    """
    读取平行语料

    Args:
        src_path: 源语言文件
        tgt_path: 目标语言文件
        error_handler: 记录被跳过空行的台账（可选）

    Returns:
        [(src_tokens, tgt_tokens), ...]

    Raises:
        CorpusError: 文件缺失或两边行数不一致
    """
    sources = read_tokenized(src_path)
    targets = read_tokenized(tgt_path)
    if len(sources) != len(targets):
        raise CorpusError(
            f"平行语料行数不一致: {src_path} 有 {len(sources)} 行, {tgt_path} 有 {len(targets)} 行"
        )

    pairs: List[ParallelPair] = []
    for lineno, (src, tgt) in enumerate(zip(sources, targets), start=1):
        if not src or not tgt:
            detail = f"{src_path}:{lineno} 存在空行，跳过该句对"
            if error_handler is not None:
                error_handler.record(ErrorHandler.EMPTY_LINE, detail)
            else:
                logger.warning(f"⚠️ {detail}")
            continue
        pairs.append((src, tgt))

    logger.info(f"📄 读取语料: {src_path} / {tgt_path}, pairs={len(pairs)}")
    return pairs


def save_corpus(prefix: PathLike, pairs: Sequence[ParallelPair]) -> Tuple[Path, Path]:
    """写出 `<prefix>.src` / `<prefix>.tgt`"""
    prefix = Path(prefix)
    src_path = prefix.with_name(prefix.name + ".src")
    tgt_path = prefix.with_name(prefix.name + ".tgt")
    write_tokenized(src_path, [src for src, _ in pairs])
    write_tokenized(tgt_path, [tgt for _, tgt in pairs])
    return src_path, tgt_path


def load_split(data_dir: PathLike, name: str, error_handler: Optional[ErrorHandler] = None) -> List[ParallelPair]:
    data_dir = Path(data_dir)
    return load_corpus(data_dir / f"{name}.src", data_dir / f"{name}.tgt", error_handler)
