"""词表、语料读写与合成任务"""

from .batching import Batch, TokenBucketSampler, make_batch, pad_sequences
from .corpus import ParallelPair, load_corpus, load_split, read_tokenized, save_corpus, write_tokenized
from .synthetic import ctc_min_length, generate, write_splits
from .vocab import BLANK, BOS, EOS, PAD, RESERVED_COUNT, RESERVED_TOKENS, UNK, Vocab, build_vocab

__all__ = [
    "Batch",
    "TokenBucketSampler",
    "make_batch",
    "pad_sequences",
    "ParallelPair",
    "load_corpus",
    "load_split",
    "read_tokenized",
    "save_corpus",
    "write_tokenized",
    "ctc_min_length",
    "generate",
    "write_splits",
    "BLANK",
    "BOS",
    "EOS",
    "PAD",
    "RESERVED_COUNT",
    "RESERVED_TOKENS",
    "UNK",
    "Vocab",
    "build_vocab",
]
