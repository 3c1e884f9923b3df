"""公共 fixture：种子化的随机数、小词表、小模型配置"""

from typing import List

import numpy as np
import pytest

from src.core.models import BlockConfig, ExperimentConfig, NARConfig, NARVariant
from src.data.batching import Batch, make_batch
from src.data.corpus import ParallelPair
from src.data.vocab import Vocab

TOKENS = [f"w{i}" for i in range(6)]


def tiny_nar_config(variant: NARVariant = NARVariant.VANILLA, **overrides) -> NARConfig:
    values = dict(
        d_model=8,
        n_heads=2,
        d_ff=16,
        dropout=0.0,
        n_enc_layers=1,
        n_dec_layers=2,
        variant=variant,
        upsample_factor=2,
        max_length_offset=3,
    )
    values.update(overrides)
    return NARConfig(**values)


def tiny_experiment(variant: NARVariant = NARVariant.VANILLA, **sections) -> ExperimentConfig:
    """sections: {"mtl": {...}, "train": {...}} 形式的覆盖"""
    data = {
        "model": tiny_nar_config(variant).model_dump(),
        "train": {"max_steps": 4, "eval_interval": 2, "max_tokens": 64, "keep_best": 2, "seed": 3},
        "teacher": {"n_dec_layers": 1, "max_steps": 3, "beam_size": 2, "max_len_extra": 2},
    }
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    return ExperimentConfig.model_validate(data)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def vocab() -> Vocab:
    return Vocab(TOKENS)


@pytest.fixture
def block() -> BlockConfig:
    return BlockConfig(d_model=8, n_heads=2, d_ff=16, dropout=0.0)


@pytest.fixture
def copy_pairs() -> List[ParallelPair]:
    gen = np.random.default_rng(7)
    pairs = []
    for _ in range(12):
        length = int(gen.integers(2, 6))
        sent = [TOKENS[int(i)] for i in gen.integers(0, len(TOKENS), size=length)]
        pairs.append((sent, list(sent)))
    return pairs


@pytest.fixture
def id_batch(vocab: Vocab, copy_pairs: List[ParallelPair]) -> Batch:
    pairs = [(vocab.encode(s), vocab.encode(t)) for s, t in copy_pairs[:4]]
    return make_batch(pairs)
