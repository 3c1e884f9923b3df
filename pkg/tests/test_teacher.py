"""AR 教师：greedy / 束搜索、训练、序列级蒸馏"""

import numpy as np
import pytest

from src.core.models import SyntheticTaskSpec, TaskType
from src.data.synthetic import generate
from src.data.vocab import BLANK, BOS, PAD, build_vocab
from src.training.checkpoint import make_checkpoint
from src.training.teacher import (
    TEACHER_KIND,
    TeacherDecoder,
    TeacherModel,
    distill,
    load_teacher,
    teacher_decode,
    teacher_train,
)
from src.utils.concurrency import ConcurrencyManager
from src.utils.error_handler import CheckpointError, ContractError

from tests.conftest import tiny_experiment

SOURCES = [[5, 6, 7], [8, 9, 10, 5], [6], [10, 10, 9]]


@pytest.fixture
def teacher():
    config = tiny_experiment()
    model = TeacherModel(config.model, config.teacher, 11)
    return model, TeacherDecoder(model, model.init_params(4))


class TestDecoding:
    def test_beam_of_one_is_greedy(self, teacher):
        _, decoder = teacher
        for src in SOURCES:
            assert decoder.beam(src, 1) == decoder.greedy(src)

    def test_beam_never_scores_below_greedy(self, teacher):
        _, decoder = teacher
        for src in SOURCES:
            _, greedy_score = decoder.greedy(src)
            for beam in (2, 3):
                _, beam_score = decoder.beam(src, beam)
                assert beam_score >= greedy_score - 1e-12

    def test_output_respects_length_limit_and_bans(self, teacher):
        model, decoder = teacher
        for src in SOURCES:
            tokens = decoder.decode(src, beam_size=2)
            assert len(tokens) <= model.max_length(len(src))
            assert not {PAD, BOS, BLANK} & set(tokens)

    def test_max_length(self, teacher):
        model, _ = teacher
        assert model.max_length(3) == 2 * 3 + 2

    def test_contract(self, teacher):
        _, decoder = teacher
        with pytest.raises(ContractError):
            decoder.greedy([])
        with pytest.raises(ContractError):
            decoder.beam([5], 0)


class TestTrainingAndDistillation:
    @pytest.fixture
    def checkpoint(self, vocab, copy_pairs):
        return teacher_train(tiny_experiment(), vocab, copy_pairs)

    def test_train_produces_teacher_checkpoint(self, checkpoint, vocab):
        assert checkpoint.manifest.kind == TEACHER_KIND
        assert checkpoint.manifest.step == 3
        assert checkpoint.manifest.vocab == vocab.itos
        assert all(name.startswith("teacher.") for name in checkpoint.params)
        assert all(np.all(np.isfinite(arr)) for _, arr in checkpoint.params.items())

    def test_training_is_reproducible(self, checkpoint, vocab, copy_pairs):
        assert teacher_train(tiny_experiment(), vocab, copy_pairs).same_as(checkpoint)

    def test_distill_keeps_sources_and_line_count(self, checkpoint, copy_pairs):
        manager = ConcurrencyManager(max_concurrency=3)
        distilled = distill(checkpoint, copy_pairs, beam_size=2, concurrency=manager)
        assert len(distilled) == len(copy_pairs)
        assert [src for src, _ in distilled] == [src for src, _ in copy_pairs]
        assert all(len(tgt) >= 1 for _, tgt in distilled)
        assert distill(checkpoint, copy_pairs, beam_size=2, concurrency=manager) == distilled

    def test_distilled_target_is_teacher_beam_output(self, checkpoint, copy_pairs):
        distilled = distill(checkpoint, copy_pairs[:3], beam_size=2)
        for (src, _), (_, tgt) in zip(copy_pairs[:3], distilled):
            assert tgt == (teacher_decode(checkpoint, src, 2) or ["<unk>"])

    def test_nar_checkpoint_is_not_a_teacher(self, checkpoint):
        nar = make_checkpoint(checkpoint.params, kind="nar")
        with pytest.raises(CheckpointError):
            load_teacher(nar)


class TestDistilledModes:
    """同一源句的多个参考目标在蒸馏后收敛为教师的一个输出"""

    @staticmethod
    def _modes(pairs):
        targets = {}
        for src, tgt in pairs:
            targets.setdefault(tuple(src), set()).add(tuple(tgt))
        return targets

    def test_distillation_never_adds_target_modes(self):
        spec = SyntheticTaskSpec(
            task=TaskType.TWO_MODE_REORDER, vocab_size=11, len_min=2, len_max=5, n_pairs=48, seed=2
        )
        pairs = generate(spec)
        vocab = build_vocab([src for src, _ in pairs] + [tgt for _, tgt in pairs])
        checkpoint = teacher_train(tiny_experiment(), vocab, pairs)

        raw = self._modes(pairs)
        distilled = self._modes(distill(checkpoint, pairs, beam_size=2))

        assert raw.keys() == distilled.keys()
        assert any(len(modes) == 2 for modes in raw.values())
        for src, modes in distilled.items():
            assert len(modes) == 1
            assert len(modes) <= len(raw[src])
        assert sum(map(len, distilled.values())) < sum(map(len, raw.values()))
