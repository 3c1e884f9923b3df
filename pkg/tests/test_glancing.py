"""Glancing：采样数量、替换位置、CTC 对齐映射、退火计划"""

import numpy as np
import pytest

from src.autograd.tensor import Tensor
from src.core.models import GlancingConfig, GlanceSchedule, NARVariant
from src.data.batching import make_batch
from src.glancing.glancing import (
    GlancingSampler,
    ctc_glance_positions,
    glance_count,
    glance_positions,
    hamming_distance,
    vanilla_glance_positions,
)
from src.models.nar_model import DecoderTrace, NARModel
from src.utils.error_handler import ContractError, ErrorHandler

from tests.conftest import tiny_nar_config


def _one_best(ids, V=11, peak=0.9):
    probs = np.full((len(ids), V), (1 - peak) / (V - 1))
    probs[np.arange(len(ids)), ids] = peak
    return np.log(probs)


class TestCounting:
    def test_hamming(self):
        assert hamming_distance([1, 2, 3], [1, 0, 0]) == 2

    def test_hamming_requires_equal_lengths(self):
        with pytest.raises(ContractError):
            hamming_distance([1], [1, 2])

    def test_count_is_floored(self):
        assert glance_count([1, 2, 3], [0, 0, 0], 0.5) == 1
        assert glance_count([1, 2, 3], [1, 2, 3], 1.0) == 0


class TestVanilla:
    def test_replaces_sampled_positions_with_reference(self, rng):
        reference = [5, 6, 7, 8]
        log_probs = _one_best([5, 9, 7, 10])
        chosen = vanilla_glance_positions(log_probs, reference, 1.0, rng)
        assert len(chosen) == 2
        assert all(reference[pos] == token for pos, token in chosen.items())

    def test_zero_ratio_consumes_no_randomness(self, rng):
        before = rng.bit_generator.state
        assert vanilla_glance_positions(_one_best([5, 9]), [5, 6], 0.0, rng) == {}
        assert rng.bit_generator.state == before

    def test_same_seed_same_positions(self):
        log_probs = _one_best([9, 9, 9, 9, 9, 9])
        reference = [5, 6, 7, 8, 5, 6]
        a = vanilla_glance_positions(log_probs, reference, 0.5, np.random.default_rng(3))
        b = vanilla_glance_positions(log_probs, reference, 0.5, np.random.default_rng(3))
        assert a == b and len(a) == 3


class TestCTC:
    def _log_probs(self):
        rows = np.full((4, 8), 0.02)
        rows[0, [4, 5, 6]] = [0.05, 0.8, 0.05]
        rows[1] = 0.1 / 6
        rows[1, [4, 7]] = [0.3, 0.6]
        rows[2:, [4, 5, 6]] = [0.05, 0.05, 0.8]
        return np.log(rows)

    def test_tokens_map_to_first_aligned_position(self, rng):
        # 对齐为 5 <blank> 6 6，预测为 5 7 6 6，差异数为 1
        chosen = ctc_glance_positions(self._log_probs(), [5, 6], 1.0, rng)
        assert chosen in ({0: 5}, {2: 6})

    def test_unrepresentable_reference_is_skipped(self):
        handler = ErrorHandler("test")
        trace = DecoderTrace(hidden=[], logits=Tensor(np.zeros((1, 2, 8))), lengths=np.array([2]))
        batch = make_batch([([5], [6, 6])])
        overrides = glance_positions(trace, batch, 0.5, NARVariant.CTC, np.random.default_rng(0), handler)
        assert overrides == [{}]
        assert handler.count(ErrorHandler.GLANCE_SKIPPED) == 1


class TestSchedule:
    def test_linear_anneal_then_constant(self):
        schedule = GlanceSchedule(ratio_start=0.5, ratio_end=0.3, anneal_steps=10)
        assert schedule.ratio(0) == pytest.approx(0.5)
        assert schedule.ratio(5) == pytest.approx(0.4)
        assert schedule.ratio(10) == pytest.approx(0.3)
        assert schedule.ratio(50) == pytest.approx(0.3)

    def test_default_anneal_is_half_of_training(self):
        schedule = GlanceSchedule(ratio_start=0.5, ratio_end=0.3)
        assert schedule.ratio(50, total_steps=100) == pytest.approx(0.3)
        assert schedule.ratio(25, total_steps=100) == pytest.approx(0.4)

    def test_zero_anneal_is_constant_end(self):
        assert GlanceSchedule(ratio_start=0.9, ratio_end=0.2, anneal_steps=0).ratio(0) == 0.2


class TestSampler:
    def _sampler(self, ratio):
        model = NARModel(tiny_nar_config(), 11)
        config = GlancingConfig(enabled=True, ratio_start=ratio, ratio_end=ratio)
        return model, GlancingSampler(model, config, total_steps=10)

    def test_overrides_point_at_reference_tokens(self, id_batch):
        model, sampler = self._sampler(1.0)
        params = model.init_params(0)
        overrides = sampler.overrides(params, id_batch, 0, np.random.default_rng(5))
        assert len(overrides) == id_batch.size
        for mapping, reference in zip(overrides, id_batch.targets()):
            assert all(0 <= pos < len(reference) and reference[pos] == tok for pos, tok in mapping.items())
        again = sampler.overrides(params, id_batch, 0, np.random.default_rng(5))
        assert overrides == again

    def test_zero_ratio_skips_first_pass(self, id_batch, rng):
        model, sampler = self._sampler(0.0)
        before = rng.bit_generator.state
        assert sampler.overrides(model.init_params(0), id_batch, 0, rng) == [{}] * id_batch.size
        assert rng.bit_generator.state == before
