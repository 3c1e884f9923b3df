"""AdamW 与学习率计划"""

import math

import numpy as np
import pytest

from src.core.models import LRSchedule, TrainConfig
from src.nn.params import ModelParams
from src.training.optimizer import AdamW, learning_rate
from src.utils.error_handler import ContractError, ErrorHandler


def _params(value) -> ModelParams:
    return ModelParams({"w": np.asarray(value, dtype=np.float64)})


class TestAdamW:
    def test_first_step_matches_hand_computation(self):
        params = _params([1.0, -2.0])
        opt = AdamW(params, lr=0.1, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
        g = np.array([0.5, -0.25])
        assert opt.step(params, {"w": g})
        # 第一步偏差修正后 m̂ = g, v̂ = g²，更新量为 lr·sign(g)
        expected = np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(params["w"], expected, rtol=1e-12)

    def test_two_steps_match_reference_formula(self):
        params = _params([0.3])
        opt = AdamW(params, lr=0.01, betas=(0.8, 0.9), eps=1e-6, weight_decay=0.1)
        theta, m, v = 0.3, 0.0, 0.0
        for t, g in enumerate([0.2, -0.4], start=1):
            opt.step(params, {"w": np.array([g])})
            m = 0.8 * m + 0.2 * g
            v = 0.9 * v + 0.1 * g * g
            theta = theta - 0.01 * 0.1 * theta
            theta = theta - 0.01 * (m / (1 - 0.8 ** t)) / (math.sqrt(v / (1 - 0.9 ** t)) + 1e-6)
        assert params["w"][0] == pytest.approx(theta, rel=1e-12)
        assert opt.state.step == 2

    def test_missing_gradient_still_decays(self):
        params = _params([2.0])
        opt = AdamW(params, lr=0.1, weight_decay=0.5)
        opt.step(params, {})
        assert params["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_non_finite_gradient_skips_step(self):
        params = _params([1.0, 1.0])
        handler = ErrorHandler("test")
        opt = AdamW(params, lr=0.1, error_handler=handler)
        assert not opt.step(params, {"w": np.array([np.nan, 1.0])})
        np.testing.assert_array_equal(params["w"], [1.0, 1.0])
        assert opt.state.step == 0
        assert handler.count(ErrorHandler.NON_FINITE_GRAD) == 1

    def test_unknown_gradient_name(self):
        params = _params([1.0])
        with pytest.raises(ContractError):
            AdamW(params).step(params, {"missing": np.zeros(1)})

    def test_learning_rate_must_be_positive(self):
        with pytest.raises(ContractError):
            AdamW(_params([1.0]), lr=0.0)

    def test_from_config(self):
        config = TrainConfig(lr=3e-3, betas=(0.5, 0.6), weight_decay=0.2)
        opt = AdamW.from_config(_params([1.0]), config)
        assert (opt.lr, opt.betas, opt.weight_decay) == (3e-3, (0.5, 0.6), 0.2)


class TestSchedule:
    def test_linear_warmup_then_constant(self):
        config = TrainConfig(lr=1e-3, warmup_ratio=0.1, max_steps=100)
        assert learning_rate(1, config) == pytest.approx(1e-4)
        assert learning_rate(10, config) == pytest.approx(1e-3)
        assert learning_rate(80, config) == pytest.approx(1e-3)

    def test_inverse_sqrt_decay(self):
        config = TrainConfig(lr=1e-3, warmup_ratio=0.04, max_steps=100, lr_schedule=LRSchedule.INVERSE_SQRT)
        assert learning_rate(4, config) == pytest.approx(1e-3)
        assert learning_rate(16, config) == pytest.approx(1e-3 * 2 / 4)

    def test_no_warmup(self):
        config = TrainConfig(lr=2e-3, warmup_ratio=0.0, max_steps=10)
        assert learning_rate(1, config) == 2e-3
