"""CTC：穷举路径的 oracle、梯度、不可表示目标、对齐与解码"""

import itertools
import math
from collections import defaultdict
from typing import Dict, Tuple

import numpy as np
import pytest

from src.autograd import ops
from src.autograd.gradcheck import gradcheck
from src.autograd.tensor import Tensor
from src.core.models import CTCStatus
from src.ctc.ctc import (
    UnrepresentableTargetError,
    collapse,
    ctc_beam_search,
    ctc_greedy_decode,
    ctc_loss,
    ctc_loss_batch,
    ctc_viterbi_align,
    extend_target,
    is_representable,
    sequence_log_mass,
)
from src.utils.error_handler import ContractError, DimensionError

BLANK = 0


def _random_log_probs(rng: np.random.Generator, T: int, V: int) -> np.ndarray:
    logits = rng.normal(scale=2.0, size=(T, V))
    return ops.log_softmax(Tensor(logits)).data


def _path_masses(log_probs: np.ndarray) -> Dict[Tuple[int, ...], float]:
    """穷举全部 V^T 条路径，按折叠结果累加概率"""
    T, V = log_probs.shape
    masses: Dict[Tuple[int, ...], float] = defaultdict(float)
    paths = np.array(list(itertools.product(range(V), repeat=T)))
    probs = np.exp(log_probs[np.arange(T), paths].sum(axis=1))
    for path, p in zip(paths, probs):
        masses[tuple(collapse(path, BLANK))] += p
    return masses


class TestBruteForceOracle:
    def test_loss_and_beam_search_match_enumeration(self):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 500:
            T = int(rng.integers(1, 7))
            V = int(rng.integers(2, 5))
            n = int(rng.integers(1, 4))
            target = [int(x) for x in rng.integers(1, V, size=n)]
            log_probs = _random_log_probs(rng, T, V)
            masses = _path_masses(log_probs)

            result = ctc_loss(Tensor(log_probs), target, blank=BLANK)
            expected = masses.get(tuple(target), 0.0)
            if is_representable(T, target):
                assert result.status == CTCStatus.OK
                assert math.exp(-result.loss.item()) == pytest.approx(expected, abs=1e-9)
            else:
                assert result.status == CTCStatus.UNREPRESENTABLE
                assert math.isinf(result.loss.item())
                assert expected == 0.0

            decoded = tuple(ctc_beam_search(log_probs, beam=V ** T, blank=BLANK))
            assert masses[decoded] == pytest.approx(max(masses.values()), abs=1e-12)
            checked += 1

    def test_sequence_log_mass_of_empty_target(self, rng):
        log_probs = _random_log_probs(rng, 3, 3)
        masses = _path_masses(log_probs)
        assert math.exp(sequence_log_mass(log_probs, [], BLANK)) == pytest.approx(masses[()], abs=1e-12)


class TestLoss:
    def test_one_hot_alignment_gives_zero_loss(self):
        target = [1, 2, 3]
        log_probs = np.full((3, 4), -1e9)
        log_probs[np.arange(3), target] = 0.0
        assert ctc_loss(Tensor(log_probs), target, blank=BLANK).loss.item() == pytest.approx(0.0, abs=1e-9)

    def test_repeated_labels_need_a_blank(self):
        assert not is_representable(2, [1, 1])
        assert is_representable(3, [1, 1])
        result = ctc_loss(Tensor(np.log(np.full((2, 3), 1 / 3))), [1, 1], blank=BLANK)
        assert result.status == CTCStatus.UNREPRESENTABLE

    def test_empty_target_is_rejected(self):
        with pytest.raises(ContractError):
            ctc_loss(Tensor(np.zeros((3, 3))), [], blank=BLANK)

    def test_requires_two_dimensional_input(self):
        with pytest.raises(DimensionError):
            ctc_loss(Tensor(np.zeros((1, 3, 3))), [1], blank=BLANK)

    def test_gradient_through_log_softmax(self, rng):
        target = [1, 2, 1]

        def fn(t):
            return ctc_loss(ops.log_softmax(t[0], axis=-1), target, blank=BLANK).loss

        result = gradcheck(fn, [rng.normal(size=(6, 4))], n_coords=24, rng=rng)
        assert result.passed(1e-4), result.worst

    def test_batch_skips_unrepresentable_samples(self, rng):
        logits = rng.normal(size=(2, 4, 4))
        log_probs = ops.log_softmax(Tensor(logits), axis=-1)
        loss, statuses = ctc_loss_batch(log_probs, [[1, 2], [3, 3, 3]], [4, 4], blank=BLANK)
        assert statuses == [CTCStatus.OK, CTCStatus.UNREPRESENTABLE]
        single = ctc_loss(Tensor(log_probs.data[0]), [1, 2], blank=BLANK).loss.item()
        assert loss.item() == pytest.approx(single)

    def test_batch_with_no_representable_sample(self, rng):
        log_probs = ops.log_softmax(Tensor(rng.normal(size=(1, 2, 3))), axis=-1)
        loss, statuses = ctc_loss_batch(log_probs, [[1, 1]], [2], blank=BLANK)
        assert loss is None
        assert statuses == [CTCStatus.UNREPRESENTABLE]

    def test_batch_gradient_matches_finite_differences(self, rng):
        targets = [[1, 2], [2]]

        def fn(t):
            loss, _ = ctc_loss_batch(ops.log_softmax(t[0], axis=-1), targets, [5, 3], blank=BLANK)
            return loss

        result = gradcheck(fn, [rng.normal(size=(2, 5, 3))], n_coords=20, rng=rng)
        assert result.passed(1e-4), result.worst


class TestAlignment:
    def test_viterbi_path_collapses_to_target(self, rng):
        for _ in range(50):
            T = int(rng.integers(3, 8))
            target = [int(x) for x in rng.integers(1, 4, size=int(rng.integers(1, 3)))]
            if not is_representable(T, target):
                continue
            log_probs = _random_log_probs(rng, T, 4)
            path = ctc_viterbi_align(log_probs, target, blank=BLANK)
            ext = extend_target(target, BLANK)
            assert len(path) == T
            assert collapse(ext[path], BLANK) == target
            assert all(0 <= b - a <= 2 for a, b in zip(path, path[1:]))

    def test_viterbi_is_the_best_path(self, rng):
        T, V, target = 4, 3, [1, 2]
        log_probs = _random_log_probs(rng, T, V)
        best = max(
            (p for p in itertools.product(range(V), repeat=T) if collapse(p, BLANK) == target),
            key=lambda p: log_probs[np.arange(T), list(p)].sum(),
        )
        ext = extend_target(target, BLANK)
        assert tuple(ext[ctc_viterbi_align(log_probs, target, blank=BLANK)]) == best

    def test_viterbi_ties_take_lower_state(self):
        log_probs = np.log(np.full((3, 2), 0.5))
        assert ctc_viterbi_align(log_probs, [1], blank=BLANK) == [0, 0, 1]

    def test_unrepresentable_alignment_raises(self):
        with pytest.raises(UnrepresentableTargetError):
            ctc_viterbi_align(np.zeros((1, 3)), [1, 2], blank=BLANK)


class TestDecoding:
    def test_collapse_merges_then_removes_blanks(self):
        assert collapse([1, 1, 0, 1, 2, 2, 0], BLANK) == [1, 1, 2]

    def test_greedy_is_argmax_then_collapse(self):
        log_probs = np.log(np.array([[0.1, 0.8, 0.1], [0.1, 0.8, 0.1], [0.9, 0.05, 0.05], [0.1, 0.1, 0.8]]))
        assert ctc_greedy_decode(log_probs, BLANK) == [1, 2]

    def test_beam_prefers_total_mass_over_best_path(self):
        # 最优单路径是 blank blank（空串），但 "1" 的边际概率更大
        log_probs = np.log(np.array([[0.4, 0.3, 0.3], [0.4, 0.3, 0.3]]))
        assert ctc_greedy_decode(log_probs, BLANK) == []
        masses = _path_masses(log_probs)
        assert masses[(1,)] > masses[()]
        assert ctc_beam_search(log_probs, beam=8, blank=BLANK) in ([1], [2])

    def test_beam_of_one_is_deterministic(self, rng):
        log_probs = _random_log_probs(rng, 5, 4)
        assert ctc_beam_search(log_probs, 1, BLANK) == ctc_beam_search(log_probs, 1, BLANK)

    def test_invalid_beam(self):
        with pytest.raises(ContractError):
            ctc_beam_search(np.zeros((2, 3)), 0, BLANK)

    def test_beam_mass_never_drops_as_beam_widens(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            T = int(rng.integers(3, 9))
            V = int(rng.integers(3, 6))
            log_probs = _random_log_probs(rng, T, V)
            greedy = sequence_log_mass(log_probs, ctc_greedy_decode(log_probs, BLANK), BLANK)
            masses = [
                sequence_log_mass(log_probs, ctc_beam_search(log_probs, beam, BLANK), BLANK)
                for beam in (1, 2, 3, 5, 20)
            ]
            assert masses[0] >= greedy - 1e-12
            assert all(wide >= narrow - 1e-12 for narrow, wide in zip(masses, masses[1:]))

    @pytest.mark.parametrize("beam", [1, 2, 5, 20])
    def test_one_hot_rows_decode_like_greedy(self, beam):
        path = [1, 1, 0, 2, 2, 0, 0, 3, 1]
        with np.errstate(divide="ignore"):
            log_probs = np.log(np.eye(4)[path])
        assert ctc_greedy_decode(log_probs, BLANK) == [1, 2, 3, 1]
        assert ctc_beam_search(log_probs, beam, BLANK) == [1, 2, 3, 1]

    def test_peaked_rows_greedy_equals_beam_of_one(self):
        peaks = [2, 0, 1, 1, 0, 3]
        probs = np.full((len(peaks), 4), 0.02)
        probs[np.arange(len(peaks)), peaks] = 0.94
        log_probs = np.log(probs)
        assert ctc_greedy_decode(log_probs, BLANK) == [2, 1, 3]
        assert ctc_beam_search(log_probs, 1, BLANK) == [2, 1, 3]
