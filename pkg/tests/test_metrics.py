"""BLEU、重复率、长度分桶报告"""

import json
import math

import pytest

from src.metrics import (
    bucket_label,
    corpus_bleu,
    evaluate,
    length_bucket_report,
    repetition_rate,
    sentence_stats,
    write_records,
)
from src.utils.error_handler import ConfigError, ContractError

REFS = [["the", "cat", "sat", "on", "the", "mat"], ["a", "b", "c", "d", "e"]]


class TestBleu:
    def test_identical_corpus_scores_100(self):
        assert corpus_bleu(REFS, REFS).score == pytest.approx(100.0)

    def test_clipped_counts(self):
        correct, total = sentence_stats(["the"] * 4, ["the", "cat", "the"], max_n=2)
        assert correct == [2, 0]
        assert total == [4, 3]

    def test_brevity_penalty(self):
        result = corpus_bleu([["the", "cat", "sat"]], [REFS[0]])
        assert result.brevity_penalty == pytest.approx(math.exp(1 - 6 / 3))
        assert result.sys_len == 3 and result.ref_len == 6
        assert result.precisions[0] == pytest.approx(1.0)
        assert result.precisions[1] == pytest.approx((2 + 1) / (2 + 1))

    def test_smoothed_higher_orders(self):
        result = corpus_bleu([["a", "x", "b", "y"]], [["a", "b", "c", "d"]])
        assert result.precisions == pytest.approx([0.5, 1 / 4, 1 / 3, 1 / 2])
        expected = 100 * math.exp(sum(math.log(p) for p in result.precisions) / 4)
        assert result.score == pytest.approx(expected)

    def test_empty_hypothesis_scores_zero(self):
        result = corpus_bleu([[]], [["a"]])
        assert result.score == 0.0
        assert result.brevity_penalty == 0.0

    def test_no_unigram_match_scores_zero(self):
        assert corpus_bleu([["x", "y"]], [["a", "b"]]).score == 0.0

    def test_contract(self):
        with pytest.raises(ContractError):
            corpus_bleu([["a"]], [])
        with pytest.raises(ContractError):
            corpus_bleu([["a"]], [[]])


class TestRepetition:
    def test_pooled_rate(self):
        assert repetition_rate([["a", "a", "b"], ["c", "c", "c"]]) == pytest.approx(3 / 6)

    def test_empty(self):
        assert repetition_rate([]) == 0.0
        assert repetition_rate([[]]) == 0.0


class TestReports:
    def test_buckets_skip_empty_ranges(self):
        refs = [["w"] * 5, ["w"] * 25, ["w"] * 61]
        records = length_bucket_report(refs, refs)
        assert [(r.bucket, r.n_sentences) for r in records] == [("(0,20]", 1), ("(20,40]", 1), (">60", 1)]
        assert all(r.value == pytest.approx(100.0) for r in records)

    def test_bucket_edges_are_right_closed(self):
        records = length_bucket_report([["w"] * 20], [["w"] * 20])
        assert records[0].bucket == bucket_label((0, 20))

    def test_evaluate_and_write(self, tmp_path):
        records = evaluate(REFS, REFS, ["bleu", "repetition"])
        assert [r.metric for r in records] == ["bleu", "repetition_rate"]
        text = write_records(tmp_path / "report.jsonl", records)
        lines = [json.loads(line) for line in (tmp_path / "report.jsonl").read_text().splitlines()]
        assert text.count("\n") == 2
        assert lines[0]["metric"] == "bleu" and lines[0]["value"] == pytest.approx(100.0)
        assert "bucket" not in lines[0]

    def test_unknown_report(self):
        with pytest.raises(ConfigError):
            evaluate(REFS, REFS, ["chrf"])
