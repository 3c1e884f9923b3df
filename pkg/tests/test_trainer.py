"""训练循环：产物、可复现性、λ=1 等价、不可表示 batch 的处理"""

import json

import numpy as np
import pytest

from src.core.models import NARVariant
from src.data.batching import make_batch
from src.mtl.heads import HEAD_PREFIX, strip_heads
from src.training.checkpoint import load_checkpoint
from src.training.trainer import (
    AVERAGED_CHECKPOINT,
    LAST_CHECKPOINT,
    METRICS_FILE,
    NARTrainer,
    fixed_batch_losses,
    train,
)
from src.utils.error_handler import ErrorHandler

from tests.conftest import tiny_experiment


class TestTrainingRun:
    def test_writes_metrics_and_checkpoints(self, tmp_path, vocab, copy_pairs):
        config = tiny_experiment(mtl={"enabled": True})
        result = train(config, vocab, copy_pairs, copy_pairs[:4], tmp_path)

        records = [json.loads(line) for line in (tmp_path / METRICS_FILE).read_text().splitlines()]
        assert [r["step"] for r in records] == [2, 4]
        assert all(0.0 <= r["dev_bleu"] <= 100.0 for r in records)
        assert {"total", "ar"} <= set(records[-1]["losses"])

        assert result.last == tmp_path / LAST_CHECKPOINT
        assert result.averaged == tmp_path / AVERAGED_CHECKPOINT
        assert len(result.best) == 2
        kept = sorted(tmp_path.glob("checkpoint_step*.ckpt"))
        assert sorted(p for _, _, p in result.best) == kept

        last = load_checkpoint(result.last)
        assert last.manifest.step == 4
        assert set(last.manifest.rng_state) == {"shuffle", "dropout", "heads", "glance"}
        assert any(name.startswith(HEAD_PREFIX + ".") for name in last.params)

    def test_keep_best_evicts_files(self, tmp_path, vocab, copy_pairs):
        config = tiny_experiment(train={"max_steps": 6, "eval_interval": 1, "keep_best": 2})
        result = train(config, vocab, copy_pairs, copy_pairs[:4], tmp_path)
        assert len(result.records) == 6
        assert len(list(tmp_path.glob("checkpoint_step*.ckpt"))) == 2
        bleus = [b for b, _, _ in result.best]
        assert bleus == sorted(bleus, reverse=True)

    def test_without_dev_average_equals_last(self, tmp_path, vocab, copy_pairs):
        result = train(tiny_experiment(), vocab, copy_pairs, [], tmp_path)
        assert result.records == []
        assert load_checkpoint(result.averaged).params.equal(load_checkpoint(result.last).params)

    def test_bitwise_reproducible(self, tmp_path, vocab, copy_pairs):
        config = tiny_experiment(
            NARVariant.CTC,
            model={"dropout": 0.1},
            mtl={"enabled": True},
            glancing={"enabled": True},
        )
        a = train(config, vocab, copy_pairs, copy_pairs[:3], tmp_path / "a")
        b = train(config, vocab, copy_pairs, copy_pairs[:3], tmp_path / "b")
        assert load_checkpoint(a.last).same_as(load_checkpoint(b.last))
        assert [r.dev_bleu for r in a.records] == [r.dev_bleu for r in b.records]

    def test_lambda_one_matches_plain_nar(self, tmp_path, vocab, copy_pairs):
        base = tiny_experiment(model={"dropout": 0.1}, glancing={"enabled": True})
        heads = tiny_experiment(
            model={"dropout": 0.1}, glancing={"enabled": True}, mtl={"enabled": True, "lambda": 1.0}
        )
        plain = load_checkpoint(train(base, vocab, copy_pairs, [], tmp_path / "plain").last)
        with_heads = load_checkpoint(train(heads, vocab, copy_pairs, [], tmp_path / "heads").last)
        assert strip_heads(with_heads.params).equal(plain.params)


class TestTrainStep:
    def test_loss_decreases_on_fixed_batch(self, vocab, copy_pairs):
        config = tiny_experiment(train={"lr": 1e-2, "warmup_ratio": 0.0, "weight_decay": 0.0})
        losses = fixed_batch_losses(config, vocab, copy_pairs, 30)
        assert len(losses) == 30
        assert losses[-1] < losses[0]

    def test_unrepresentable_batch_is_skipped(self, tmp_path, vocab):
        handler = ErrorHandler("test")
        pairs = [(["w0"], ["w1", "w1", "w1"])]
        trainer = NARTrainer(tiny_experiment(NARVariant.CTC), vocab, pairs, [], tmp_path, handler)
        before = trainer.params.copy()
        batch = next(trainer.sampler.epoch(np.random.default_rng(0)))
        assert trainer.train_step(batch, 1) is None
        assert trainer.params.equal(before)
        assert handler.count(ErrorHandler.UNREPRESENTABLE_CTC) == 1
        assert trainer.optimizer.state.step == 0

    def test_mixed_batch_trains_only_on_representable_samples(self, tmp_path, vocab):
        config = tiny_experiment(NARVariant.CTC, mtl={"enabled": True})
        ok = (["w0", "w1"], ["w2", "w3"])
        bad = (["w0"], ["w4", "w4", "w4"])

        def step(pairs, name):
            handler = ErrorHandler("test")
            trainer = NARTrainer(config, vocab, pairs, [], tmp_path / name, handler)
            ids = [(vocab.encode(src), vocab.encode(tgt)) for src, tgt in pairs]
            return trainer.train_step(make_batch(ids), 1), handler

        mixed, mixed_handler = step([ok, bad], "mixed")
        clean, clean_handler = step([ok], "clean")
        assert mixed_handler.count(ErrorHandler.UNREPRESENTABLE_CTC) == 1
        assert clean_handler.count(ErrorHandler.UNREPRESENTABLE_CTC) == 0
        assert mixed["ctc"] == pytest.approx(clean["ctc"], rel=1e-12)
        assert mixed["ar"] == pytest.approx(clean["ar"], rel=1e-12)
        assert mixed["total"] == pytest.approx(clean["total"], rel=1e-12)
