"""
NAR 训练循环

每一步：取 batch -> （可选）glancing 第一遍 -> 前向 -> 选择 AR 头 -> 多任务损失 -> 反向 -> AdamW。
每 eval_interval 步在 dev 上做 greedy 解码，记录 BLEU / 重复率，按 dev BLEU 保留最好的 k 个检查点。
"""

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tape, backward
from src.core.config import config_snapshot
from src.core.models import CTCStatus, DecodeMode, EvalRecord, ExperimentConfig
from src.data.batching import Batch, TokenBucketSampler
from src.data.corpus import ParallelPair
from src.data.vocab import Vocab
from src.glancing.glancing import GlancingSampler
from src.metrics.bleu import corpus_bleu
from src.metrics.repetition import repetition_rate
from src.models.nar_model import NARModel
from src.mtl.heads import MultiTaskHeads, mtl_loss, select_heads
from src.nn.blocks import ForwardContext
from src.nn.params import ParamBinding
from src.training.checkpoint import (
    Checkpoint,
    average_checkpoint_files,
    make_checkpoint,
    rng_snapshot,
    save_checkpoint,
)
from src.training.decoding import NARDecoder
from src.training.optimizer import AdamW, learning_rate
from src.utils.concurrency import ConcurrencyManager
from src.utils.error_handler import ContractError, ErrorHandler

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
LAST_CHECKPOINT = "checkpoint_last.ckpt"
AVERAGED_CHECKPOINT = "checkpoint_avg.ckpt"


@dataclass
class TrainResult:
    """
    一次训练的产物

    Attributes:
        last: 最后一步的检查点文件
        averaged: best-k 检查点平均后的文件
        best: [(dev_bleu, step, path)]，按 BLEU 从高到低
        records: 每次 dev 评测的记录
        incidents: 事件台账计数
    """
    out_dir: Path
    last: Path
    averaged: Path
    best: List[Tuple[float, int, Path]] = field(default_factory=list)
    records: List[EvalRecord] = field(default_factory=list)
    incidents: Dict[str, int] = field(default_factory=dict)

    @property
    def best_bleu(self) -> Optional[float]:
        return self.best[0][0] if self.best else None


class NARTrainer:
    """
    NAR（+ 弱 AR 头）训练器

    随机数流由 SeedSequence(train.seed) 派生：shuffle / dropout / heads / glance 互不干扰，
    因此 λ=1 时（AR 头不运行）的 NAR 参数更新与不挂 AR 头的训练逐位一致。
    """

    def __init__(
        self,
        config: ExperimentConfig,
        vocab: Vocab,
        train_pairs: Sequence[ParallelPair],
        dev_pairs: Sequence[ParallelPair],
        out_dir: Path,
        error_handler: Optional[ErrorHandler] = None,
        concurrency: Optional[ConcurrencyManager] = None,
    ):
        if not train_pairs:
            raise ContractError("训练语料为空")
        self.config = config
        self.vocab = vocab
        self.dev_pairs = list(dev_pairs)
        self.out_dir = Path(out_dir)
        self.error_handler = error_handler or ErrorHandler("train")
        self.concurrency = concurrency or ConcurrencyManager.for_decode()
        self.total_steps = config.train.max_steps

        self.model = NARModel(config.model, len(vocab))
        self.heads = MultiTaskHeads(self.model.n_layers, config.mtl, config.model.block(), len(vocab))
        self.params = self.model.init_params(config.train.seed)
        if config.mtl.enabled:
            self.heads.init_params(self.params, config.train.seed)
        self.optimizer = AdamW.from_config(self.params, config.train, self.error_handler)
        self.glancing = (
            GlancingSampler(self.model, config.glancing, self.total_steps, self.error_handler)
            if config.glancing.enabled else None
        )

        streams = np.random.SeedSequence(config.train.seed).spawn(4)
        self.shuffle_rng, self.dropout_rng, self.heads_rng, self.glance_rng = [
            np.random.default_rng(s) for s in streams
        ]
        self.sampler = TokenBucketSampler(
            [(vocab.encode(src), vocab.encode(tgt)) for src, tgt in train_pairs],
            config.train.max_tokens,
        )
        self.best: List[Tuple[float, int, Path]] = []
        self.records: List[EvalRecord] = []

        logger.info(
            f"🚀 初始化训练器: variant={self.model.variant.value}, N={self.model.n_layers}, "
            f"mtl={config.mtl.enabled} (λ={config.mtl.lambda_}, heads_active={self.heads.active}), "
            f"glancing={config.glancing.enabled}, steps={self.total_steps}, "
            f"buckets={len(self.sampler)}, params={self.params.count()}"
        )

    # ---------- 单步 ----------

    def train_step(self, batch: Batch, step: int) -> Optional[Dict[str, float]]:
        """
        执行一个训练步

        Returns:
            损失分量；整个 batch 都不可表示（CTC）或梯度非有限时返回 None（参数不变）
        """
        if batch.size == 0:
            raise ContractError("空 batch")
        lr = learning_rate(step, self.config.train, self.total_steps)

        # Step 1: glancing 第一遍（无梯度）
        overrides = None
        if self.glancing is not None:
            overrides = self.glancing.overrides(self.params, batch, step, self.glance_rng)

        # Step 2: 前向与 NAR 损失
        binding = ParamBinding(self.params, Tape())
        ctx = ForwardContext(train=True, rng=self.dropout_rng)
        enc, trace = self.model.forward(binding, batch, ctx, overrides)
        nar = self.model.nar_loss(binding, enc, trace, batch, self.config.train.label_smoothing)
        for b, status in enumerate(nar.statuses):
            if status == CTCStatus.UNREPRESENTABLE:
                self.error_handler.record(
                    ErrorHandler.UNREPRESENTABLE_CTC,
                    f"step={step}, 样本 {int(batch.indices[b])}: T={int(trace.lengths[b])}, "
                    f"n={int(batch.tgt_lengths[b])}",
                )
        if nar.loss is None:
            return None
        components = dict(nar.components)

        # Step 3: AR 头与多任务损失
        loss = nar.loss
        if self.heads.active:
            selected = select_heads(self.model.n_layers, self.heads_rng, self.config.mtl.layer_dropout)
            ar_losses = self.heads.head_losses(
                binding, trace, batch, selected, self.config.train.label_smoothing, ctx, nar.statuses
            )
            loss = mtl_loss(nar.loss, ar_losses, self.config.mtl.lambda_, self.model.n_layers)
            components["ar"] = float(np.mean([v.item() for v in ar_losses.values()]))
        components["total"] = ops.as_tensor(loss).item()

        # Step 4: 反向与参数更新
        grads = binding.gradients(backward(loss))
        if not self.optimizer.step(self.params, grads, lr):
            return None
        return components

    # ---------- 评测与检查点 ----------

    def _checkpoint(self, step: int, dev_bleu: Optional[float] = None) -> Checkpoint:
        return make_checkpoint(
            self.params,
            step=step,
            config=config_snapshot(self.config),
            vocab=self.vocab.itos,
            rng_state=rng_snapshot(
                shuffle=self.shuffle_rng,
                dropout=self.dropout_rng,
                heads=self.heads_rng,
                glance=self.glance_rng,
            ),
            dev_bleu=dev_bleu,
        )

    def dev_scores(self) -> Tuple[float, float]:
        """对 dev 做 greedy 解码，返回 (BLEU, 重复率)"""
        decoder = NARDecoder(
            self.config.model, self.params.copy(), self.vocab, self.concurrency, self.error_handler
        )
        hyps = decoder.decode_corpus([src for src, _ in self.dev_pairs], DecodeMode.GREEDY)
        refs = [tgt for _, tgt in self.dev_pairs]
        return corpus_bleu(hyps, refs).score, repetition_rate(hyps)

    def _keep_best(self, step: int, dev_bleu: float) -> None:
        """按 (BLEU, step) 保留最好的 keep_best 个检查点，淘汰的文件被删除"""
        keep = self.config.train.keep_best
        ranked = sorted(self.best + [(dev_bleu, step, Path())], key=lambda b: (b[0], b[1]), reverse=True)
        if (dev_bleu, step, Path()) not in ranked[:keep]:
            return
        path = save_checkpoint(self.out_dir / f"checkpoint_step{step}.ckpt", self._checkpoint(step, dev_bleu))
        self.best = sorted(self.best + [(dev_bleu, step, path)], key=lambda b: (b[0], b[1]), reverse=True)
        for _, evicted_step, evicted in self.best[keep:]:
            evicted.unlink(missing_ok=True)
            logger.debug(f"淘汰检查点 step={evicted_step}")
        self.best = self.best[:keep]

    def evaluate(self, step: int, losses: Dict[str, float]) -> Optional[EvalRecord]:
        if not self.dev_pairs:
            return None
        dev_bleu, rep = self.dev_scores()
        record = EvalRecord(
            step=step,
            dev_bleu=dev_bleu,
            losses=losses,
            repetition_rate=rep,
            lr=learning_rate(step, self.config.train, self.total_steps),
            incidents=self.error_handler.counts(),
        )
        self.records.append(record)
        with open(self.out_dir / METRICS_FILE, "a", encoding="utf-8") as f:
            f.write(json.dumps(record.model_dump(), ensure_ascii=False) + "\n")
        self._keep_best(step, dev_bleu)
        logger.info(f"📊 step={step}: dev_bleu={dev_bleu:.2f}, repetition={rep:.4f}, losses={losses}")
        return record

    # ---------- 主循环 ----------

    def run(self) -> TrainResult:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / METRICS_FILE).write_text("", encoding="utf-8")
        if not self.dev_pairs:
            logger.warning("⚠️ dev 语料为空，不做周期评测，平均检查点等于最后一步")

        running: Dict[str, List[float]] = defaultdict(list)
        interval = self.config.train.eval_interval
        batches = self.sampler.batches(self.shuffle_rng)
        for step in range(1, self.total_steps + 1):
            components = self.train_step(next(batches), step)
            if components is not None:
                for key, value in components.items():
                    running[key].append(value)
            if step % interval == 0 or step == self.total_steps:
                losses = {k: float(np.mean(v)) for k, v in running.items()}
                self.evaluate(step, losses)
                running.clear()

        last = save_checkpoint(self.out_dir / LAST_CHECKPOINT, self._checkpoint(self.total_steps))
        if self.best:
            averaged_ckpt = average_checkpoint_files([p for _, _, p in self.best])
            averaged = save_checkpoint(self.out_dir / AVERAGED_CHECKPOINT, averaged_ckpt)
        else:
            averaged = save_checkpoint(self.out_dir / AVERAGED_CHECKPOINT, self._checkpoint(self.total_steps))

        incidents = self.error_handler.counts()
        logger.info(
            f"✅ 训练完成: best={[(round(b, 2), s) for b, s, _ in self.best]}, 事件统计: {incidents}"
        )
        return TrainResult(
            out_dir=self.out_dir,
            last=last,
            averaged=averaged,
            best=list(self.best),
            records=list(self.records),
            incidents=incidents,
        )


def train(
    config: ExperimentConfig,
    vocab: Vocab,
    train_pairs: Sequence[ParallelPair],
    dev_pairs: Sequence[ParallelPair],
    out_dir: Path,
    error_handler: Optional[ErrorHandler] = None,
) -> TrainResult:
    return NARTrainer(config, vocab, train_pairs, dev_pairs, out_dir, error_handler).run()


def fixed_batch_losses(
    config: ExperimentConfig,
    vocab: Vocab,
    pairs: Sequence[ParallelPair],
    steps: int,
) -> List[float]:
    """在同一个 batch 上反复训练，返回每步之前的总损失（训练健全性检查）"""
    trainer = NARTrainer(config, vocab, pairs, [], Path("."))
    batch = next(trainer.sampler.epoch(trainer.shuffle_rng))
    losses: List[float] = []
    for step in range(1, steps + 1):
        components = trainer.train_step(batch, step)
        if components is not None:
            losses.append(components["total"])
    return losses
