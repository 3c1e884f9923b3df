"""
AR 头深度消融工作流
对每个种子训练一个不挂 AR 头的基线，再对每个深度训练 MTL 模型，比较测试集 BLEU 的提升
"""

import json
import logging
from pathlib import Path
from statistics import median
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, Field

from src.core.models import DecodeMode, ExperimentConfig
from src.data.corpus import ParallelPair
from src.data.vocab import Vocab
from src.metrics.bleu import corpus_bleu
from src.metrics.repetition import repetition_rate
from src.mtl.heads import strip_heads
from src.training.checkpoint import load_checkpoint
from src.training.decoding import NARDecoder
from src.training.trainer import NARTrainer
from src.utils.concurrency import ConcurrencyManager
from src.utils.error_handler import ConfigError, ErrorHandler

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"


class AblationRun(BaseModel):
    name: str
    seed: int
    depth: Optional[int] = Field(default=None, description="None 表示基线")
    test_bleu: float
    repetition_rate: float
    checkpoint: str


class DepthSummary(BaseModel):
    depth: int
    bleu: List[float]
    gains: List[float] = Field(default_factory=list, description="逐种子相对基线的 BLEU 提升")
    median_gain: float


class AblationSummary(BaseModel):
    variant: str
    seeds: List[int]
    baseline_bleu: List[float]
    depths: List[DepthSummary]
    runs: List[AblationRun]


class ARDepthAblation:
    """
    AR 头深度消融编排器

    工作流程：
    Phase 1: 每个种子训练基线（mtl.enabled=false）
    Phase 2: 每个种子 × 每个深度训练 MTL 模型（mtl.ar_head_depth=d）
    Phase 3: 在测试集上 greedy 解码平均后的检查点，汇总 BLEU 提升
    """

    def __init__(
        self,
        config: ExperimentConfig,
        vocab: Vocab,
        train_pairs: Sequence[ParallelPair],
        dev_pairs: Sequence[ParallelPair],
        test_pairs: Sequence[ParallelPair],
        out_dir: Path,
        seeds: Optional[Sequence[int]] = None,
        concurrency: Optional[ConcurrencyManager] = None,
    ):
        """
        Args:
            config: 基础实验配置（mtl 的其余键沿用它）
            vocab: 训练语料构建的词表
            seeds: 种子列表；默认只用 train.seed
        """
        if not test_pairs:
            raise ConfigError("消融需要非空的测试集")
        self.config = config
        self.vocab = vocab
        self.train_pairs = list(train_pairs)
        self.dev_pairs = list(dev_pairs)
        self.test_pairs = list(test_pairs)
        self.out_dir = Path(out_dir)
        self.seeds = list(seeds) if seeds else [config.train.seed]
        self.concurrency = concurrency or ConcurrencyManager.for_decode()
        self.error_handler = ErrorHandler("ablate-ar-depth")

        logger.info(
            f"ARDepthAblation 初始化: variant={config.model.variant.value}, seeds={self.seeds}, "
            f"test={len(self.test_pairs)} 句"
        )

    def _run(self, name: str, config: ExperimentConfig, depth: Optional[int]) -> AblationRun:
        run_dir = self.out_dir / name
        result = NARTrainer(
            config, self.vocab, self.train_pairs, self.dev_pairs, run_dir, self.error_handler, self.concurrency
        ).run()
        params = strip_heads(load_checkpoint(result.averaged).params)
        decoder = NARDecoder(config.model, params, self.vocab, self.concurrency, self.error_handler)
        hyps = decoder.decode_corpus([src for src, _ in self.test_pairs], DecodeMode.GREEDY)
        refs = [tgt for _, tgt in self.test_pairs]
        run = AblationRun(
            name=name,
            seed=config.train.seed,
            depth=depth,
            test_bleu=corpus_bleu(hyps, refs).score,
            repetition_rate=repetition_rate(hyps),
            checkpoint=str(result.averaged),
        )
        logger.info(f"📊 {name}: test_bleu={run.test_bleu:.2f}, repetition={run.repetition_rate:.4f}")
        return run

    def run(self, depths: Sequence[int]) -> AblationSummary:
        """
        执行消融

        Args:
            depths: AR 头深度列表，例如 [1, 3, 6]

        Returns:
            AblationSummary（同时写入 out_dir/summary.json）
        """
        if not depths or any(d < 1 for d in depths):
            raise ConfigError(f"AR 头深度必须是正整数, 实际为 {list(depths)}")
        logger.info(f"🚀 开始 AR 深度消融: depths={list(depths)}, seeds={self.seeds}")

        runs: List[AblationRun] = []
        baseline: Dict[int, float] = {}

        # Phase 1: 基线
        for seed in self.seeds:
            cfg = self.config.model_copy(update={
                "train": self.config.train.model_copy(update={"seed": seed}),
                "mtl": self.config.mtl.model_copy(update={"enabled": False}),
            })
            run = self._run(f"baseline_seed{seed}", cfg, None)
            baseline[seed] = run.test_bleu
            runs.append(run)

        # Phase 2: MTL × 深度
        per_depth: Dict[int, List[AblationRun]] = {d: [] for d in depths}
        for depth in depths:
            for seed in self.seeds:
                cfg = self.config.model_copy(update={
                    "train": self.config.train.model_copy(update={"seed": seed}),
                    "mtl": self.config.mtl.model_copy(update={"enabled": True, "ar_head_depth": depth}),
                })
                run = self._run(f"depth{depth}_seed{seed}", cfg, depth)
                per_depth[depth].append(run)
                runs.append(run)

        # Phase 3: 汇总
        summaries = []
        for depth in depths:
            gains = [r.test_bleu - baseline[r.seed] for r in per_depth[depth]]
            summaries.append(DepthSummary(
                depth=depth,
                bleu=[r.test_bleu for r in per_depth[depth]],
                gains=gains,
                median_gain=median(gains),
            ))
        summary = AblationSummary(
            variant=self.config.model.variant.value,
            seeds=self.seeds,
            baseline_bleu=[baseline[s] for s in self.seeds],
            depths=summaries,
            runs=runs,
        )
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / SUMMARY_FILE).write_text(
            json.dumps(summary.model_dump(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        for s in summaries:
            logger.info(f"📊 depth={s.depth}: median_gain={s.median_gain:+.2f}, gains={s.gains}")
        logger.info(f"✅ 消融完成, 结果写入 {self.out_dir / SUMMARY_FILE}")
        return summary
