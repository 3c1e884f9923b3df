"""
核心数据模型定义（Pydantic BaseModel）
模型结构、多任务头、glancing、训练、合成数据、检查点 manifest、指标记录
"""

import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ==================== 枚举类型 ====================

class NARVariant(str, Enum):
    VANILLA = "vanilla"
    CTC = "ctc"

class TaskType(str, Enum):
    COPY = "copy"
    REVERSE = "reverse"
    TWO_MODE_REORDER = "two_mode_reorder"
    TOY_TRANSLATION = "toy_translation"

class DecodeMode(str, Enum):
    GREEDY = "greedy"
    BEAM = "beam"

class LRSchedule(str, Enum):
    CONSTANT = "constant"
    INVERSE_SQRT = "inverse_sqrt"

class CTCStatus(str, Enum):
    OK = "ok"
    UNREPRESENTABLE = "unrepresentable"


# ==================== 模型结构 ====================

class BlockConfig(BaseModel):
    """Transformer 基本块配置（桌面规模默认值；512/8/2048 的 base 规模通过配置文件设置）"""
    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(default=64, ge=1, description="嵌入维度")
    n_heads: int = Field(default=4, ge=1, description="注意力头数")
    d_ff: int = Field(default=128, ge=1, description="FFN 内层维度")
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0, description="dropout 概率")
    pre_norm: bool = Field(default=False, description="是否使用 pre-norm（默认 post-norm）")

    @model_validator(mode="after")
    def check_heads(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} 不能被 n_heads={self.n_heads} 整除")
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


class NARConfig(BlockConfig):
    """NAR 模型配置"""
    n_enc_layers: int = Field(default=2, ge=1, description="编码器层数")
    n_dec_layers: int = Field(default=4, ge=1, description="NAR 解码器层数（损失求和中的 N）")
    variant: NARVariant = Field(default=NARVariant.VANILLA, description="vanilla 或 ctc")
    upsample_factor: int = Field(default=2, ge=1, description="CTC 解码器长度倍数")
    max_length_offset: int = Field(default=8, ge=0, description="长度预测的偏移范围 [-K, K]")

    @model_validator(mode="after")
    def check_upsample(self):
        if self.variant == NARVariant.CTC and self.upsample_factor < 2:
            raise ValueError("variant=ctc 时 upsample_factor 必须 >= 2")
        return self

    def block(self) -> BlockConfig:
        return BlockConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            dropout=self.dropout,
            pre_norm=self.pre_norm,
        )


class MTLConfig(BaseModel):
    """弱 AR 解码头的多任务配置"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    enabled: bool = Field(default=False, description="是否挂载 AR 头")
    lambda_: float = Field(default=0.5, alias="lambda", description="NAR 损失权重 λ")
    share_params: bool = Field(default=True, description="所有 AR 头共享参数")
    layer_dropout: bool = Field(default=True, description="每步随机选择一半 AR 头")
    ar_head_depth: int = Field(default=1, ge=1, description="每个 AR 头的解码层数")
    stop_gradient: bool = Field(default=False, description="阻断 AR 头到 NAR 隐状态的梯度（对照实验）")

    @field_validator("lambda_")
    @classmethod
    def check_lambda(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"mtl.lambda 必须在 [0, 1] 内, 实际为 {v}")
        return v


class GlanceSchedule(BaseModel):
    """glancing 比例的线性退火计划"""
    model_config = ConfigDict(extra="forbid")

    ratio_start: float = Field(default=0.5, ge=0.0, le=1.0)
    ratio_end: float = Field(default=0.3, ge=0.0, le=1.0)
    anneal_steps: Optional[int] = Field(
        default=None, ge=0, description="退火步数；None 表示训练总步数的一半"
    )

    def ratio(self, step: int, total_steps: Optional[int] = None) -> float:
        """第 step 步的 glancing 比例：线性插值，超过 anneal_steps 后保持常数"""
        anneal = self.anneal_steps
        if anneal is None:
            anneal = (total_steps or 0) // 2
        if anneal <= 0:
            return self.ratio_end
        frac = min(max(step, 0) / anneal, 1.0)
        return self.ratio_start + (self.ratio_end - self.ratio_start) * frac


class GlancingConfig(GlanceSchedule):
    enabled: bool = Field(default=False, description="是否启用 glancing 训练")


class TrainConfig(BaseModel):
    """优化与训练循环配置"""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=1)
    max_steps: int = Field(default=2000, ge=1)
    lr: float = Field(default=5e-4, gt=0.0)
    betas: Tuple[float, float] = Field(default=(0.9, 0.999))
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    label_smoothing: float = Field(default=0.1, ge=0.0, lt=1.0)
    warmup_ratio: float = Field(default=0.04, ge=0.0, le=1.0)
    lr_schedule: LRSchedule = Field(default=LRSchedule.CONSTANT)
    max_tokens: int = Field(default=1024, ge=1, description="每个 batch 的 token 预算")
    eval_interval: int = Field(default=200, ge=1)
    keep_best: int = Field(default=5, ge=1, description="按 dev BLEU 保留的检查点数量")

    @field_validator("betas")
    @classmethod
    def check_betas(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in v):
            raise ValueError(f"betas 必须在 [0, 1) 内, 实际为 {v}")
        return v


class DecodeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: DecodeMode = Field(default=DecodeMode.GREEDY)
    beam_size: int = Field(default=20, ge=1)


class TeacherConfig(BaseModel):
    """AR 教师模型（序列级蒸馏用）"""
    model_config = ConfigDict(extra="forbid")

    n_dec_layers: int = Field(default=2, ge=1)
    max_steps: int = Field(default=2000, ge=1)
    beam_size: int = Field(default=4, ge=1)
    max_len_ratio: float = Field(default=2.0, gt=0.0)
    max_len_extra: int = Field(default=5, ge=0)


class ExperimentConfig(BaseModel):
    """一次实验的全部配置（flat `section.key = value` 文件的结构化形式）"""
    model_config = ConfigDict(extra="forbid")

    model: NARConfig = Field(default_factory=NARConfig)
    mtl: MTLConfig = Field(default_factory=MTLConfig)
    glancing: GlancingConfig = Field(default_factory=GlancingConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)
    teacher: TeacherConfig = Field(default_factory=TeacherConfig)


# ==================== 合成数据 ====================

class SyntheticTaskSpec(BaseModel):
    task: TaskType
    vocab_size: int = Field(default=32, description="含保留符号的词表大小")
    len_min: int = Field(default=4, ge=1)
    len_max: int = Field(default=16, ge=1)
    n_pairs: int = Field(default=1000, ge=1)
    seed: int = Field(default=0)
    source_repeats: Optional[int] = Field(
        default=None, ge=1, description="每个源句重复出现的次数；None 时 two_mode_reorder 为 4，其余为 1"
    )

    @model_validator(mode="after")
    def check_lengths(self):
        if self.len_min > self.len_max:
            raise ValueError(f"len_min={self.len_min} > len_max={self.len_max}")
        return self

    @property
    def repeats(self) -> int:
        if self.source_repeats is not None:
            return self.source_repeats
        return 4 if self.task == TaskType.TWO_MODE_REORDER else 1


# ==================== 检查点 ====================

class ManifestEntry(BaseModel):
    name: str
    shape: List[int]
    offset: int = Field(..., ge=0, description="payload 中的字节偏移")
    dtype: str = Field(default="<f8")

    @property
    def nbytes(self) -> int:
        return int(math.prod(self.shape)) * 8


class CheckpointManifest(BaseModel):
    format_version: int = Field(default=1)
    kind: str = Field(default="nar", description="nar 或 teacher")
    step: int = Field(default=0)
    config: Dict[str, Any] = Field(default_factory=dict, description="ExperimentConfig 快照")
    vocab: List[str] = Field(default_factory=list, description="完整词表（含保留符号）")
    rng_state: Dict[str, Any] = Field(default_factory=dict)
    entries: List[ManifestEntry] = Field(default_factory=list)
    dev_bleu: Optional[float] = None
    averaged_from: List[str] = Field(default_factory=list)


# ==================== 指标记录 ====================

class MetricRecord(BaseModel):
    """评测报告中的一条记录 {metric, value, bucket?, n_sentences}"""
    metric: str
    value: float
    bucket: Optional[str] = None
    n_sentences: int = 0
    metadata: Dict[str, Any] = Field(default_factory=dict)


class EvalRecord(BaseModel):
    """训练中每次 dev 评测写入 metrics.jsonl 的记录"""
    step: int
    dev_bleu: float
    losses: Dict[str, float] = Field(default_factory=dict)
    repetition_rate: float = 0.0
    lr: float = 0.0
    incidents: Dict[str, int] = Field(default_factory=dict)


class ParamCount(BaseModel):
    nar: int
    ar_heads: int
    total: int
