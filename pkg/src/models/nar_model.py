"""
NAR 模型：共享编码器 + 暴露逐层隐状态的非自回归解码器
vanilla 变体带长度预测器；ctc 变体的解码长度为 upsample_factor × 源长
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tensor
from src.core.models import CTCStatus, NARConfig, NARVariant
from src.ctc.ctc import ctc_loss_batch
from src.data.batching import Batch
from src.models.losses import cross_entropy, label_smoothed_ce
from src.nn.blocks import (
    EVAL,
    ForwardContext,
    decoder_layer,
    encoder_layer,
    init_decoder_layer,
    init_encoder_layer,
    init_layer_norm,
    init_linear,
    key_mask,
    layer_norm,
    linear,
    sinusoidal_positions,
)
from src.nn.params import ModelParams, ParamBinding, ParamInitializer, ParamScope
from src.utils.error_handler import ContractError

logger = logging.getLogger(__name__)

# 每个样本的 glancing 替换：解码位置 -> 参考 token id
GlanceOverrides = List[Dict[int, int]]


@dataclass
class EncoderOutput:
    states: Tensor
    lengths: np.ndarray

    @property
    def max_len(self) -> int:
        return int(self.states.shape[1])


@dataclass
class DecoderTrace:
    """
    NAR 解码器一次前向的结果

    Attributes:
        hidden: N 个 (B, T, d)，每层解码器的输出（AR 头的 memory）
        logits: (B, T, V)，最后一层经输出投影得到
        lengths: (B,)，每个样本实际的解码长度
    """
    hidden: List[Tensor]
    logits: Tensor
    lengths: np.ndarray


@dataclass
class NARLoss:
    loss: Optional[Tensor]
    components: Dict[str, float] = field(default_factory=dict)
    statuses: List[CTCStatus] = field(default_factory=list)


# ==================== 编码器（NAR 与 AR 教师共用） ====================

def init_embedding(init: ParamInitializer, name: str, vocab_size: int, d_model: int) -> None:
    init.normal(name, (vocab_size, d_model), std=d_model ** -0.5)


def embed(table: Tensor, ids: np.ndarray, d_model: int) -> Tensor:
    """token 嵌入 × √d + 正弦位置编码"""
    ids = np.asarray(ids, dtype=np.int64)
    x = ops.scale(ops.embedding(table, ids), math.sqrt(d_model))
    return ops.add(x, sinusoidal_positions(ids.shape[-1], d_model))


def init_encoder(init: ParamInitializer, prefix: str, cfg: NARConfig, vocab_size: int) -> None:
    init_embedding(init, f"{prefix}.embed_tokens", vocab_size, cfg.d_model)
    for i in range(cfg.n_enc_layers):
        init_encoder_layer(init, f"{prefix}.layers.{i}", cfg)
    if cfg.pre_norm:
        init_layer_norm(init, f"{prefix}.final_norm", cfg.d_model)


def run_encoder(
    p: ParamScope,
    src_ids: np.ndarray,
    src_lengths: np.ndarray,
    cfg: NARConfig,
    ctx: ForwardContext = EVAL,
) -> EncoderOutput:
    """
    编码源句

    Raises:
        ContractError: 存在空源句
    """
    src_lengths = np.asarray(src_lengths, dtype=np.int64)
    if src_lengths.size == 0 or np.any(src_lengths < 1):
        raise ContractError("源句不能为空")
    x = embed(p["embed_tokens"], src_ids, cfg.d_model)
    x = ops.dropout(x, cfg.dropout, ctx.rng, ctx.train)
    mask = key_mask(src_lengths, src_ids.shape[1])
    for i in range(cfg.n_enc_layers):
        x = encoder_layer(p.scope(f"layers.{i}"), x, mask, cfg, ctx)
    if cfg.pre_norm:
        x = layer_norm(p.scope("final_norm"), x)
    return EncoderOutput(states=x, lengths=src_lengths)


# ==================== NAR 模型 ====================

class NARModel:
    """
    vanilla / CTC 两种 NAR 模型

    参数前缀：encoder.*、decoder.*、length_predictor.*（仅 vanilla）
    """

    LENGTH_LOSS_WEIGHT = 0.1

    def __init__(self, config: NARConfig, vocab_size: int):
        self.config = config
        self.vocab_size = vocab_size

    @property
    def variant(self) -> NARVariant:
        return self.config.variant

    @property
    def n_layers(self) -> int:
        return self.config.n_dec_layers

    def init_params(self, seed: int, params: Optional[ModelParams] = None) -> ModelParams:
        """按名称派生随机数初始化 NAR 参数"""
        cfg = self.config
        params = params if params is not None else ModelParams()
        init = ParamInitializer(params, seed)
        init_encoder(init, "encoder", cfg, self.vocab_size)
        init_embedding(init, "decoder.embed_tokens", self.vocab_size, cfg.d_model)
        for i in range(cfg.n_dec_layers):
            init_decoder_layer(init, f"decoder.layers.{i}", cfg)
        if cfg.pre_norm:
            init_layer_norm(init, "decoder.final_norm", cfg.d_model)
        init_linear(init, "decoder.output_projection", cfg.d_model, self.vocab_size)
        if self.variant == NARVariant.VANILLA:
            init_linear(init, "length_predictor", cfg.d_model, 2 * cfg.max_length_offset + 1)
        logger.info(
            f"🧱 初始化 NAR 模型: variant={self.variant.value}, layers={cfg.n_enc_layers}+{cfg.n_dec_layers}, "
            f"params={params.count()}"
        )
        return params

    def encode(self, binding: ParamBinding, src_ids: np.ndarray, src_lengths: np.ndarray,
               ctx: ForwardContext = EVAL) -> EncoderOutput:
        return run_encoder(binding.scope("encoder"), src_ids, src_lengths, self.config, ctx)

    # ---------- 解码长度 ----------

    def length_logits(self, binding: ParamBinding, enc: EncoderOutput) -> Tensor:
        """(B, 2K+1)，对非 pad 位置平均池化后的编码器状态做线性分类"""
        valid = (~key_mask(enc.lengths, enc.max_len)[:, 0, :]).astype(np.float64)
        pooled = ops.sum(ops.mul(enc.states, valid[:, :, None]), axis=1)
        pooled = ops.mul(pooled, (1.0 / enc.lengths.astype(np.float64))[:, None])
        return linear(binding.scope("length_predictor"), pooled)

    def predict_length(self, binding: ParamBinding, enc: EncoderOutput) -> Tensor:
        """长度偏移 [-K, K] 上的概率分布 (B, 2K+1)"""
        if self.variant != NARVariant.VANILLA:
            raise ContractError("只有 vanilla 变体有长度预测器")
        return ops.softmax(self.length_logits(binding, enc), axis=-1)

    def predicted_lengths(self, binding: ParamBinding, enc: EncoderOutput) -> np.ndarray:
        """n = m + argmax 偏移（并列取最小偏移），下限为 1"""
        probs = self.predict_length(binding, enc).data
        offsets = np.argmax(probs, axis=-1) - self.config.max_length_offset
        return np.maximum(enc.lengths + offsets, 1)

    def length_targets(self, src_lengths: np.ndarray, tgt_lengths: np.ndarray) -> np.ndarray:
        k = self.config.max_length_offset
        return np.clip(tgt_lengths - src_lengths, -k, k) + k

    def decoder_lengths(self, src_lengths: np.ndarray, tgt_lengths: Optional[np.ndarray] = None) -> np.ndarray:
        """ctc：upsample × m；vanilla 训练时用参考长度（推理时由 predicted_lengths 给出）"""
        if self.variant == NARVariant.CTC:
            return np.asarray(src_lengths, dtype=np.int64) * self.config.upsample_factor
        if tgt_lengths is None:
            raise ContractError("vanilla 变体需要目标长度或长度预测")
        return np.asarray(tgt_lengths, dtype=np.int64)

    # ---------- 解码器 ----------

    def build_decoder_inputs(
        self,
        binding: ParamBinding,
        enc: EncoderOutput,
        dec_lengths: np.ndarray,
        overrides: Optional[GlanceOverrides] = None,
    ) -> Tensor:
        """
        均匀拷贝：解码位置 j 取编码器第 floor(j·m/T) 个状态，再加位置编码

        overrides 给出的位置改用参考 token 的目标端嵌入（glancing 第二遍）
        """
        dec_lengths = np.asarray(dec_lengths, dtype=np.int64)
        if np.any(dec_lengths < 1):
            raise ContractError("解码长度必须 >= 1")
        t_max = int(dec_lengths.max())
        positions = np.arange(t_max)[None, :]
        index = (positions * enc.lengths[:, None]) // dec_lengths[:, None]
        index = np.where(positions < dec_lengths[:, None], index, 0)
        content = ops.gather_rows(enc.states, index)

        if overrides and any(overrides):
            glanced = np.zeros(index.shape, dtype=bool)
            ref_ids = np.zeros(index.shape, dtype=np.int64)
            for b, mapping in enumerate(overrides):
                for pos, token in mapping.items():
                    glanced[b, pos] = True
                    ref_ids[b, pos] = token
            ref = ops.scale(ops.embedding(binding["decoder.embed_tokens"], ref_ids), math.sqrt(self.config.d_model))
            keep = (~glanced).astype(np.float64)[:, :, None]
            content = ops.add(ops.mul(content, keep), ops.mul(ref, 1.0 - keep))

        return ops.add(content, sinusoidal_positions(t_max, self.config.d_model))

    def nar_decode(
        self,
        binding: ParamBinding,
        dec_inputs: Tensor,
        enc: EncoderOutput,
        dec_lengths: np.ndarray,
        ctx: ForwardContext = EVAL,
    ) -> DecoderTrace:
        """全注意力（非因果）解码，只屏蔽 pad"""
        cfg = self.config
        p = binding.scope("decoder")
        self_mask = key_mask(dec_lengths, dec_inputs.shape[1])
        cross_mask = key_mask(enc.lengths, enc.max_len)
        x = ops.dropout(dec_inputs, cfg.dropout, ctx.rng, ctx.train)
        hidden: List[Tensor] = []
        for i in range(cfg.n_dec_layers):
            x = decoder_layer(p.scope(f"layers.{i}"), x, enc.states, self_mask, cross_mask, cfg, ctx)
            hidden.append(x)
        if cfg.pre_norm:
            x = layer_norm(p.scope("final_norm"), x)
        logits = linear(p.scope("output_projection"), x)
        return DecoderTrace(hidden=hidden, logits=logits, lengths=np.asarray(dec_lengths, dtype=np.int64))

    def forward(
        self,
        binding: ParamBinding,
        batch: Batch,
        ctx: ForwardContext = EVAL,
        overrides: Optional[GlanceOverrides] = None,
    ) -> Tuple[EncoderOutput, DecoderTrace]:
        """teacher-forced 长度的训练前向（vanilla 用参考长度，ctc 用上采样长度）"""
        enc = self.encode(binding, batch.src_ids, batch.src_lengths, ctx)
        dec_lengths = self.decoder_lengths(batch.src_lengths, batch.tgt_lengths)
        dec_inputs = self.build_decoder_inputs(binding, enc, dec_lengths, overrides)
        return enc, self.nar_decode(binding, dec_inputs, enc, dec_lengths, ctx)

    # ---------- 损失 ----------

    def vanilla_nar_loss(
        self,
        binding: ParamBinding,
        enc: EncoderOutput,
        trace: DecoderTrace,
        batch: Batch,
        label_smoothing: float,
    ) -> NARLoss:
        """
        token 级 label-smoothed CE（非 pad 位置平均）+ 0.1 × 长度 CE

        Raises:
            ContractError: 目标长度超过解码长度
        """
        if np.any(batch.tgt_lengths > trace.lengths):
            raise ContractError("目标长度 n 超过解码长度 T")
        if not np.array_equal(batch.tgt_lengths, trace.lengths):
            raise ContractError("vanilla 训练要求解码长度等于目标长度")
        token_loss = label_smoothed_ce(trace.logits, batch.tgt_ids, ~batch.tgt_pad_mask, label_smoothing)
        length_loss = cross_entropy(
            self.length_logits(binding, enc),
            self.length_targets(batch.src_lengths, batch.tgt_lengths),
        )
        loss = ops.add(token_loss, ops.scale(length_loss, self.LENGTH_LOSS_WEIGHT))
        return NARLoss(
            loss=loss,
            components={"nar_token": token_loss.item(), "length": length_loss.item()},
        )

    def ctc_nar_loss(self, trace: DecoderTrace, batch: Batch) -> NARLoss:
        """可表示样本上的平均 CTC 损失；全部不可表示时 loss 为 None"""
        log_probs = ops.log_softmax(trace.logits, axis=-1)
        loss, statuses = ctc_loss_batch(log_probs, batch.targets(), trace.lengths)
        components = {"ctc": loss.item()} if loss is not None else {}
        return NARLoss(loss=loss, components=components, statuses=statuses)

    def nar_loss(
        self,
        binding: ParamBinding,
        enc: EncoderOutput,
        trace: DecoderTrace,
        batch: Batch,
        label_smoothing: float,
    ) -> NARLoss:
        if self.variant == NARVariant.CTC:
            return self.ctc_nar_loss(trace, batch)
        return self.vanilla_nar_loss(binding, enc, trace, batch, label_smoothing)

    # ---------- 推理 ----------

    def infer_log_probs(self, params: ModelParams, src_ids: Sequence[int]) -> np.ndarray:
        """单句推理：返回 (T, V) 的 log 概率（vanilla 用预测长度）"""
        binding = ParamBinding(params, None)
        src = np.asarray([list(src_ids)], dtype=np.int64)
        lengths = np.array([len(src_ids)], dtype=np.int64)
        enc = self.encode(binding, src, lengths)
        if self.variant == NARVariant.CTC:
            dec_lengths = self.decoder_lengths(lengths)
        else:
            dec_lengths = self.predicted_lengths(binding, enc)
        dec_inputs = self.build_decoder_inputs(binding, enc, dec_lengths)
        trace = self.nar_decode(binding, dec_inputs, enc, dec_lengths)
        return ops.log_softmax(trace.logits, axis=-1).data[0]
