"""
AR 教师模型与序列级知识蒸馏

标准编码器-因果解码器（同一套 Transformer 组件），label-smoothed CE 训练；
greedy 与长度归一化的束搜索解码；蒸馏时用教师的束搜索输出替换训练目标。
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tape, backward
from src.core.config import config_from_snapshot, config_snapshot
from src.core.models import ExperimentConfig, NARConfig, TeacherConfig
from src.data.batching import Batch, TokenBucketSampler
from src.data.corpus import ParallelPair
from src.data.vocab import BLANK, BOS, EOS, PAD, UNK, Vocab
from src.models.losses import label_smoothed_ce
from src.models.nar_model import EncoderOutput, embed, init_embedding, init_encoder, run_encoder
from src.nn.blocks import (
    EVAL,
    ForwardContext,
    causal_mask,
    combine_masks,
    decoder_layer,
    init_decoder_layer,
    init_layer_norm,
    init_linear,
    key_mask,
    layer_norm,
    linear,
)
from src.nn.params import ModelParams, ParamBinding, ParamInitializer
from src.training.checkpoint import Checkpoint, make_checkpoint, rng_snapshot
from src.training.optimizer import AdamW, learning_rate
from src.utils.concurrency import ConcurrencyManager
from src.utils.error_handler import CheckpointError, ContractError, ErrorHandler, NarMtlError

logger = logging.getLogger(__name__)

PREFIX = "teacher"
TEACHER_KIND = "teacher"

# 解码时不允许生成的符号
_BANNED = (PAD, BOS, BLANK)


class TeacherModel:
    """
    AR 教师：参数前缀 teacher.encoder.* / teacher.decoder.*

    编码器结构与 NAR 模型相同（model.n_enc_layers），解码器层数由 teacher.n_dec_layers 决定
    """

    def __init__(self, model_config: NARConfig, teacher_config: TeacherConfig, vocab_size: int):
        self.model_config = model_config
        self.teacher_config = teacher_config
        self.vocab_size = vocab_size

    def init_params(self, seed: int) -> ModelParams:
        cfg = self.model_config
        params = ModelParams()
        init = ParamInitializer(params, seed)
        init_encoder(init, f"{PREFIX}.encoder", cfg, self.vocab_size)
        init_embedding(init, f"{PREFIX}.decoder.embed_tokens", self.vocab_size, cfg.d_model)
        for i in range(self.teacher_config.n_dec_layers):
            init_decoder_layer(init, f"{PREFIX}.decoder.layers.{i}", cfg)
        if cfg.pre_norm:
            init_layer_norm(init, f"{PREFIX}.decoder.final_norm", cfg.d_model)
        init_linear(init, f"{PREFIX}.decoder.output_projection", cfg.d_model, self.vocab_size)
        logger.info(f"🧱 初始化 AR 教师: dec_layers={self.teacher_config.n_dec_layers}, params={params.count()}")
        return params

    def encode(self, binding: ParamBinding, src_ids: np.ndarray, src_lengths: np.ndarray,
               ctx: ForwardContext = EVAL) -> EncoderOutput:
        return run_encoder(binding.scope(f"{PREFIX}.encoder"), src_ids, src_lengths, self.model_config, ctx)

    def decoder_logits(
        self,
        binding: ParamBinding,
        enc: EncoderOutput,
        dec_in: np.ndarray,
        dec_lengths: np.ndarray,
        ctx: ForwardContext = EVAL,
    ):
        """因果解码：(B, L) 的输入 id -> (B, L, V) logits"""
        cfg = self.model_config
        p = binding.scope(f"{PREFIX}.decoder")
        length = dec_in.shape[1]
        x = embed(p["embed_tokens"], dec_in, cfg.d_model)
        x = ops.dropout(x, cfg.dropout, ctx.rng, ctx.train)
        self_mask = combine_masks(causal_mask(length)[None, :, :], key_mask(dec_lengths, length))
        cross_mask = key_mask(enc.lengths, enc.max_len)
        for i in range(self.teacher_config.n_dec_layers):
            x = decoder_layer(p.scope(f"layers.{i}"), x, enc.states, self_mask, cross_mask, cfg, ctx)
        if cfg.pre_norm:
            x = layer_norm(p.scope("final_norm"), x)
        return linear(p.scope("output_projection"), x)

    def loss(self, binding: ParamBinding, batch: Batch, label_smoothing: float, ctx: ForwardContext = EVAL):
        """teacher forcing：输入 [bos] + y，预测 y + [eos]"""
        B = batch.size
        lengths = batch.tgt_lengths + 1
        width = int(lengths.max())
        dec_in = np.full((B, width), PAD, dtype=np.int64)
        dec_out = np.full((B, width), PAD, dtype=np.int64)
        for b, target in enumerate(batch.targets()):
            dec_in[b, : len(target) + 1] = [BOS] + target
            dec_out[b, : len(target) + 1] = target + [EOS]
        valid = np.arange(width)[None, :] < lengths[:, None]
        enc = self.encode(binding, batch.src_ids, batch.src_lengths, ctx)
        logits = self.decoder_logits(binding, enc, dec_in, lengths, ctx)
        return label_smoothed_ce(logits, dec_out, valid, label_smoothing)

    def max_length(self, src_len: int) -> int:
        return int(math.ceil(self.teacher_config.max_len_ratio * src_len)) + self.teacher_config.max_len_extra


class TeacherDecoder:
    """逐句解码（无 KV cache，每步重算整个前缀）"""

    def __init__(self, model: TeacherModel, params: ModelParams):
        self.model = model
        self.binding = ParamBinding(params, None)

    def _encode(self, src_ids: Sequence[int]) -> EncoderOutput:
        if len(src_ids) == 0:
            raise ContractError("源句不能为空")
        src = np.asarray([list(src_ids)], dtype=np.int64)
        return self.model.encode(self.binding, src, np.array([len(src_ids)], dtype=np.int64))

    def _next_log_probs(self, enc: EncoderOutput, prefix: Sequence[int]) -> np.ndarray:
        dec_in = np.asarray([[BOS] + list(prefix)], dtype=np.int64)
        logits = self.model.decoder_logits(self.binding, enc, dec_in, np.array([dec_in.shape[1]]))
        log_probs = ops.log_softmax(logits, axis=-1).data[0, -1].copy()
        log_probs[list(_BANNED)] = -np.inf
        return log_probs

    def greedy(self, src_ids: Sequence[int]) -> Tuple[List[int], float]:
        """返回 (不含 eos 的输出, 长度归一化得分)"""
        enc = self._encode(src_ids)
        tokens: List[int] = []
        total = 0.0
        for _ in range(self.model.max_length(len(src_ids))):
            log_probs = self._next_log_probs(enc, tokens)
            best = int(np.argmax(log_probs))
            total += float(log_probs[best])
            if best == EOS:
                return tokens, total / (len(tokens) + 1)
            tokens.append(best)
        return tokens, total / max(len(tokens), 1)

    def beam(self, src_ids: Sequence[int], beam_size: int) -> Tuple[List[int], float]:
        """
        长度归一化束搜索（得分 = 对数概率和 / 含 eos 的长度）

        greedy 结果也作为候选参与最终比较；beam_size=1 时与 greedy 相同
        """
        if beam_size < 1:
            raise ContractError(f"beam 必须 >= 1, 实际为 {beam_size}")
        greedy_tokens, greedy_score = self.greedy(src_ids)
        if beam_size == 1:
            return greedy_tokens, greedy_score

        enc = self._encode(src_ids)
        live: List[Tuple[Tuple[int, ...], float]] = [((), 0.0)]
        finished: List[Tuple[Tuple[int, ...], float]] = [(tuple(greedy_tokens), greedy_score)]
        for _ in range(self.model.max_length(len(src_ids))):
            candidates: List[Tuple[float, Tuple[int, ...]]] = []
            for tokens, score in live:
                log_probs = self._next_log_probs(enc, tokens)
                for k in np.argsort(-log_probs, kind="stable")[:beam_size]:
                    if np.isfinite(log_probs[k]):
                        candidates.append((score + float(log_probs[k]), tokens + (int(k),)))
            candidates.sort(key=lambda c: (-c[0], c[1]))
            live = []
            for score, tokens in candidates[:beam_size]:
                if tokens[-1] == EOS:
                    finished.append((tokens[:-1], score / len(tokens)))
                else:
                    live.append((tokens, score))
            if not live:
                break
        finished.extend((tokens, score / max(len(tokens), 1)) for tokens, score in live)
        best_tokens, best_score = min(finished, key=lambda f: (-f[1], f[0]))
        return list(best_tokens), best_score

    def decode(self, src_ids: Sequence[int], beam_size: int = 1) -> List[int]:
        tokens, _ = self.beam(src_ids, beam_size)
        return tokens


def teacher_train(
    config: ExperimentConfig,
    vocab: Vocab,
    pairs: Sequence[ParallelPair],
    error_handler: Optional[ErrorHandler] = None,
) -> Checkpoint:
    """
    训练 AR 教师（与 NAR 训练相同的 AdamW / 学习率 / 分桶约定）

    Returns:
        最后一步的教师检查点（kind=teacher）
    """
    error_handler = error_handler or ErrorHandler("teacher")
    model = TeacherModel(config.model, config.teacher, len(vocab))
    params = model.init_params(config.train.seed)
    optimizer = AdamW.from_config(params, config.train, error_handler)
    shuffle_rng, dropout_rng = [np.random.default_rng(s) for s in np.random.SeedSequence(config.train.seed).spawn(2)]
    sampler = TokenBucketSampler([(vocab.encode(s), vocab.encode(t)) for s, t in pairs], config.train.max_tokens)
    total = config.teacher.max_steps
    ctx = ForwardContext(train=True, rng=dropout_rng)

    logger.info(f"🚀 开始训练 AR 教师: steps={total}, pairs={len(pairs)}")
    running: List[float] = []
    for step, batch in enumerate(sampler.batches(shuffle_rng), start=1):
        if step > total:
            break
        binding = ParamBinding(params, Tape())
        loss = model.loss(binding, batch, config.train.label_smoothing, ctx)
        grads = binding.gradients(backward(loss))
        optimizer.step(params, grads, learning_rate(step, config.train, total))
        running.append(loss.item())
        if step % config.train.eval_interval == 0 or step == total:
            logger.info(f"📊 教师 step={step}/{total}, loss={np.mean(running):.4f}")
            running = []

    logger.info(f"✅ AR 教师训练完成, 事件统计: {error_handler.counts()}")
    return make_checkpoint(
        params,
        step=total,
        config=config_snapshot(config),
        vocab=vocab.itos,
        rng_state=rng_snapshot(shuffle=shuffle_rng, dropout=dropout_rng),
        kind=TEACHER_KIND,
    )


def load_teacher(checkpoint: Checkpoint) -> Tuple[TeacherModel, Vocab]:
    if checkpoint.manifest.kind != TEACHER_KIND:
        raise CheckpointError(f"不是教师检查点 (kind={checkpoint.manifest.kind})")
    config = config_from_snapshot(checkpoint.manifest.config)
    vocab = Vocab.from_full_list(checkpoint.manifest.vocab)
    return TeacherModel(config.model, config.teacher, len(vocab)), vocab


def teacher_decode(checkpoint: Checkpoint, src: Sequence[str], beam_size: int = 1) -> List[str]:
    model, vocab = load_teacher(checkpoint)
    ids = TeacherDecoder(model, checkpoint.params).decode(vocab.encode(src), beam_size)
    return vocab.decode(ids)


def distill(
    checkpoint: Checkpoint,
    pairs: Sequence[ParallelPair],
    beam_size: int,
    concurrency: Optional[ConcurrencyManager] = None,
    error_handler: Optional[ErrorHandler] = None,
) -> List[ParallelPair]:
    """
    序列级知识蒸馏：每个训练目标替换为教师对其源句的束搜索输出，源句不变

    空输出替换为单个 unk；单句失败同样输出 unk 并记入台账
    """
    model, vocab = load_teacher(checkpoint)
    decoder = TeacherDecoder(model, checkpoint.params)
    concurrency = concurrency or ConcurrencyManager.for_decode()
    error_handler = error_handler or ErrorHandler("distill")
    unk = [vocab.itos[UNK]]

    def make_task(src: List[str]):
        return lambda: vocab.decode(decoder.decode(vocab.encode(src), beam_size)) or unk

    logger.info(f"🚀 开始蒸馏: pairs={len(pairs)}, beam={beam_size}")
    results = concurrency.run([make_task(list(src)) for src, _ in pairs], expected=(NarMtlError,))
    targets = error_handler.collect(results, unk, ErrorHandler.DECODE_FAILED)
    distilled = [(list(src), tgt) for (src, _), tgt in zip(pairs, targets)]
    logger.info(f"✅ 蒸馏完成: {len(distilled)} 句, 事件统计: {error_handler.counts()}")
    return distilled
