"""
弱 AR 解码头（多任务学习）

每个 NAR 解码层挂一个只有一层因果解码器的 AR 头，以该层隐状态作为唯一的 cross-attention memory，
teacher forcing 预测目标序列。AR 头只参与训练损失，推理前整体剥离。

参数命名：
- 共享参数：ar_heads.shared.*
- 不共享：ar_heads.{i}.*（i 从 1 开始，对应第 i 个 NAR 解码层）
- 输入嵌入与 NAR 的 decoder.embed_tokens 绑定，AR 头自身不持有嵌入
"""

import logging
import math
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tensor
from src.core.models import BlockConfig, CTCStatus, ExperimentConfig, MTLConfig, ParamCount
from src.data.batching import Batch
from src.data.vocab import BOS
from src.models.losses import label_smoothed_ce
from src.models.nar_model import DecoderTrace, NARModel, embed
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
from src.utils.error_handler import ConfigError, ContractError

logger = logging.getLogger(__name__)

HEAD_PREFIX = "ar_heads"
SHARED = "shared"
TARGET_EMBEDDING = "decoder.embed_tokens"


class WeakARHead:
    """
    单个弱 AR 头：ar_head_depth 层因果解码层 + 输出投影

    Attributes:
        prefix: 参数前缀（共享时所有头相同）
        config: Transformer 块配置
        depth: 解码层数（默认 1，>1 只用于深度消融）
        vocab_size: 词表大小
    """

    def __init__(self, prefix: str, config: BlockConfig, depth: int, vocab_size: int):
        self.prefix = prefix
        self.config = config
        self.depth = depth
        self.vocab_size = vocab_size

    def init_params(self, init: ParamInitializer) -> None:
        for k in range(self.depth):
            init_decoder_layer(init, f"{self.prefix}.layers.{k}", self.config)
        if self.config.pre_norm:
            init_layer_norm(init, f"{self.prefix}.final_norm", self.config.d_model)
        init_linear(init, f"{self.prefix}.output_projection", self.config.d_model, self.vocab_size)

    def forward(
        self,
        binding: ParamBinding,
        nar_hidden: Tensor,
        memory_lengths: np.ndarray,
        tgt_ids: np.ndarray,
        tgt_lengths: np.ndarray,
        ctx: ForwardContext = EVAL,
        stop_gradient: bool = False,
    ) -> Tensor:
        """
        teacher-forced 前向

        输入为右移一位（首位 bos）的目标嵌入 + 位置编码；memory 只有 nar_hidden，看不到编码器。

        Args:
            binding: 参数绑定
            nar_hidden: (B, T, d)，对应 NAR 解码层的输出
            memory_lengths: (B,)，NAR 解码长度（屏蔽 memory 中的 pad）
            tgt_ids: (B, n)，参考目标
            tgt_lengths: (B,)
            ctx: 前向模式
            stop_gradient: 为 True 时梯度不回传到 NAR 隐状态

        Returns:
            (B, n, V) 的 logits

        Raises:
            ContractError: 目标为空
        """
        tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
        tgt_lengths = np.asarray(tgt_lengths, dtype=np.int64)
        if tgt_ids.size == 0 or np.any(tgt_lengths < 1):
            raise ContractError("AR 头的目标序列不能为空")
        cfg = self.config
        n = tgt_ids.shape[1]
        shifted = np.concatenate([np.full((tgt_ids.shape[0], 1), BOS, dtype=np.int64), tgt_ids[:, :-1]], axis=1)

        x = embed(binding[TARGET_EMBEDDING], shifted, cfg.d_model)
        x = ops.dropout(x, cfg.dropout, ctx.rng, ctx.train)
        memory = ops.detach(nar_hidden) if stop_gradient else nar_hidden
        self_mask = combine_masks(causal_mask(n)[None, :, :], key_mask(tgt_lengths, n))
        cross_mask = key_mask(memory_lengths, memory.shape[1])

        p = binding.scope(self.prefix)
        for k in range(self.depth):
            x = decoder_layer(p.scope(f"layers.{k}"), x, memory, self_mask, cross_mask, cfg, ctx)
        if cfg.pre_norm:
            x = layer_norm(p.scope("final_norm"), x)
        return linear(p.scope("output_projection"), x)


class MultiTaskHeads:
    """N 个 NAR 解码层对应的 AR 头集合"""

    def __init__(self, n_layers: int, config: MTLConfig, block: BlockConfig, vocab_size: int):
        if n_layers < 1:
            raise ContractError(f"NAR 解码层数必须 >= 1, 实际为 {n_layers}")
        self.n_layers = n_layers
        self.config = config
        self.block = block
        self.vocab_size = vocab_size
        self.heads: Dict[int, WeakARHead] = {
            i: WeakARHead(head_prefix(i, config.share_params), block, config.ar_head_depth, vocab_size)
            for i in range(1, n_layers + 1)
        }

    @property
    def active(self) -> bool:
        """λ=1 时 AR 损失权重为 0，不运行 AR 头"""
        return self.config.enabled and self.config.lambda_ < 1.0

    def init_params(self, params: ModelParams, seed: int) -> ModelParams:
        init = ParamInitializer(params, seed)
        seen = set()
        for head in self.heads.values():
            if head.prefix in seen:
                continue
            head.init_params(init)
            seen.add(head.prefix)
        logger.info(
            f"🧩 初始化 AR 头: N={self.n_layers}, share={self.config.share_params}, "
            f"depth={self.config.ar_head_depth}, params={params.count(HEAD_PREFIX + '.')}"
        )
        return params

    def head_losses(
        self,
        binding: ParamBinding,
        trace: DecoderTrace,
        batch: Batch,
        selected: Iterable[int],
        label_smoothing: float,
        ctx: ForwardContext = EVAL,
        statuses: Optional[Sequence[CTCStatus]] = None,
    ) -> Dict[int, Tensor]:
        """
        被选中层的 AR 头 label-smoothed CE；目标始终是参考序列（CTC 折叠前的原始目标）

        statuses 为 CTC 损失的逐样本状态，非 OK 的样本整行不计入 AR 头损失。
        """
        losses: Dict[int, Tensor] = {}
        valid = ~batch.tgt_pad_mask
        if statuses:
            kept = np.array([s == CTCStatus.OK for s in statuses], dtype=bool)
            valid = valid & kept[:, None]
        for layer in selected:
            logits = self.heads[layer].forward(
                binding,
                trace.hidden[layer - 1],
                trace.lengths,
                batch.tgt_ids,
                batch.tgt_lengths,
                ctx,
                stop_gradient=self.config.stop_gradient,
            )
            losses[layer] = label_smoothed_ce(logits, batch.tgt_ids, valid, label_smoothing)
        return losses


def head_prefix(layer: int, share_params: bool) -> str:
    return f"{HEAD_PREFIX}.{SHARED}" if share_params else f"{HEAD_PREFIX}.{layer}"


def select_heads(n_layers: int, rng: np.random.Generator, layer_dropout: bool = True) -> List[int]:
    """
    随机选择 ceil(N/2) 个 AR 头（无放回、均匀），返回升序的层号（从 1 开始）

    layer_dropout=False 时返回全部 1..N，且不消耗随机数
    """
    if n_layers < 1:
        raise ContractError(f"N 必须 >= 1, 实际为 {n_layers}")
    if not layer_dropout:
        return list(range(1, n_layers + 1))
    k = math.ceil(n_layers / 2)
    chosen = rng.choice(n_layers, size=k, replace=False)
    return sorted(int(i) + 1 for i in chosen)


def all_selections(n_layers: int) -> List[List[int]]:
    """所有 ceil(N/2) 子集（用于验证无偏性）"""
    k = math.ceil(n_layers / 2)
    return [list(c) for c in combinations(range(1, n_layers + 1), k)]


LossLike = Union[Tensor, float]


def mtl_loss(nar_loss: LossLike, ar_losses: Mapping[int, LossLike], lambda_: float, n_layers: int) -> Tensor:
    """
    L = λ·L_NAR + (1-λ)·(N/|S|)·Σ_{i∈S} L_AR^(i)

    Args:
        nar_loss: NAR 损失
        ar_losses: {层号: AR 头损失}，只包含被选中的层
        lambda_: λ ∈ [0, 1]
        n_layers: N

    Raises:
        ConfigError: λ 不在 [0, 1]
        ContractError: ar_losses 含非法层号
    """
    if not 0.0 <= lambda_ <= 1.0:
        raise ConfigError(f"mtl.lambda 必须在 [0, 1] 内, 实际为 {lambda_}")
    bad = [i for i in ar_losses if not 1 <= i <= n_layers]
    if bad:
        raise ContractError(f"AR 损失的层号超出 1..{n_layers}: {bad}")
    nar_loss = ops.as_tensor(nar_loss)
    if lambda_ == 1.0 or not ar_losses:
        return nar_loss

    total = None
    for layer in sorted(ar_losses):
        term = ops.as_tensor(ar_losses[layer])
        total = term if total is None else ops.add(total, term)
    weight = (1.0 - lambda_) * n_layers / len(ar_losses)
    return ops.add(ops.scale(nar_loss, lambda_), ops.scale(total, weight))


def strip_heads(params: ModelParams) -> ModelParams:
    """删除全部 AR 头参数（推理只用 NAR 解码器）"""
    return params.filter(lambda name: not name.startswith(HEAD_PREFIX + "."))


def count_params(params: ModelParams) -> ParamCount:
    """NAR / AR 头 / 总参数量；AR 头与 NAR 绑定的目标嵌入计入 NAR"""
    ar = params.count(HEAD_PREFIX + ".")
    total = params.count()
    return ParamCount(nar=total - ar, ar_heads=ar, total=total)


def build_params(config: ExperimentConfig, vocab_size: int) -> ModelParams:
    """按实验配置初始化 NAR 参数，启用 MTL 时再挂上 AR 头（种子为 train.seed）"""
    model = NARModel(config.model, vocab_size)
    params = model.init_params(config.train.seed)
    if config.mtl.enabled:
        heads = MultiTaskHeads(model.n_layers, config.mtl, config.model.block(), vocab_size)
        heads.init_params(params, config.train.seed)
    return params


def count_configured_params(config: ExperimentConfig, vocab_size: int) -> ParamCount:
    return count_params(build_params(config, vocab_size))
