"""
NAR 推理解码（只用 NAR 解码器，AR 头不参与）

vanilla：预测长度后逐位置 argmax；ctc：greedy 折叠或前缀束搜索。
逐句解码，句子之间通过 ConcurrencyManager 并行，每个任务只读同一份参数快照。
"""

import logging
from typing import List, Optional, Sequence

import numpy as np

from src.core.models import DecodeMode, NARConfig, NARVariant
from src.ctc.ctc import ctc_beam_search, ctc_greedy_decode
from src.data.vocab import BLANK, BOS, EOS, PAD, UNK, Vocab
from src.models.nar_model import NARModel
from src.nn.params import ModelParams
from src.utils.concurrency import ConcurrencyManager
from src.utils.error_handler import ContractError, ErrorHandler, NarMtlError

logger = logging.getLogger(__name__)

Sentence = List[str]
_STRIPPED_IDS = {PAD, BOS, EOS, BLANK}


class NARDecoder:
    """
    NAR 解码器

    Attributes:
        model: NAR 模型结构
        params: 参数快照（可以包含 AR 头，解码不会读取它们）
        vocab: 词表
    """

    def __init__(
        self,
        config: NARConfig,
        params: ModelParams,
        vocab: Vocab,
        concurrency: Optional[ConcurrencyManager] = None,
        error_handler: Optional[ErrorHandler] = None,
    ):
        self.model = NARModel(config, len(vocab))
        self.params = params
        self.vocab = vocab
        self.concurrency = concurrency or ConcurrencyManager.for_decode()
        self.error_handler = error_handler or ErrorHandler("decode")

    def decode_ids(self, src_ids: Sequence[int], mode: DecodeMode = DecodeMode.GREEDY, beam_size: int = 1) -> List[int]:
        """
        解码一个源句，返回去掉特殊符号后的 id；空输出替换为单个 unk

        Raises:
            ContractError: 源句为空
        """
        if len(src_ids) == 0:
            raise ContractError("源句不能为空")
        log_probs = self.model.infer_log_probs(self.params, src_ids)
        if self.model.variant == NARVariant.CTC:
            if mode == DecodeMode.BEAM:
                ids = ctc_beam_search(log_probs, beam_size)
            else:
                ids = ctc_greedy_decode(log_probs)
        else:
            ids = np.argmax(log_probs, axis=-1).tolist()
        ids = [int(i) for i in ids if int(i) not in _STRIPPED_IDS]
        return ids or [UNK]

    def decode_tokens(self, src: Sentence, mode: DecodeMode = DecodeMode.GREEDY, beam_size: int = 1) -> Sentence:
        return self.vocab.decode(self.decode_ids(self.vocab.encode(src), mode, beam_size))

    def decode_corpus(
        self,
        sources: Sequence[Sentence],
        mode: DecodeMode = DecodeMode.GREEDY,
        beam_size: int = 1,
    ) -> List[Sentence]:
        """
        逐句并行解码；单句失败（例如空源句）记入台账并输出 unk

        Returns:
            与 sources 等长的假设列表
        """
        if mode == DecodeMode.BEAM and self.model.variant == NARVariant.VANILLA:
            logger.warning("⚠️ vanilla NAR 不支持束搜索，使用 greedy 解码")
            mode = DecodeMode.GREEDY

        def make_task(src: Sentence):
            return lambda: self.decode_tokens(src, mode, beam_size)

        logger.info(f"🔎 解码 {len(sources)} 句: variant={self.model.variant.value}, mode={mode.value}, beam={beam_size}")
        results = self.concurrency.run([make_task(src) for src in sources], expected=(NarMtlError,))
        return self.error_handler.collect(results, [self.vocab.itos[UNK]], ErrorHandler.DECODE_FAILED)
