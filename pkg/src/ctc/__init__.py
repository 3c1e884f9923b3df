"""CTC 损失、对齐与解码"""

from .ctc import (
    CTCLattice,
    CTCLossResult,
    UnrepresentableTargetError,
    collapse,
    ctc_beam_search,
    ctc_forward,
    ctc_greedy_decode,
    ctc_loss,
    ctc_loss_batch,
    ctc_viterbi_align,
    extend_target,
    is_representable,
    sequence_log_mass,
)

__all__ = [
    "CTCLattice",
    "CTCLossResult",
    "UnrepresentableTargetError",
    "collapse",
    "ctc_beam_search",
    "ctc_forward",
    "ctc_greedy_decode",
    "ctc_loss",
    "ctc_loss_batch",
    "ctc_viterbi_align",
    "extend_target",
    "is_representable",
    "sequence_log_mass",
]
