"""反向模式自动微分引擎"""

from . import ops
from .gradcheck import GradCheckResult, gradcheck
from .tensor import Tape, TapeNode, Tensor, backward, is_grad_enabled, logsumexp, no_grad

__all__ = [
    "ops",
    "Tape",
    "TapeNode",
    "Tensor",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "logsumexp",
    "gradcheck",
    "GradCheckResult",
]
