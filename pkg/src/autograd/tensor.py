"""
反向模式自动微分的核心结构
Tensor（float64 稠密数组）+ Tape（按创建顺序记录的节点，define-by-run）
"""

import contextlib
import contextvars
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.error_handler import ContractError

logger = logging.getLogger(__name__)

# vjp: 输出梯度 -> 各输入梯度（不可微的输入返回 None）
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """在该上下文内的运算不记录到 tape（glancing 的第一遍、解码）"""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """
    n 维 float64 张量

    Attributes:
        data: 行主序的 numpy 数组
        requires_grad: 是否参与求导
        node: tape 节点编号（常量为 None）
        tape: 所属 tape
    """

    __slots__ = ("data", "requires_grad", "node", "tape")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        node: Optional[int] = None,
        tape: Optional["Tape"] = None,
    ):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() 需要单元素张量, 实际形状 {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

    # 运算符重载转发到 ops，避免循环导入
    def __add__(self, other):
        from src.autograd import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from src.autograd import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.autograd import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from src.autograd import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from src.autograd import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from src.autograd import ops
        return ops.matmul(self, other)


@dataclass
class TapeNode:
    """tape 上的一个节点；inputs 中的编号都小于自身编号"""
    kind: str
    inputs: Tuple[Optional[int], ...]
    vjp: Optional[VJP] = None
    shape: Tuple[int, ...] = field(default_factory=tuple)


class Tape:
    """
    计算记录带

    每个训练步新建一条；节点的拓扑序就是创建顺序
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, data, kind: str = "leaf") -> Tensor:
        """登记一个需要梯度的叶子（参数或被求导的输入）"""
        tensor = Tensor(data, requires_grad=True, tape=self)
        tensor.node = len(self.nodes)
        self.nodes.append(TapeNode(kind=kind, inputs=(), shape=tensor.shape))
        return tensor

    def record(
        self,
        kind: str,
        inputs: Sequence[Tensor],
        out: np.ndarray,
        vjp: VJP,
    ) -> Tensor:
        """记录一次运算；输入都不需要梯度或处于 no_grad 时返回常量"""
        if not is_grad_enabled() or not any(t.requires_grad for t in inputs):
            return Tensor(out)
        input_ids = tuple(t.node if t.requires_grad else None for t in inputs)
        node_id = len(self.nodes)
        self.nodes.append(TapeNode(kind=kind, inputs=input_ids, vjp=vjp, shape=out.shape))
        return Tensor(out, requires_grad=True, node=node_id, tape=self)


def find_tape(tensors: Iterable[Tensor]) -> Optional[Tape]:
    for t in tensors:
        if t.requires_grad and t.tape is not None:
            return t.tape
    return None


def backward(loss: Tensor) -> Dict[int, Tensor]:
    """
    从标量 loss 反向累积梯度

    Args:
        loss: 标量张量

    Returns:
        {节点编号: 梯度张量}，包含所有收到梯度的节点

    Raises:
        ContractError: loss 不是标量或不在任何 tape 上
    """
    if loss.data.size != 1:
        raise ContractError(f"backward 需要标量 loss, 实际形状 {loss.shape}")
    tape = loss.tape
    if tape is None or loss.node is None or len(tape) == 0:
        raise ContractError("loss 不在任何 tape 上（是否处于 no_grad 或没有叶子参数？）")

    grads: Dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for node_id in range(loss.node, -1, -1):
        g = grads.get(node_id)
        if g is None:
            continue
        node = tape.nodes[node_id]
        if node.vjp is None:
            continue
        input_grads = node.vjp(g)
        for input_id, ig in zip(node.inputs, input_grads):
            if input_id is None or ig is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + ig
            else:
                grads[input_id] = np.array(ig, dtype=np.float64, copy=True)

    return {k: Tensor(v) for k, v in grads.items()}


def logsumexp(xs: Sequence[float]) -> float:
    """
    log(Σ exp(x_i))，以最大值平移；空输入返回 -inf，-inf 是单位元
    """
    if len(xs) == 0:
        return -math.inf
    m = max(xs)
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(math.exp(x - m) for x in xs))
