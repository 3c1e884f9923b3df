"""
可微分基本运算

每个运算先在 numpy 上算出前向结果，再把对应的 vjp 记录到输入所在的 tape。
所有输入都是常量（或处于 no_grad）时直接返回常量张量。
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.autograd.tensor import Tensor, find_tape
from src.utils.error_handler import ContractError, DimensionError

Axis = Union[None, int, Tuple[int, ...]]
TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(kind: str, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
    tape = find_tape(inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(kind, inputs, out, vjp)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度求和回原形状"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# ==================== 逐元素运算 ====================

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    out = a.data + b.data
    return _record("add", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    out = a.data - b.data
    return _record("sub", (a, b), out, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", (a, b), out, vjp)


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * factor
    return _record("scale", (x,), out, lambda g: (g * factor,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, 0.0)
    return _record("relu", (x,), out, lambda g: (np.where(positive, g, 0.0),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _record("exp", (x,), out, lambda g: (g * out,))


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """mask 为 True 的位置填入 value（注意力中填 -inf）"""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(mask, value, x.data)
    return _record("masked_fill", (x,), out, lambda g: (np.where(mask, 0.0, g),))


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)


# ==================== 矩阵与形状 ====================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    矩阵乘法（支持前导 batch 维广播）

    Raises:
        DimensionError: 内维不相等
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul", a.shape, b.shape)
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), out, vjp)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return _record("transpose", (x,), out, lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape", original, tuple(shape)) from None
    return _record("reshape", (x,), out, lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat 需要至少一个输入")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat", *[t.shape for t in tensors]) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _record("concat", tensors, out, lambda g: tuple(np.split(g, splits, axis=axis)))


def _expand_grad(g: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)) if g.ndim else g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    shape = x.shape
    return _record("sum", (x,), np.asarray(out), lambda g: (_expand_grad(g, shape, axis, keepdims).copy(),))


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ==================== 索引 ====================

def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """按 id 取嵌入行；梯度 scatter 回对应的行"""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record("embedding", (table,), out, vjp)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """x: (B, m, d), index: (B, T) -> (B, T, d)，out[b, t] = x[b, index[b, t]]"""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 3 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise DimensionError("gather_rows", x.shape, index.shape)
    batch = np.arange(x.shape[0])[:, None]
    out = x.data[batch, index]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.broadcast_to(batch, index.shape), index), g)
        return (gx,)

    return _record("gather_rows", (x,), out, vjp)


def pick(x: Tensor, ids: np.ndarray) -> Tensor:
    """x: (..., V), ids: (...) -> (...)，取每个位置 ids 对应的值"""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.shape[:-1]:
        raise DimensionError("pick", x.shape, ids.shape)
    out = np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, ids[..., None], g[..., None], axis=-1)
        return (gx,)

    return _record("pick", (x,), out, vjp)


# ==================== 归一化 ====================

def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """最大值平移的 log-softmax"""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _record("log_softmax", (x,), out, vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record("softmax", (x,), out, vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """最后一维上的 layer normalization，带可学习的 gain / bias"""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        return dx, dgain, dbias

    return _record("layer_norm", (x, gain, bias), out, vjp)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """训练模式下按 p 随机置零并放大 1/(1-p)；评估模式为恒等映射"""
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ContractError("训练模式的 dropout 需要随机数生成器")
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return mul(x, keep)
