"""
模型参数集合

ModelParams 保存所有命名参数（float64 numpy 数组，按登记顺序）；
ParamBinding 在每个训练步把它们登记为 tape 叶子（推理时作为常量）。
"""

import logging
import math
import zlib
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.autograd.tensor import Tape, Tensor
from src.utils.error_handler import ContractError

logger = logging.getLogger(__name__)


class ModelParams:
    """有序的命名参数集合（编码器 / NAR 解码器 / AR 头 / 教师模型）"""

    def __init__(self, arrays: Optional[Dict[str, np.ndarray]] = None):
        self._arrays: Dict[str, np.ndarray] = {}
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self._arrays:
            raise ContractError(f"参数重复登记: {name}")
        self._arrays[name] = np.ascontiguousarray(array, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._arrays[name]
        except KeyError:
            raise ContractError(f"参数不存在: {name}") from None

    def __setitem__(self, name: str, array: np.ndarray) -> None:
        if name not in self._arrays:
            raise ContractError(f"参数不存在: {name}")
        if array.shape != self._arrays[name].shape:
            raise ContractError(f"参数 {name} 形状不一致: {self._arrays[name].shape} vs {array.shape}")
        self._arrays[name] = np.ascontiguousarray(array, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> List[str]:
        return list(self._arrays)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._arrays.items())

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: arr.shape for name, arr in self._arrays.items()}

    def count(self, prefix: Optional[str] = None) -> int:
        """参数标量总数；prefix 给定时只统计该前缀下的参数"""
        return int(sum(
            arr.size for name, arr in self._arrays.items()
            if prefix is None or name.startswith(prefix)
        ))

    def filter(self, keep: Callable[[str], bool]) -> "ModelParams":
        return ModelParams({name: arr.copy() for name, arr in self._arrays.items() if keep(name)})

    def copy(self) -> "ModelParams":
        return self.filter(lambda _: True)

    def equal(self, other: "ModelParams") -> bool:
        """逐位相等（名称、顺序、形状、数值）"""
        if self.names() != other.names():
            return False
        return all(
            arr.shape == other[name].shape and arr.tobytes() == other[name].tobytes()
            for name, arr in self._arrays.items()
        )


class ParamInitializer:
    """
    参数初始化器

    每个参数的随机数由 (seed, crc32(name)) 决定，
    因此某一组参数的初值与模型中是否存在其它参数（例如 AR 头）无关。
    """

    def __init__(self, params: ModelParams, seed: int):
        self.params = params
        self.seed = seed

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def xavier(self, name: str, shape: Tuple[int, int]) -> None:
        fan_in, fan_out = shape[0], shape[-1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        self.params.add(name, self._rng(name).uniform(-limit, limit, size=shape))

    def normal(self, name: str, shape: Tuple[int, ...], std: float) -> None:
        self.params.add(name, self._rng(name).normal(0.0, std, size=shape))

    def zeros(self, name: str, shape: Tuple[int, ...]) -> None:
        self.params.add(name, np.zeros(shape))

    def ones(self, name: str, shape: Tuple[int, ...]) -> None:
        self.params.add(name, np.ones(shape))


class ParamBinding:
    """
    把 ModelParams 绑定到一条 tape

    同名参数在一个训练步内只登记一次叶子，多处使用（例如共享的 AR 头）的梯度会自动累加。
    tape 为 None 时返回常量张量（推理）。
    """

    def __init__(self, params: ModelParams, tape: Optional[Tape] = None):
        self.params = params
        self.tape = tape
        self._bound: Dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        tensor = self._bound.get(name)
        if tensor is None:
            array = self.params[name]
            tensor = self.tape.leaf(array, kind=f"param:{name}") if self.tape is not None else Tensor(array)
            self._bound[name] = tensor
        return tensor

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)

    def bound_names(self) -> List[str]:
        return list(self._bound)

    def gradients(self, grad_map: Dict[int, Tensor]) -> Dict[str, np.ndarray]:
        """把 backward() 的结果映射回参数名；未参与计算的参数不出现"""
        grads: Dict[str, np.ndarray] = {}
        for name, tensor in self._bound.items():
            if tensor.node is not None and tensor.node in grad_map:
                grads[name] = grad_map[tensor.node].data
        return grads


class ParamScope:
    """带前缀的参数视图，例如 scope("encoder.layers.0")["self_attn.q.weight"]"""

    def __init__(self, binding: ParamBinding, prefix: str):
        self.binding = binding
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.binding[f"{self.prefix}.{name}"]

    def scope(self, sub: str) -> "ParamScope":
        return ParamScope(self.binding, f"{self.prefix}.{sub}")
