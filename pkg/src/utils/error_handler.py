"""
错误处理器
统一的异常层级 + 训练/解码过程中的事件（incident）台账
"""

import logging
import threading
from collections import Counter
from typing import Any, Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)


class NarMtlError(Exception):
    """项目内所有可预期错误的基类"""
    pass


class ContractError(NarMtlError):
    """前置条件被违反（空输入、非标量 loss 等）"""
    pass


class DimensionError(ContractError):
    """张量形状不匹配"""

    def __init__(self, op: str, *shapes: Tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: 维度不匹配 {joined}")


class ConfigError(NarMtlError):
    """配置非法或包含未知键"""
    pass


class CorpusError(NarMtlError):
    """语料读取错误（行数不一致、文件缺失）"""
    pass


class CheckpointError(NarMtlError):
    """检查点格式错误或 manifest 不一致"""
    pass


class ErrorHandler:
    """
    统一错误处理器

    功能：
    1. 记录可恢复事件（跳过的非有限梯度步、不可表示的 CTC 样本、空行等）
    2. 汇总事件计数，写入指标日志

    解码线程会并发调用 record，计数与明细的更新在锁内完成。
    """

    # 事件类型
    NON_FINITE_GRAD = "non_finite_grad"
    UNREPRESENTABLE_CTC = "unrepresentable_ctc"
    GLANCE_SKIPPED = "glance_skipped"
    EMPTY_LINE = "empty_line"
    DECODE_FAILED = "decode_failed"

    # 每类事件最多保留的明细条数
    MAX_DETAILS = 50

    def __init__(self, name: str = "run", max_details: Optional[int] = None):
        """
        初始化错误处理器

        Args:
            name: 台账名称（仅用于日志）
            max_details: 每类事件保留的明细上限
        """
        self.name = name
        self.max_details = max_details if max_details is not None else self.MAX_DETAILS
        self._counts: Counter = Counter()
        self._details: Dict[str, List[str]] = {}
        self._lock = threading.Lock()

    def record(self, kind: str, detail: str = "", level: int = logging.WARNING) -> None:
        """
        记录一次事件

        Args:
            kind: 事件类型
            detail: 事件描述
            level: 日志级别
        """
        with self._lock:
            self._counts[kind] += 1
            total = self._counts[kind]
            bucket = self._details.setdefault(kind, [])
            if len(bucket) < self.max_details:
                bucket.append(detail)
        logger.log(level, f"⚠️ [{self.name}] {kind}: {detail} (累计 {total} 次)")

    def count(self, kind: str) -> int:
        with self._lock:
            return self._counts[kind]

    def counts(self) -> Dict[str, int]:
        """返回全部事件计数（按类型排序，便于写日志）"""
        with self._lock:
            return {k: self._counts[k] for k in sorted(self._counts)}

    def details(self, kind: str) -> List[str]:
        with self._lock:
            return list(self._details.get(kind, []))

    def collect(self, results: List[Dict[str, Any]], default: Any, kind: str = DECODE_FAILED) -> List[Any]:
        """
        展开 ConcurrencyManager 的隔离执行结果：失败项记入台账并替换为 default

        Args:
            results: execute_batch_with_isolation 的返回值
            default: 失败项的替代值
            kind: 记入台账的事件类型
        """
        out: List[Any] = []
        for i, r in enumerate(results):
            if r["success"]:
                out.append(r["data"])
            else:
                self.record(kind, f"第 {i} 项: {r['error_type']}: {r['error']}")
                out.append(default)
        return out
