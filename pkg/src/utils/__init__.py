"""工具模块 - 并发控制、错误处理"""

from .concurrency import ConcurrencyManager
from .error_handler import (
    CheckpointError,
    ConfigError,
    ContractError,
    CorpusError,
    DimensionError,
    ErrorHandler,
    NarMtlError,
)

__all__ = [
    "ConcurrencyManager",
    "ErrorHandler",
    "NarMtlError",
    "ContractError",
    "DimensionError",
    "ConfigError",
    "CorpusError",
    "CheckpointError",
]
