"""
核心数据模型与配置
"""

from .models import (
    BlockConfig,
    CheckpointManifest,
    CTCStatus,
    DecodeConfig,
    DecodeMode,
    EvalRecord,
    ExperimentConfig,
    GlanceSchedule,
    GlancingConfig,
    LRSchedule,
    ManifestEntry,
    MetricRecord,
    MTLConfig,
    NARConfig,
    NARVariant,
    ParamCount,
    SyntheticTaskSpec,
    TaskType,
    TeacherConfig,
    TrainConfig,
)

__all__ = [
    "BlockConfig",
    "CheckpointManifest",
    "CTCStatus",
    "DecodeConfig",
    "DecodeMode",
    "EvalRecord",
    "ExperimentConfig",
    "GlanceSchedule",
    "GlancingConfig",
    "LRSchedule",
    "ManifestEntry",
    "MetricRecord",
    "MTLConfig",
    "NARConfig",
    "NARVariant",
    "ParamCount",
    "SyntheticTaskSpec",
    "TaskType",
    "TeacherConfig",
    "TrainConfig",
]
