"""
工作流模块
多次训练编排的实验工作流
"""

from .ar_depth_ablation import AblationRun, AblationSummary, ARDepthAblation, DepthSummary

__all__ = [
    "AblationRun",
    "AblationSummary",
    "ARDepthAblation",
    "DepthSummary",
]
