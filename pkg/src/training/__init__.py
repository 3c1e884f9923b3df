"""训练：优化器、检查点、训练循环、AR 教师与蒸馏、NAR 解码"""

from .checkpoint import (
    Checkpoint,
    average_checkpoint_files,
    average_checkpoints,
    load_checkpoint,
    make_checkpoint,
    rng_snapshot,
    save_checkpoint,
)
from .decoding import NARDecoder
from .optimizer import AdamW, OptimState, learning_rate
from .teacher import TeacherDecoder, TeacherModel, distill, load_teacher, teacher_decode, teacher_train
from .trainer import NARTrainer, TrainResult, fixed_batch_losses, train

__all__ = [
    "Checkpoint",
    "average_checkpoint_files",
    "average_checkpoints",
    "load_checkpoint",
    "make_checkpoint",
    "rng_snapshot",
    "save_checkpoint",
    "NARDecoder",
    "AdamW",
    "OptimState",
    "learning_rate",
    "TeacherDecoder",
    "TeacherModel",
    "distill",
    "load_teacher",
    "teacher_decode",
    "teacher_train",
    "NARTrainer",
    "TrainResult",
    "fixed_batch_losses",
    "train",
]
