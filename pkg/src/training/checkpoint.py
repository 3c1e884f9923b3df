"""
检查点读写与平均

文件格式：第一行是 JSON manifest（参数名、形状、字节偏移、配置快照、随机数状态、步数），
换行之后是按 manifest 顺序拼接的小端 float64 payload。
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from src.core.models import CheckpointManifest, ManifestEntry
from src.nn.params import ModelParams
from src.utils.error_handler import CheckpointError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
PAYLOAD_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    manifest: CheckpointManifest
    params: ModelParams

    def same_as(self, other: "Checkpoint") -> bool:
        """manifest 与参数逐位相等"""
        return self.manifest == other.manifest and self.params.equal(other.params)


def _stringify_ints(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _stringify_ints(v) for k, v in value.items()}
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return value


def rng_snapshot(**generators: np.random.Generator) -> Dict[str, Any]:
    """随机数发生器状态快照（128 位整数以字符串保存）"""
    return {name: _stringify_ints(gen.bit_generator.state) for name, gen in generators.items()}


def manifest_entries(params: ModelParams) -> List[ManifestEntry]:
    entries: List[ManifestEntry] = []
    offset = 0
    for name, arr in params.items():
        entries.append(ManifestEntry(name=name, shape=list(arr.shape), offset=offset))
        offset += arr.size * PAYLOAD_DTYPE.itemsize
    return entries


def payload_bytes(params: ModelParams) -> bytes:
    return b"".join(np.ascontiguousarray(arr, dtype=PAYLOAD_DTYPE).tobytes() for _, arr in params.items())


def make_checkpoint(
    params: ModelParams,
    step: int = 0,
    config: Optional[Dict[str, Any]] = None,
    vocab: Sequence[str] = (),
    rng_state: Optional[Dict[str, Any]] = None,
    dev_bleu: Optional[float] = None,
    kind: str = "nar",
) -> Checkpoint:
    manifest = CheckpointManifest(
        kind=kind,
        step=step,
        config=config or {},
        vocab=list(vocab),
        rng_state=rng_state or {},
        entries=manifest_entries(params),
        dev_bleu=dev_bleu,
    )
    return Checkpoint(manifest=manifest, params=params.copy())


def save_checkpoint(path: PathLike, checkpoint: Checkpoint) -> Path:
    """写出检查点；manifest 的 entries 按当前参数重新生成"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = checkpoint.manifest.model_copy(update={"entries": manifest_entries(checkpoint.params)})
    header = manifest.model_dump_json().encode("utf-8")
    with path.open("wb") as f:
        f.write(header)
        f.write(b"\n")
        f.write(payload_bytes(checkpoint.params))
    logger.info(f"💾 保存检查点: {path} (step={manifest.step}, params={checkpoint.params.count()})")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    """
    读取检查点

    Raises:
        CheckpointError: 文件缺失、manifest 无法解析或 payload 长度不符
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"检查点文件不存在: {path}")
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"检查点缺少 manifest 行: {path}")
    try:
        manifest = CheckpointManifest.model_validate(json.loads(raw[:newline].decode("utf-8")))
    except (ValueError, UnicodeDecodeError) as e:
        raise CheckpointError(f"检查点 manifest 非法: {path}: {e}") from e

    payload = memoryview(raw)[newline + 1:]
    expected = sum(entry.nbytes for entry in manifest.entries)
    if len(payload) != expected:
        raise CheckpointError(f"检查点 payload 长度不符: {path}: 期望 {expected} 字节, 实际 {len(payload)} 字节")

    params = ModelParams()
    for entry in manifest.entries:
        if entry.dtype != PAYLOAD_DTYPE.str:
            raise CheckpointError(f"不支持的 dtype {entry.dtype}（参数 {entry.name}）")
        chunk = payload[entry.offset: entry.offset + entry.nbytes]
        params.add(entry.name, np.frombuffer(chunk, dtype=PAYLOAD_DTYPE).reshape(entry.shape).copy())
    return Checkpoint(manifest=manifest, params=params)


def _check_compatible(reference: Checkpoint, other: Checkpoint, label: str) -> None:
    ref_shapes = list(reference.params.shapes().items())
    other_shapes = list(other.params.shapes().items())
    for (name_a, shape_a), (name_b, shape_b) in zip(ref_shapes, other_shapes):
        if name_a != name_b:
            raise CheckpointError(f"{label}: 参数不一致, 第一个不同的参数: {name_a} vs {name_b}")
        if shape_a != shape_b:
            raise CheckpointError(f"{label}: 参数 {name_a} 形状不一致: {shape_a} vs {shape_b}")
    if len(ref_shapes) != len(other_shapes):
        longer = ref_shapes if len(ref_shapes) > len(other_shapes) else other_shapes
        missing = longer[min(len(ref_shapes), len(other_shapes))][0]
        raise CheckpointError(f"{label}: 参数数量不一致, 第一个不同的参数: {missing}")


def average_checkpoints(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """
    逐元素平均 k 个检查点的参数

    以第一个检查点为锚点计算 θ_0 + Σ(θ_i - θ_0)/k，k 个相同检查点的平均逐位等于其本身。

    Raises:
        CheckpointError: 列表为空，或参数名/形状不一致（错误信息给出第一个不同的参数）
    """
    if not checkpoints:
        raise CheckpointError("没有可平均的检查点")
    anchor = checkpoints[0]
    for i, ckpt in enumerate(checkpoints[1:], start=2):
        _check_compatible(anchor, ckpt, f"第 1 个与第 {i} 个检查点")

    k = len(checkpoints)
    averaged = ModelParams()
    for name, base in anchor.params.items():
        delta = np.zeros_like(base)
        for ckpt in checkpoints[1:]:
            delta += ckpt.params[name] - base
        averaged.add(name, base + delta / k)

    manifest = anchor.manifest.model_copy(
        update={
            "step": max(c.manifest.step for c in checkpoints),
            "dev_bleu": None,
            "entries": manifest_entries(averaged),
        }
    )
    logger.info(f"🧮 平均 {k} 个检查点")
    return Checkpoint(manifest=manifest, params=averaged)


def average_checkpoint_files(paths: Sequence[PathLike]) -> Checkpoint:
    checkpoints = [load_checkpoint(p) for p in paths]
    result = average_checkpoints(checkpoints)
    result.manifest = result.manifest.model_copy(update={"averaged_from": [str(p) for p in paths]})
    return result
