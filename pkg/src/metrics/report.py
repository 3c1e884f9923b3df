"""
评测报告：BLEU、重复率、按参考长度分桶的 BLEU，输出为 JSONL 记录 {metric, value, bucket?, n_sentences}
"""

import json
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from src.core.models import MetricRecord
from src.metrics.bleu import SMOOTHING, corpus_bleu
from src.metrics.repetition import repetition_rate
from src.utils.error_handler import ConfigError, ContractError

logger = logging.getLogger(__name__)

Sentence = Sequence[str]
Bucket = Tuple[float, float]

# 左开右闭：(0,20], (20,40], (40,60], (60,∞)
DEFAULT_BUCKETS: List[Bucket] = [(0, 20), (20, 40), (40, 60), (60, math.inf)]

REPORT_KINDS = ("bleu", "repetition", "length-buckets")


def bucket_label(bucket: Bucket) -> str:
    low, high = bucket
    if math.isinf(high):
        return f">{int(low)}"
    return f"({int(low)},{int(high)}]"


def length_bucket_report(
    hypotheses: Sequence[Sentence],
    references: Sequence[Sentence],
    buckets: Sequence[Bucket] = DEFAULT_BUCKETS,
) -> List[MetricRecord]:
    """
    按参考长度分桶计算语料级 BLEU；空桶不出现在结果中

    Raises:
        ContractError: 句数不一致
    """
    if len(hypotheses) != len(references):
        raise ContractError(f"假设与参考句数不一致: {len(hypotheses)} vs {len(references)}")
    records: List[MetricRecord] = []
    for bucket in buckets:
        low, high = bucket
        members = [i for i, ref in enumerate(references) if low < len(ref) <= high]
        if not members:
            continue
        score = corpus_bleu([hypotheses[i] for i in members], [references[i] for i in members]).score
        records.append(MetricRecord(
            metric="bleu",
            value=score,
            bucket=bucket_label(bucket),
            n_sentences=len(members),
            metadata={"smoothing": SMOOTHING},
        ))
    return records


def evaluate(
    hypotheses: Sequence[Sentence],
    references: Sequence[Sentence],
    reports: Iterable[str] = REPORT_KINDS,
) -> List[MetricRecord]:
    """
    生成评测记录

    Args:
        hypotheses: 假设
        references: 参考
        reports: bleu / repetition / length-buckets 的子集

    Raises:
        ConfigError: 未知的报告类型
    """
    reports = list(reports)
    unknown = [r for r in reports if r not in REPORT_KINDS]
    if unknown:
        raise ConfigError(f"未知的报告类型 {unknown}; 可选: {', '.join(REPORT_KINDS)}")

    records: List[MetricRecord] = []
    n = len(hypotheses)
    if "bleu" in reports:
        result = corpus_bleu(hypotheses, references)
        records.append(MetricRecord(
            metric="bleu",
            value=result.score,
            n_sentences=n,
            metadata={
                "smoothing": result.smoothing,
                "precisions": result.precisions,
                "brevity_penalty": result.brevity_penalty,
                "sys_len": result.sys_len,
                "ref_len": result.ref_len,
            },
        ))
    if "repetition" in reports:
        records.append(MetricRecord(metric="repetition_rate", value=repetition_rate(hypotheses), n_sentences=n))
    if "length-buckets" in reports:
        records.extend(length_bucket_report(hypotheses, references))
    for record in records:
        bucket = f" [{record.bucket}]" if record.bucket else ""
        logger.info(f"📊 {record.metric}{bucket} = {record.value:.4f} (n={record.n_sentences})")
    return records


def write_records(path: Optional[Union[str, Path]], records: Sequence[MetricRecord]) -> str:
    """序列化为 JSONL；path 为 None 时只返回文本"""
    text = "".join(json.dumps(r.model_dump(exclude_none=True), ensure_ascii=False) + "\n" for r in records)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text
