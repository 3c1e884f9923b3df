"""评测指标"""

from .bleu import BleuResult, bleu, corpus_bleu, ngram_counts, sentence_stats
from .repetition import repetition_counts, repetition_rate
from .report import DEFAULT_BUCKETS, REPORT_KINDS, bucket_label, evaluate, length_bucket_report, write_records

__all__ = [
    "BleuResult",
    "bleu",
    "corpus_bleu",
    "ngram_counts",
    "sentence_stats",
    "repetition_counts",
    "repetition_rate",
    "DEFAULT_BUCKETS",
    "REPORT_KINDS",
    "bucket_label",
    "evaluate",
    "length_bucket_report",
    "write_records",
]
