"""
nar-mtl 命令行入口
合成数据、训练、AR 教师与蒸馏、解码、评测、检查点平均、AR 深度消融
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pythonjsonlogger import jsonlogger

from src.core.config import config_from_snapshot, dump_config, load_config, parse_flat, runtime_settings, with_overrides
from src.core.models import DecodeMode, ExperimentConfig, SyntheticTaskSpec, TaskType
from src.data.corpus import ParallelPair, load_split, read_tokenized, save_corpus, write_tokenized
from src.data.synthetic import write_splits
from src.data.vocab import Vocab, build_vocab
from src.metrics.report import REPORT_KINDS, evaluate, write_records
from src.mtl.heads import count_configured_params, strip_heads
from src.training.checkpoint import average_checkpoint_files, load_checkpoint, save_checkpoint
from src.training.decoding import NARDecoder
from src.training.teacher import TEACHER_KIND, distill, teacher_train
from src.training.trainer import train
from src.utils.concurrency import ConcurrencyManager
from src.utils.error_handler import CheckpointError, ConfigError, CorpusError, ErrorHandler, NarMtlError
from src.workflows.ar_depth_ablation import ARDepthAblation

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
VOCAB_FILE = "vocab.txt"


def setup_logging(level: Optional[str] = None, json_path: Optional[str] = None) -> None:
    """配置日志；设置 log_json_path 时额外写一份 JSON 行日志"""
    level = (level or runtime_settings.log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT, force=True)
    json_path = json_path or runtime_settings.log_json_path
    if json_path:
        handler = logging.FileHandler(json_path, encoding="utf-8")
        handler.setFormatter(jsonlogger.JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
        logging.getLogger().addHandler(handler)


# ==================== 公共辅助 ====================

def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(getattr(args, "config", None))
    overrides = getattr(args, "set", None) or []
    if overrides:
        config = with_overrides(config, parse_flat("\n".join(overrides)))
    return config


def _training_vocab(pairs: Sequence[ParallelPair]) -> Vocab:
    return build_vocab([src for src, _ in pairs] + [tgt for _, tgt in pairs])


def _load_dev(data_dir: Path, error_handler: ErrorHandler) -> List[ParallelPair]:
    if not (data_dir / "dev.src").is_file():
        logger.warning(f"⚠️ {data_dir} 下没有 dev 划分")
        return []
    return load_split(data_dir, "dev", error_handler)


# ==================== 子命令 ====================

def cmd_gen_data(args: argparse.Namespace) -> None:
    spec = SyntheticTaskSpec(
        task=TaskType(args.task),
        vocab_size=args.vocab_size,
        len_min=args.len_min,
        len_max=args.len_max,
        n_pairs=args.n,
        seed=args.seed,
        source_repeats=args.source_repeats,
    )
    write_splits(spec, args.out, n_eval=args.n_eval)


def cmd_train(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    error_handler = ErrorHandler("train")
    data_dir = Path(args.data)
    train_pairs = load_split(data_dir, "train", error_handler)
    vocab = _training_vocab(train_pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / VOCAB_FILE)
    result = train(config, vocab, train_pairs, _load_dev(data_dir, error_handler), out, error_handler)
    print(f"last={result.last}\naveraged={result.averaged}\nbest_dev_bleu={result.best_bleu}")


def cmd_teacher_train(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    error_handler = ErrorHandler("teacher")
    pairs = load_split(args.data, "train", error_handler)
    checkpoint = teacher_train(config, _training_vocab(pairs), pairs, error_handler)
    path = save_checkpoint(args.out, checkpoint)
    print(f"teacher={path}")


def cmd_distill(args: argparse.Namespace) -> None:
    data_dir, out = Path(args.data), Path(args.out)
    teacher = load_checkpoint(args.teacher)
    beam = args.beam or config_from_snapshot(teacher.manifest.config).teacher.beam_size
    error_handler = ErrorHandler("distill")
    pairs = load_split(data_dir, args.split, error_handler)
    distilled = distill(teacher, pairs, beam, ConcurrencyManager.for_decode(), error_handler)
    save_corpus(out / args.split, distilled)
    # dev / test 原样复制，输出目录可以直接作为 train --data
    for name in ("dev", "test"):
        if name != args.split and (data_dir / f"{name}.src").is_file():
            save_corpus(out / name, load_split(data_dir, name, error_handler))
    print(f"distilled={out / args.split}.src/.tgt ({len(distilled)} 句)")


def cmd_decode(args: argparse.Namespace) -> None:
    checkpoint = load_checkpoint(args.ckpt)
    if checkpoint.manifest.kind == TEACHER_KIND:
        raise CheckpointError(f"{args.ckpt} 是 AR 教师检查点，decode 需要 NAR 检查点")
    config = config_from_snapshot(checkpoint.manifest.config)
    vocab = Vocab.from_full_list(checkpoint.manifest.vocab)
    mode = DecodeMode(args.mode) if args.mode else config.decode.mode
    beam_size = args.beam_size or config.decode.beam_size

    decoder = NARDecoder(config.model, strip_heads(checkpoint.params), vocab)
    hyps = decoder.decode_corpus(read_tokenized(args.src), mode, beam_size)
    if args.out:
        write_tokenized(args.out, hyps)
        logger.info(f"✅ 解码结果已写入 {args.out}")
    else:
        sys.stdout.write("".join(" ".join(h) + "\n" for h in hyps))


def cmd_eval(args: argparse.Namespace) -> None:
    hyps = read_tokenized(args.hyp)
    refs = read_tokenized(args.ref)
    if len(hyps) != len(refs):
        raise CorpusError(f"行数不一致: {args.hyp} 有 {len(hyps)} 行, {args.ref} 有 {len(refs)} 行")
    reports = [r.strip() for r in args.report.split(",") if r.strip()]
    text = write_records(args.out, evaluate(hyps, refs, reports))
    if not args.out:
        sys.stdout.write(text)


def cmd_average(args: argparse.Namespace) -> None:
    path = save_checkpoint(args.out, average_checkpoint_files(args.ckpts))
    print(f"averaged={path}")


def cmd_ablate_ar_depth(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    error_handler = ErrorHandler("ablate-ar-depth")
    data_dir = Path(args.data)
    train_pairs = load_split(data_dir, "train", error_handler)
    test_pairs = load_split(data_dir, "test", error_handler)
    depths = _int_list(args.depths, "--depths")
    seeds = _int_list(args.seeds, "--seeds") if args.seeds else None
    ablation = ARDepthAblation(
        config,
        _training_vocab(train_pairs),
        train_pairs,
        _load_dev(data_dir, error_handler),
        test_pairs,
        Path(args.out),
        seeds=seeds,
    )
    summary = ablation.run(depths)
    for depth in summary.depths:
        print(f"depth={depth.depth}\tmedian_gain={depth.median_gain:+.2f}\tbleu={depth.bleu}")


def cmd_show_config(args: argparse.Namespace) -> None:
    sys.stdout.write(dump_config(_experiment_config(args)))


def cmd_count_params(args: argparse.Namespace) -> None:
    config = _experiment_config(args)
    if args.data:
        vocab_size = len(_training_vocab(load_split(args.data, "train")))
    else:
        vocab_size = args.vocab_size
    counts = count_configured_params(config, vocab_size)
    print(f"nar={counts.nar}\nar_heads={counts.ar_heads}\ntotal={counts.total}")


def _int_list(text: str, flag: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"{flag} 需要逗号分隔的整数, 实际为 {text!r}") from e


# ==================== 参数解析 ====================

def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat `section.key = value` 配置文件")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="覆盖单个配置键，可重复")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nar-mtl", description="NAR 翻译 + 弱 AR 解码头多任务训练")
    parser.add_argument("--log-level", default=None, help="覆盖 LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="生成合成平行语料（train/dev/test）")
    p.add_argument("--task", required=True, choices=[t.value for t in TaskType])
    p.add_argument("--vocab-size", type=int, default=32)
    p.add_argument("--n", type=int, default=1000, help="训练句对数")
    p.add_argument("--n-eval", type=int, default=500, help="dev / test 句对数")
    p.add_argument("--len-min", type=int, default=4)
    p.add_argument("--len-max", type=int, default=16)
    p.add_argument("--source-repeats", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="训练 NAR 模型（可选 AR 头 / glancing）")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="包含 train.* / dev.* 的目录")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("teacher-train", help="训练 AR 教师")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="教师检查点文件")
    p.set_defaults(func=cmd_teacher_train)

    p = sub.add_parser("distill", help="序列级知识蒸馏")
    p.add_argument("--teacher", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--beam", type=int, default=None, help="默认使用教师配置的 teacher.beam_size")
    p.add_argument("--out", required=True, help="输出目录")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("decode", help="NAR 解码（加载时去掉 AR 头）")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--mode", choices=[m.value for m in DecodeMode], default=None)
    p.add_argument("--beam-size", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="BLEU / 重复率 / 长度分桶报告")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--report", default=",".join(REPORT_KINDS))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("average", help="平均若干检查点")
    p.add_argument("--ckpts", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("ablate-ar-depth", help="AR 头深度消融")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--depths", default="1,3,6")
    p.add_argument("--seeds", default=None, help="逗号分隔；默认 train.seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate_ar_depth)

    p = sub.add_parser("show-config", help="打印全部配置（flat 格式）")
    _add_config_args(p)
    p.set_defaults(func=cmd_show_config)

    p = sub.add_parser("count-params", help="NAR / AR 头 / 总参数量")
    _add_config_args(p)
    p.add_argument("--data", default=None, help="从 train 语料构建词表")
    p.add_argument("--vocab-size", type=int, default=32)
    p.set_defaults(func=cmd_count_params)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Returns:
        退出码：0 成功，1 运行错误（argparse 用法错误由 argparse 以 2 退出）
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        args.func(args)
    except (NarMtlError, OSError) as e:
        logger.error(f"❌ {args.command} 失败: {type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
