"""Command-line entry point: gen / train / eval / check / inspect-bias / dump-attn.

Exit codes: 0 success, 1 usage error, 2 validation/config error,
3 check-suite failure. Behaviour comes from an optional TOML/JSON config
file; individual values can be overridden with repeated --set flags and
the common training knobs have dedicated flags (flags win over the file).
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import torch

from . import __version__
from .checks import run_checks
from .config import RunConfig, apply_overrides, load_run_config
from .entities import build_entity_sequence, load_annotations
from .errors import VtvqaError
from .evaluation import dump_clues_attention, dump_cross_attention, evaluate
from .model import VideoTextQAModel, load_checkpoint, save_checkpoint
from .spatial_bias import SpatialBias, bias_tensor, bias_tensor_to_csv_rows
from .synth import write_datasets
from .training import set_determinism, train
from .vocab import TokenVocab

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    overrides = list(getattr(args, "set", None) or [])
    # dedicated flags override the file
    flag_map = {
        "steps": "train.steps",
        "lr": "train.lr",
        "batch_size": "train.batch_size",
        "seed_flag": None,  # handled below
        "threads": "train.threads",
        "task": "synth.task",
        "num_samples": "synth.num_samples",
    }
    for attr, dotted in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None and dotted is not None:
            overrides.append(f"{dotted}={value}")
    seed = getattr(args, "seed_flag", None)
    if seed is not None:
        overrides.append(f"train.seed={seed}")
        overrides.append(f"synth.seed={seed}")
    return apply_overrides(cfg, overrides)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML or JSON run config")
    p.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    p.add_argument("--seed", dest="seed_flag", type=int, help="train and synth seed")
    p.add_argument("--threads", type=int, help="torch thread cap (default 1)")


def _build_model(cfg: RunConfig, vocab: TokenVocab) -> VideoTextQAModel:
    return VideoTextQAModel(cfg.model, vocab, cfg.spatial, cfg.adapter, cfg.clues)


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    paths = write_datasets(cfg.synth, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    set_determinism(cfg.train.seed, cfg.train.threads)
    samples = load_annotations(args.data)
    vocab = TokenVocab.from_samples(samples)
    model = _build_model(cfg, vocab)
    history = train(model, samples, cfg.train, csv_path=args.loss_csv)
    save_checkpoint(model, args.out_checkpoint)
    print(f"trained {len(history)} steps, final loss {history[-1][1]:.4f}")
    print(f"checkpoint: {args.out_checkpoint}")
    if args.loss_csv:
        print(f"loss csv: {args.loss_csv}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    set_determinism(cfg.train.seed, cfg.train.threads)
    model = load_checkpoint(args.checkpoint)
    model.eval()
    samples = load_annotations(args.data)
    report = evaluate(model, samples)
    if args.report:
        report.write_json(args.report)
        print(f"report: {args.report}")
    print(f"accuracy: {report.accuracy:.4f}")
    print(f"anls: {report.anls:.4f}")
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    set_determinism(cfg.train.seed, cfg.train.threads)
    results = run_checks(module=args.module, seed=cfg.train.seed)
    if not results:
        print(f"no checks matched module {args.module!r}", file=sys.stderr)
        return EXIT_USAGE
    failed = []
    for res in results:
        status = "PASS" if res.ok else "FAIL"
        print(f"[{res.module}] {res.name}: {status} ({res.detail})")
        if not res.ok:
            failed.append(res.name)
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_inspect_bias(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    set_determinism(cfg.train.seed, cfg.train.threads)
    samples = load_annotations(args.data)
    if not 0 <= args.sample < len(samples):
        raise VtvqaError(f"sample index {args.sample} outside [0, {len(samples)})")
    seq = build_entity_sequence(samples[args.sample], cfg.model.M, cfg.model.N)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        if not model.spatial:
            raise VtvqaError("checkpoint was trained without spatial bias")
        params = model.spatial[0]
    else:
        params = SpatialBias(cfg.model.heads, cfg.spatial)
    bias = bias_tensor(seq, params)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "i", "j", "value"])
        for row in bias_tensor_to_csv_rows(bias):
            writer.writerow([row[0], row[1], row[2], f"{row[3]:.8e}"])
    print(f"bias csv: {args.out} ({bias.shape[0]}x{bias.shape[1]}x{bias.shape[2]})")
    return EXIT_OK


def cmd_dump_attn(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    set_determinism(cfg.train.seed, cfg.train.threads)
    model = load_checkpoint(args.checkpoint)
    model.eval()
    samples = load_annotations(args.data)
    if not 0 <= args.sample < len(samples):
        raise VtvqaError(f"sample index {args.sample} outside [0, {len(samples)})")
    record = dump_cross_attention(model, samples[args.sample], args.out)
    print(f"cross-attention csv: {args.out}")
    if args.clues_out:
        dump_clues_attention(record, args.clues_out)
        print(f"clues attention csv: {args.clues_out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="vtvqa", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"vtvqa {__version__} (torch {torch.__version__})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--task", choices=["spatial", "tracking", "redundancy"])
    p.add_argument("--num-samples", dest="num_samples", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on an annotation file")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out-checkpoint", type=Path, required=True)
    p.add_argument("--loss-csv", type=Path)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="run the invariant and gradient suite")
    _add_common(p)
    p.add_argument("--module", default="all")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("inspect-bias", help="dump the spatial bias tensor as CSV")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.set_defaults(func=cmd_inspect_bias)

    p = sub.add_parser("dump-attn", help="dump decoder cross-attention as CSV")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--clues-out", dest="clues_out", type=Path)
    p.set_defaults(func=cmd_dump_attn)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VtvqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
