"""Command-line entry point: ``lwtextcnn <subcommand> [flags]``.

Machine-readable results go to stdout as TSV/CSV; human summaries go to
stderr. Exit status is 0 on success, 2 on usage errors, 1 on runtime errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .arch import ARCH_NAMES, count_params, make_spec
from .errors import CheckpointFormatError, ContractError, DimensionError, DivergenceError
from .harness import (RunConfig, confusion_matrix, evaluate, load_run, render_confusion, t_test,
                      train)
from .optim import OPTIMIZERS

log = logging.getLogger("lwtextcnn")

RUNTIME_ERRORS = (ContractError, DimensionError, CheckpointFormatError, DivergenceError, OSError,
                  KeyError, ValueError)


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _add_arch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", dest="embedding_dim", type=int, help="embedding dimension (default 200)")
    p.add_argument("--pointwise-channels", type=int, choices=(120, 128),
                   help="1x1 projection width of the lightweight net (default 120)")
    p.add_argument("--stacked", action="store_true", default=None,
                   help="optimized net: two stacked height-3 filters instead of height 5")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--input", help="corpus directory")
    p.add_argument("--out", help="run directory to create")
    p.add_argument("--arch", choices=ARCH_NAMES)
    _add_arch_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int, help="stop after this many steps (0 = epochs)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-len", type=int, help="tokens per document after truncation/padding")
    p.add_argument("--min-freq", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--switch-step", type=int, help="swats: first step taken by SGD")
    p.add_argument("--lr", type=float)
    p.add_argument("--sgd-lr", type=float, help="swats: SGD learning rate after the switch")
    p.add_argument("--momentum", type=float)
    p.add_argument("--decay", type=float, help="staircase decay coefficient in (0, 1]")
    p.add_argument("--decay-interval", type=int, help="steps per decay (0 = one epoch)")
    p.add_argument("--dropout", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--stratify", action="store_true", default=None)
    p.add_argument("--no-timing", dest="timing", action="store_false", default=None,
                   help="write 0 in elapsed_s so metrics files are byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lwtextcnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a run directory")
    _train_flags(p)

    p = sub.add_parser("eval", help="accuracy and loss of a trained run")
    p.add_argument("--run", required=True, help="run directory written by train")
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--input", help="corpus directory (default: the run's)")

    p = sub.add_parser("confusion", help="confusion matrix of a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--input")

    p = sub.add_parser("count-params", help="trainable-parameter table for an architecture")
    p.add_argument("arch_pos", nargs="?", choices=ARCH_NAMES, metavar="ARCH")
    p.add_argument("--arch", choices=ARCH_NAMES)
    p.add_argument("--vocab", type=int, required=True, help="vocabulary size V")
    p.add_argument("--classes", type=int, required=True, help="number of classes K")
    _add_arch_flags(p)

    p = sub.add_parser("split", help="write a seeded train/val/test plan")
    p.add_argument("--input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="split")
    p.add_argument("--stratify", action="store_true")

    p = sub.add_parser("vocab", help="build the vocabulary from the training split")
    p.add_argument("--input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-dir", help="existing split plan (default: compute from --seed)")
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--out", default="vocab.txt")

    p = sub.add_parser("ttest", help="two-sided Welch t-test")
    p.add_argument("--a", required=True, help="comma-separated sample or @file (one value per line)")
    p.add_argument("--b", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    parser.set_defaults(_subparsers=sub.choices)
    return parser


def _sample(arg: str) -> list[float]:
    text = Path(arg[1:]).read_text() if arg.startswith("@") else arg.replace(",", " ")
    return [float(x) for x in text.split()]


def cmd_count_params(args) -> int:
    arch = args.arch or args.arch_pos
    if arch is None:
        raise ContractError("count-params needs an architecture (positional or --arch)")
    spec = make_spec(arch, args.vocab, args.classes, args.embedding_dim or 200,
                     pointwise_channels=args.pointwise_channels or 120, stacked=bool(args.stacked))
    table, total = count_params(spec)
    print("name\tshape\tcount")
    for e in table:
        print(f"{e.name}\t{'x'.join(map(str, e.shape))}\t{e.count}")
    print(f"total\t\t{total}")
    emb = spec.vocab_size * spec.embedding_dim
    _err(f"{arch}: {total:,} trainable parameters ({total - emb:,} outside the embedding)")
    return 0


def cmd_split(args) -> int:
    corpus = D.load_corpus(args.input)
    plan = D.split(corpus, args.seed, args.stratify)
    plan.save(args.out)
    print("part\tcount")
    for part in ("train", "val", "test"):
        print(f"{part}\t{len(getattr(plan, part))}")
    _err(f"split {len(corpus)} documents (seed {args.seed}) -> {args.out}")
    return 0


def cmd_vocab(args) -> int:
    corpus = D.load_corpus(args.input)
    plan = D.SplitPlan.load(args.split_dir) if args.split_dir else D.split(corpus, args.seed)
    vocab = D.build_vocab(plan.select(corpus, "train"), args.min_freq)
    vocab.save(args.out)
    print(f"size\t{len(vocab)}")
    _err(f"vocabulary of {len(vocab)} entries -> {args.out}")
    return 0


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_text(Path(args.config).read_text(encoding="utf-8"), cfg)
    keys = ("input", "out", "arch", "embedding_dim", "pointwise_channels", "stacked", "epochs",
            "max_steps", "batch_size", "max_len", "min_freq", "eval_every", "optimizer",
            "switch_step", "lr", "sgd_lr", "momentum", "decay", "decay_interval", "dropout", "l2",
            "seed", "stratify", "timing")
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    return cfg.updated(**overrides)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    result = train(cfg)
    print(",".join(("step", "split", "loss", "accuracy_pct", "lr", "elapsed_s", "phase")))
    for row in result.rows:
        if row.step == result.rows[-1].step:
            print(",".join(row.as_csv()))
    _err(f"trained {cfg.arch} for {result.rows[-1].step} steps -> {result.out_dir}")
    return 0


def cmd_eval(args) -> int:
    run = load_run(args.run)
    docs = run.docs(args.split, args.input)
    ev = evaluate(run.model, docs, run.vocab, run.classes, run.max_len)
    print("class\tcorrect\ttotal")
    for name, (c, n) in ev.per_class.items():
        print(f"{name}\t{c}\t{n}")
    print(f"ALL\t{ev.correct}\t{ev.total}")
    print(f"accuracy_pct\t{ev.accuracy_pct!r}")
    print(f"mean_loss\t{ev.mean_loss!r}")
    _err(f"{args.split}: accuracy {ev.accuracy_pct:.2f}% loss {ev.mean_loss:.4f} on {ev.total} documents")
    return 0


def cmd_confusion(args) -> int:
    run = load_run(args.run)
    docs = run.docs(args.split, args.input)
    cm = confusion_matrix(run.model, docs, run.vocab, run.classes, run.max_len)
    print("true\\pred\t" + "\t".join(run.classes))
    for name, row in zip(run.classes, cm):
        print(name + "\t" + "\t".join(str(int(v)) for v in row))
    _err(render_confusion(cm, run.classes))
    _err(f"accuracy {100.0 * int(np.trace(cm)) / int(cm.sum()):.2f}%")
    return 0


def cmd_ttest(args) -> int:
    res = t_test(_sample(args.a), _sample(args.b), args.alpha)
    print("t\tp\tdf\treject")
    print(f"{res.t!r}\t{res.p!r}\t{res.df!r}\t{int(res.reject)}")
    verdict = "reject" if res.reject else "do not reject"
    _err(f"Welch t = {res.t:.4f}, p = {res.p:.4g}: {verdict} equal means at alpha = {args.alpha}")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "confusion": cmd_confusion,
            "count-params": cmd_count_params, "split": cmd_split, "vocab": cmd_vocab,
            "ttest": cmd_ttest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            # report against the subcommand so the usage line lists its flags
            args._subparsers[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except RUNTIME_ERRORS as exc:
        _err(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
