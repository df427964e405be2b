"""Training loop, evaluation, confusion matrix, and Welch's t-test.

A run directory holds::

    config.txt      fully resolved RunConfig (key=value)
    split/          train.txt, val.txt, test.txt, plan.txt
    vocab.txt       token<TAB>frequency, line i is index i
    metrics.csv     step,split,loss,accuracy_pct,lr,elapsed_s,phase
    checkpoint.bin  final parameters, batch-norm statistics, optimizer state
"""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import betainc

from . import data as D
from .arch import ARCH_NAMES, Model, build, make_spec
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import ContractError, DivergenceError
from .layers import softmax
from .optim import OPTIMIZERS, OptimizerState, applied_lr, decayed_lr, optimizer_step, steps_per_epoch
from .tensor import Rng

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "split", "loss", "accuracy_pct", "lr", "elapsed_s", "phase")


@dataclass
class RunConfig:
    input: str = ""
    out: str = "runs/run"
    arch: str = "lightweight"
    embedding_dim: int = 200
    pointwise_channels: int = 120
    stacked: bool = False
    epochs: int = 20
    max_steps: int = 0  # 0: epochs * batches
    batch_size: int = 32
    max_len: int = 400
    min_freq: int = 1
    eval_every: int = 100
    optimizer: str = "adam"
    switch_step: int = -1  # -1: never switch
    lr: float = 1e-3
    sgd_lr: float = 1e-2
    momentum: float = 0.9
    decay: float = -1.0  # -1: 0.95 when the arch uses decay, else 1.0
    decay_interval: int = 0  # 0: one epoch of steps
    dropout: float = 0.5
    l2: float = -1.0  # -1: arch default
    seed: int = 0
    stratify: bool = False
    timing: bool = True

    def validate(self) -> None:
        if self.arch not in ARCH_NAMES:
            raise ContractError(f"arch must be one of {ARCH_NAMES}, got {self.arch!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ContractError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.pointwise_channels not in (120, 128) and self.arch == "lightweight":
            log.info("pointwise channel count %d differs from 120/128", self.pointwise_channels)
        for key in ("embedding_dim", "pointwise_channels", "epochs", "batch_size", "max_len",
                    "min_freq", "eval_every"):
            if getattr(self, key) < 1:
                raise ContractError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.max_steps < 0:
            raise ContractError(f"max_steps must be >= 0, got {self.max_steps}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr <= 0 or self.sgd_lr <= 0:
            raise ContractError("learning rates must be positive")
        if self.decay != -1.0 and not 0.0 < self.decay <= 1.0:
            raise ContractError(f"decay must lie in (0, 1], got {self.decay}")
        if self.l2 != -1.0 and self.l2 < 0:
            raise ContractError(f"l2 must be >= 0, got {self.l2}")
        if not self.input:
            raise ContractError("no input corpus given")

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        cfg = base or cls()
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ContractError(f"malformed config line {raw!r}")
            cfg = cfg.updated(**{key.strip().replace("-", "_"): value.strip()})
        return cfg

    def updated(self, **overrides) -> "RunConfig":
        kinds = {f.name: type(f.default) for f in fields(self)}
        vals = asdict(self)
        for key, value in overrides.items():
            if key not in kinds:
                raise ContractError(f"unknown config key {key!r}")
            if isinstance(value, str) and kinds[key] is not str:
                if kinds[key] is bool:
                    value = value.lower() in ("1", "true", "yes", "on")
                else:
                    value = kinds[key](value)
            vals[key] = value
        return RunConfig(**vals)


@dataclass
class MetricsRow:
    step: int
    split: str
    loss: float
    accuracy_pct: float
    lr: float
    elapsed_s: float
    phase: str

    def as_csv(self) -> list[str]:
        return [str(self.step), self.split, repr(self.loss), repr(self.accuracy_pct),
                repr(self.lr), repr(self.elapsed_s), self.phase]


def write_metrics(path, rows: Sequence[MetricsRow]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow(r.as_csv())
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != METRICS_HEADER:
            raise ContractError(f"{path}: unexpected metrics header {rd.fieldnames}")
        return [MetricsRow(int(r["step"]), r["split"], float(r["loss"]), float(r["accuracy_pct"]),
                           float(r["lr"]), float(r["elapsed_s"]), r["phase"]) for r in rd]


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    accuracy_pct: float
    mean_loss: float
    correct: int
    total: int
    per_class: dict[str, tuple[int, int]]  # label -> (correct, total)
    predictions: list[int] = field(repr=False, default_factory=list)
    targets: list[int] = field(repr=False, default_factory=list)


def _as_model(model_or_ckpt) -> Model:
    return model_or_ckpt.to_model() if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt


def predict(model: Model, docs: Sequence[D.Document], vocab: D.Vocab, classes: Sequence[str],
            max_len: int, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inference-mode ``(probs [N, K], predicted [N], targets [N])``."""
    probs, targets = [], []
    for tokens, labels in D.batches(docs, vocab, batch_size, max_len, classes=classes):
        probs.append(softmax(model.forward(tokens, train=False).data))
        targets.append(labels)
    p = np.concatenate(probs)
    return p, np.argmax(p, axis=1), np.concatenate(targets)


def evaluate(model_or_ckpt, docs: Sequence[D.Document], vocab: D.Vocab, classes: Sequence[str],
             max_len: int = 400, batch_size: int = 64) -> EvalResult:
    """Accuracy (percent) and mean cross-entropy over ``docs``, dropout off, running BN stats."""
    if not docs:
        raise ContractError("cannot evaluate on an empty document set")
    model = _as_model(model_or_ckpt)
    probs, pred, target = predict(model, docs, vocab, classes, max_len, batch_size)
    with np.errstate(divide="ignore"):
        losses = -np.log(probs[np.arange(len(docs)), target])
    correct = int(np.sum(pred == target))
    per_class = {}
    for k, name in enumerate(classes):
        mask = target == k
        per_class[name] = (int(np.sum(pred[mask] == k)), int(mask.sum()))
    return EvalResult(100.0 * correct / len(docs), math.fsum(losses) / len(docs), correct, len(docs),
                      per_class, pred.tolist(), target.tolist())


def confusion_matrix(model_or_ckpt, docs, vocab, classes, max_len: int = 400,
                     batch_size: int = 64) -> np.ndarray:
    """``K x K`` counts; entry ``(i, j)`` is documents of class ``i`` predicted as ``j``."""
    if not docs:
        raise ContractError("cannot build a confusion matrix from an empty document set")
    _, pred, target = predict(_as_model(model_or_ckpt), docs, vocab, classes, max_len, batch_size)
    k = len(classes)
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (target, pred), 1)
    return cm


def render_confusion(cm: np.ndarray, classes: Sequence[str]) -> str:
    width = max(5, *(len(c) for c in classes)) + 1
    lines = [" " * width + "".join(c[:width - 1].rjust(width) for c in classes)]
    for name, row in zip(classes, cm):
        lines.append(name[:width - 1].ljust(width) + "".join(str(v).rjust(width) for v in row))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# significance


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float
    reject: bool


def t_test(sample_a: Sequence[float], sample_b: Sequence[float], alpha: float = 0.05) -> TTestResult:
    """Two-sided Welch t-test; rejects the equal-means hypothesis iff ``p < alpha``."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ContractError(f"each sample needs at least 2 values, got {a.size} and {b.size}")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    if va + vb == 0.0:
        raise ContractError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    # two-sided tail of Student's t via the regularized incomplete beta function
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return TTestResult(float(t), p, float(df), p < alpha)


# --------------------------------------------------------------------------
# training


@dataclass
class RunResult:
    config: RunConfig
    model: Model
    optimizer: OptimizerState
    vocab: D.Vocab
    classes: list[str]
    plan: D.SplitPlan
    rows: list[MetricsRow]
    out_dir: Path


def resolve_spec(config: RunConfig, vocab_size: int, num_classes: int):
    return make_spec(config.arch, vocab_size, num_classes, config.embedding_dim,
                     pointwise_channels=config.pointwise_channels, stacked=config.stacked,
                     dropout_rate=config.dropout, l2_coeff=None if config.l2 == -1.0 else config.l2)


def train(config: RunConfig, docs: Sequence[D.Document] | None = None) -> RunResult:
    """Train per ``config`` and write the run directory.

    ``docs`` overrides reading ``config.input``.
    """
    config.validate()
    corpus = list(docs) if docs is not None else D.load_corpus(config.input)
    classes = D.class_names(corpus)
    plan = D.split(corpus, config.seed, config.stratify)
    train_docs = plan.select(corpus, "train")
    val_docs = plan.select(corpus, "val")
    test_docs = plan.select(corpus, "test")
    vocab = D.build_vocab(train_docs, config.min_freq)
    spec = resolve_spec(config, len(vocab), len(classes))
    if config.max_len < spec.min_length:
        raise ContractError(f"max_len {config.max_len} is shorter than the {spec.name} receptive "
                            f"field {spec.min_length}")

    root = Rng(config.seed)
    model = build(spec, root.spawn(0))
    shuffle_rng, dropout_rng = root.spawn(1), root.spawn(2)

    per_epoch = steps_per_epoch(len(train_docs), config.batch_size)
    total = config.max_steps or config.epochs * per_epoch
    decay = config.decay if config.decay != -1.0 else (0.95 if spec.lr_decay else 1.0)
    state = OptimizerState(kind=config.optimizer, lr=config.lr, sgd_lr=config.sgd_lr, decay=decay,
                           decay_interval=config.decay_interval or per_epoch,
                           momentum=config.momentum,
                           switch_step=None if config.switch_step < 0 else config.switch_step)

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    plan.save(out / "split")
    vocab.save(out / "vocab.txt")

    rows: list[MetricsRow] = []
    start = time.perf_counter()
    elapsed = (lambda: time.perf_counter() - start) if config.timing else (lambda: 0.0)
    win_loss: list[float] = []
    win_correct = win_seen = 0
    last_lr, last_phase = decayed_lr(state), state.phase
    step = 0

    def log_rows():
        nonlocal win_loss, win_correct, win_seen
        if win_seen:
            rows.append(MetricsRow(step, "train", math.fsum(win_loss) / len(win_loss),
                                   100.0 * win_correct / win_seen, last_lr, elapsed(), last_phase))
        win_loss, win_correct, win_seen = [], 0, 0
        if val_docs:
            ev = evaluate(model, val_docs, vocab, classes, config.max_len)
            rows.append(MetricsRow(step, "val", ev.mean_loss, ev.accuracy_pct, last_lr, elapsed(),
                                   last_phase))
            log.info("step %d val loss %.4f acc %.2f%%", step, ev.mean_loss, ev.accuracy_pct)

    while step < total:
        for tokens, labels in D.batches(train_docs, vocab, config.batch_size, config.max_len,
                                        shuffle_rng, shuffle=True, classes=classes):
            model.zero_grad()
            loss, probs = model.loss(tokens, labels, train=True, rng=dropout_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at step {step + 1}")
            loss.backward()
            grads = {n: p.grad for n, p in model.params.items()}
            optimizer_step(model.params, grads, state)
            last_lr, last_phase = applied_lr(state), state.phase
            step += 1
            win_loss.append(value)
            win_correct += int(np.sum(np.argmax(probs, axis=1) == labels))
            win_seen += len(labels)
            if step % config.eval_every == 0:
                log_rows()
            if step >= total:
                break

    if step % config.eval_every != 0 or not rows:
        log_rows()
    if test_docs:
        ev = evaluate(model, test_docs, vocab, classes, config.max_len)
        rows.append(MetricsRow(step, "test", ev.mean_loss, ev.accuracy_pct, last_lr, elapsed(),
                               last_phase))

    write_metrics(out / "metrics.csv", rows)
    save_checkpoint(out / "checkpoint.bin", model, state, {"classes": "\t".join(classes),
                                                            "max_len": str(config.max_len)})
    return RunResult(config, model, state, vocab, classes, plan, rows, out)



@dataclass
class LoadedRun:
    config: RunConfig
    checkpoint: Checkpoint
    model: Model
    vocab: D.Vocab
    classes: list[str]
    plan: D.SplitPlan

    @property
    def max_len(self) -> int:
        return int(self.checkpoint.meta.get("max_len", self.config.max_len))

    def docs(self, part: str, corpus_dir=None) -> list[D.Document]:
        corpus = D.load_corpus(corpus_dir or self.config.input)
        return corpus if part == "all" else self.plan.select(corpus, part)


def load_run(run_dir) -> LoadedRun:
    run = Path(run_dir)
    config = RunConfig.from_text((run / "config.txt").read_text(encoding="utf-8"))
    ckpt = load_checkpoint(run / "checkpoint.bin")
    classes = ckpt.meta["classes"].split("\t")
    return LoadedRun(config, ckpt, ckpt.to_model(), D.Vocab.load(run / "vocab.txt"), classes,
                     D.SplitPlan.load(run / "split"))
