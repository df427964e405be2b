"""Corpus loading, text cleaning, vocabulary, train/val/test splits, and padded batches.

Two corpus layouts are accepted:

* ``root/<label>/<name>.txt``: one subdirectory per class.
* ``root/<label>__<name>.txt``: flat directory, label in the filename.

Cleaning rules (applied in order):

1. decode as UTF-8, replacing undecodable bytes;
2. lowercase;
3. delete every character whose Unicode category is punctuation (``P*``) or
   symbol (``S*``); deleted, not replaced, so ``re-enter`` becomes ``reenter``;
4. split on runs of whitespace (spaces, tabs, line breaks).
"""
from __future__ import annotations

import logging
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Rng

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


@dataclass(frozen=True)
class Document:
    id: str
    label: str
    tokens: tuple[str, ...]


def _is_stripped(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def clean(raw) -> list[str]:
    if isinstance(raw, (bytes, bytearray)):
        raw = bytes(raw).decode("utf-8", errors="replace")
    text = "".join(ch for ch in raw.lower() if not _is_stripped(ch))
    return text.split()


def load_corpus(root) -> list[Document]:
    """Read every ``.txt`` document under ``root``, sorted by id."""
    root = Path(root)
    if not root.is_dir():
        raise ContractError(f"corpus directory {root} does not exist")
    docs = []
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    if subdirs:
        for d in subdirs:
            for f in sorted(d.glob("*.txt")):
                docs.append(Document(f"{d.name}/{f.stem}", d.name, tuple(clean(f.read_bytes()))))
    else:
        for f in sorted(root.glob("*.txt")):
            label, sep, _ = f.stem.partition("__")
            if not sep or not label:
                raise ContractError(f"{f.name}: flat layout needs '<label>__<id>.txt' names")
            docs.append(Document(f.stem, label, tuple(clean(f.read_bytes()))))
    if not docs:
        raise ContractError(f"no .txt documents found under {root}")
    docs.sort(key=lambda d: d.id)
    return docs


def class_names(docs: Sequence[Document]) -> list[str]:
    return sorted({d.label for d in docs})


# --------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocab:
    """Token <-> index map; index 0 pads, index 1 stands for unknown tokens."""

    itos: list[str]
    freq: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.itos[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ContractError("vocab must start with the padding and unknown tokens")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("vocab tokens are not unique")

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos and self.freq == other.freq

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def save(self, path) -> None:
        lines = [f"{tok}\t{self.freq.get(tok, 0)}" for tok in self.itos]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        itos, freq = [], {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            tok, _, count = line.partition("\t")
            itos.append(tok)
            if tok not in (PAD_TOKEN, UNK_TOKEN):
                freq[tok] = int(count)
        return cls(itos, freq)


def build_vocab(train_docs: Sequence, min_freq: int = 1) -> Vocab:
    """Vocabulary of training tokens seen at least ``min_freq`` times.

    Ordered by descending frequency, ties alphabetical, so document order does
    not matter. Accepts ``Document`` objects or plain token lists.
    """
    if not train_docs:
        raise ContractError("cannot build a vocabulary from an empty training set")
    counts: Counter = Counter()
    for d in train_docs:
        counts.update(d.tokens if isinstance(d, Document) else d)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab([PAD_TOKEN, UNK_TOKEN] + kept, {t: counts[t] for t in kept})


# --------------------------------------------------------------------------
# splits


@dataclass
class SplitPlan:
    seed: int
    train: list[str]
    val: list[str]
    test: list[str]
    warnings: list[str] = field(default_factory=list)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for part in ("train", "val", "test"):
            ids = getattr(self, part)
            (out / f"{part}.txt").write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")
        meta = [f"seed={self.seed}", f"train={len(self.train)}", f"val={len(self.val)}",
                f"test={len(self.test)}"] + [f"warning={w}" for w in self.warnings]
        (out / "plan.txt").write_text("\n".join(meta) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, out_dir) -> "SplitPlan":
        out = Path(out_dir)
        parts = {p: (out / f"{p}.txt").read_text(encoding="utf-8").split("\n")[:-1]
                 for p in ("train", "val", "test")}
        seed, warnings = 0, []
        for line in (out / "plan.txt").read_text(encoding="utf-8").splitlines():
            key, _, val = line.partition("=")
            if key == "seed":
                seed = int(val)
            elif key == "warning":
                warnings.append(val)
        return cls(seed, parts["train"], parts["val"], parts["test"], warnings)

    def select(self, docs: Sequence[Document], part: str) -> list[Document]:
        by_id = {d.id: d for d in docs}
        return [by_id[i] for i in getattr(self, part)]


def split_sizes(n: int) -> tuple[int, int, int]:
    """``(train, val, test)``: test is ceil(n/10), val is ceil(rest/5)."""
    test = math.ceil(n / 10)
    val = math.ceil((n - test) / 5)
    return n - test - val, val, test


def _split_ids(ids: list[str], rng: Rng) -> tuple[list[str], list[str], list[str]]:
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_train, n_val, _ = split_sizes(len(order))
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split(corpus: Sequence[Document], seed: int, stratify: bool = False) -> SplitPlan:
    """Seeded 9:1 train+val/test split, then 8:2 train/val."""
    if not corpus:
        raise ContractError("cannot split an empty corpus")
    rng = Rng(seed)
    sizes = Counter(d.label for d in corpus)
    warnings = [f"class {lab!r} has only {n} document(s)" for lab, n in sorted(sizes.items()) if n < 3]
    for w in warnings:
        log.warning(w)
    if not stratify:
        train, val, test = _split_ids(sorted(d.id for d in corpus), rng)
    else:
        train, val, test = [], [], []
        for lab in sorted(sizes):
            a, b, c = _split_ids(sorted(d.id for d in corpus if d.label == lab), rng)
            train += a
            val += b
            test += c
    return SplitPlan(seed, train, val, test, warnings)


# --------------------------------------------------------------------------
# batches


def encode_batch(docs: Sequence[Document], vocab: Vocab, max_len: int) -> np.ndarray:
    """Token-index matrix ``[len(docs), max_len]``: truncated, right-padded with 0."""
    out = np.full((len(docs), max_len), PAD, dtype=np.int64)
    for row, d in enumerate(docs):
        ids = vocab.encode(d.tokens[:max_len])
        out[row, :len(ids)] = ids
    return out


def batches(docs: Sequence[Document], vocab: Vocab, batch_size: int, max_len: int,
            rng: Rng | None = None, shuffle: bool = False,
            classes: Sequence[str] | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of ``(tokens [B, max_len], labels [B])`` pairs.

    Labels index into ``classes`` (sorted labels of ``docs`` when omitted).
    """
    if batch_size < 1:
        raise ContractError(f"batch size must be >= 1, got {batch_size}")
    if max_len < 1:
        raise ContractError(f"max_len must be >= 1, got {max_len}")
    classes = list(classes) if classes is not None else class_names(docs)
    label_ix = {c: i for i, c in enumerate(classes)}
    order = rng.permutation(len(docs)) if shuffle else np.arange(len(docs))
    for start in range(0, len(docs), batch_size):
        chunk = [docs[i] for i in order[start:start + batch_size]]
        yield encode_batch(chunk, vocab, max_len), np.array([label_ix[d.label] for d in chunk], dtype=np.int64)
