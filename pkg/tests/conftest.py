import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lwtextcnn.data import Document  # noqa: E402

KEYWORDS = {
    "invoice": ["amount", "payable", "total", "due", "remit"],
    "letter": ["dear", "sincerely", "regards", "thank", "writing"],
    "memo": ["memo", "subject", "cc", "attached", "internal"],
}
FILLER = ["the", "of", "and", "to", "a", "in", "for", "is", "on", "that", "with", "as"]


def synthetic_docs(per_class=10, length=24, seed=0):
    """Three classes; each document mixes its class keywords with shared filler words."""
    rng = np.random.default_rng(seed)
    docs = []
    for label, words in KEYWORDS.items():
        for i in range(per_class):
            n_kw = 4
            toks = list(rng.choice(FILLER, length - n_kw)) + list(rng.choice(words, n_kw))
            rng.shuffle(toks)
            docs.append(Document(f"{label}/{i:03d}", label, tuple(str(t) for t in toks)))
    return docs


def write_corpus(root: Path, docs, flat=False):
    root.mkdir(parents=True, exist_ok=True)
    for d in docs:
        name = d.id.split("/")[-1]
        if flat:
            path = root / f"{d.label}__{name}.txt"
        else:
            (root / d.label).mkdir(exist_ok=True)
            path = root / d.label / f"{name}.txt"
        path.write_text(" ".join(d.tokens) + "\n", encoding="utf-8")
    return root


@pytest.fixture
def corpus_docs():
    return synthetic_docs()


@pytest.fixture
def corpus_dir(tmp_path, corpus_docs):
    return write_corpus(tmp_path / "corpus", corpus_docs)


def overfit_config(out, arch, seed=0, **kw):
    """Small-width config that fits the synthetic corpus in 200 steps."""
    from lwtextcnn.harness import RunConfig
    base = dict(input="mem", out=str(out), arch=arch, embedding_dim=16, max_steps=200, batch_size=7,
                max_len=32, eval_every=50, lr=1e-2, seed=seed, timing=False)
    base.update(kw)
    return RunConfig(**base)
