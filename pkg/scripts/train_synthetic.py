"""Train every architecture on a generated keyword corpus and compare them.

Writes the corpus to ``<out>/corpus`` (one subdirectory per class), trains each
architecture for several seeds, and runs Welch's t-test on the final test
accuracies of each pair.

    python scripts/train_synthetic.py --out runs/synthetic --seeds 3
"""
import argparse
import itertools
from pathlib import Path

import numpy as np

from lwtextcnn.harness import RunConfig, t_test, train

KEYWORDS = {
    "invoice": ["amount", "payable", "total", "due", "remit"],
    "letter": ["dear", "sincerely", "regards", "thank", "writing"],
    "memo": ["memo", "subject", "cc", "attached", "internal"],
    "report": ["findings", "summary", "results", "analysis", "quarter"],
}
FILLER = ["the", "of", "and", "to", "a", "in", "for", "is", "on", "that", "with", "as", "we", "it"]


def write_corpus(root: Path, per_class: int, length: int, seed: int) -> Path:
    rng = np.random.default_rng(seed)
    for label, words in KEYWORDS.items():
        (root / label).mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            toks = list(rng.choice(FILLER, length - 3)) + list(rng.choice(words, 3))
            rng.shuffle(toks)
            (root / label / f"{i:04d}.txt").write_text(" ".join(toks) + "\n")
    return root


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/synthetic")
    ap.add_argument("--per-class", type=int, default=40)
    ap.add_argument("--length", type=int, default=40)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--optimizer", default="swats")
    args = ap.parse_args()

    out = Path(args.out)
    corpus = write_corpus(out / "corpus", args.per_class, args.length, seed=0)
    acc = {}
    for arch in ("base", "optimized", "lightweight"):
        acc[arch] = []
        for seed in range(args.seeds):
            cfg = RunConfig(input=str(corpus), out=str(out / f"{arch}_s{seed}"), arch=arch,
                            embedding_dim=args.dim, epochs=args.epochs, batch_size=16, max_len=48,
                            eval_every=10, optimizer=args.optimizer, lr=3e-3, sgd_lr=1e-2,
                            switch_step=80 if args.optimizer == "swats" else -1, seed=seed)
            res = train(cfg)
            test_row = res.rows[-1]
            acc[arch].append(test_row.accuracy_pct)
            print(f"{arch}\tseed={seed}\tsteps={test_row.step}\ttest_acc={test_row.accuracy_pct:.2f}"
                  f"\ttime={test_row.elapsed_s:.1f}s")

    print()
    for a, b in itertools.combinations(acc, 2):
        if len(acc[a]) < 2 or np.var(acc[a]) + np.var(acc[b]) == 0:
            print(f"{a} vs {b}: not enough spread for a t-test")
            continue
        r = t_test(acc[a], acc[b])
        print(f"{a} vs {b}: t={r.t:.3f} p={r.p:.3f} reject={r.reject}")


if __name__ == "__main__":
    main()
