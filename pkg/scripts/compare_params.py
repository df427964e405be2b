"""Parameter budgets of the three architectures side by side.

    python scripts/compare_params.py [--vocab 82448] [--classes 10]
"""
import argparse

from lwtextcnn.arch import base_spec, count_params, make_spec, solve_vocab_size

REFERENCE_TOTALS = {(10, "base"): 16_801_034, (3, "base"): 6_336_739}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--vocab", type=int, default=82_448)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--dim", type=int, default=200)
    args = ap.parse_args()

    rows = []
    for name, kw in [("base", {}), ("optimized", {}), ("optimized", {"stacked": True}),
                     ("lightweight", {"pointwise_channels": 120}),
                     ("lightweight", {"pointwise_channels": 128})]:
        spec = make_spec(name, args.vocab, args.classes, args.dim, **kw)
        _, total = count_params(spec)
        label = name + "".join(f" {k}={v}" for k, v in kw.items())
        rows.append((label, total, total - args.vocab * args.dim))

    base_total = rows[0][1]
    print("arch\ttotal\tnon_embedding\tsaved_vs_base")
    for label, total, non_emb in rows:
        print(f"{label}\t{total}\t{non_emb}\t{base_total - total}")

    print()
    for (k, name), total in REFERENCE_TOTALS.items():
        v = solve_vocab_size(total, base_spec(2, k, args.dim))
        print(f"vocabulary implied by {name} total {total:,} with K={k}: {v}")


if __name__ == "__main__":
    main()
