"""Print the whole-model cost table and the Le-Win / Lm-Win window-size sweep."""

import argparse

from elmformer.evaluation import (
    empirical_count_check,
    flops_markdown,
    flops_model,
    lmsa_closed_form_note,
    sweep_markdown,
)
from elmformer.network import ElmformerConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--depth", type=int, default=4)
    args = ap.parse_args()

    cfg = ElmformerConfig(base_channels=args.channels, depth=args.depth)
    print(flops_markdown(flops_model(cfg, args.size, args.size)))
    print(sweep_markdown([2, 4, 8, 16], 16, 1, 256, 256))
    print(lmsa_closed_form_note)
    print()
    print("| variant | M | instrumented q.k MACs | analytic | ratio |")
    print("|---|---|---|---|---|")
    for variant in ("wmsa", "lmsa", "lmwin"):
        for row in empirical_count_check(variant, (2, 4, 8)):
            print(f"| {variant} | {row.M} | {row.instrumented} | {row.analytic} | {row.ratio:.3f} |")


if __name__ == "__main__":
    main()
