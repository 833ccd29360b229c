"""Train the toy denoiser and write checkpoint, metrics CSV and a metric table.

    python scripts/toy_denoise.py --out runs/toy --steps 2000 --seed 0
"""

import argparse
import time
from pathlib import Path

import numpy as np

from elmformer.cli import read_run_config
from elmformer.evaluation import eval_pair, metrics_csv, metrics_markdown
from elmformer.network import forward
from elmformer.training import ValidationSet, train, write_checkpoint


def main() -> None:
    here = Path(__file__).resolve().parent.parent
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--config", default=str(here / "configs" / "toy.cfg"))
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, cfg = read_run_config(args.config)
    start = time.perf_counter()

    def log(row):
        if row["val_psnr_rr"] is not None:
            print(f"step {row['step']:5d}  loss {row['loss']:.5f}  val r/r {row['val_psnr_rr']:.2f} dB  "
                  f"({time.perf_counter() - start:.0f} s)", flush=True)

    result = train(model, None, args.steps, args.seed, cfg, metrics_path=out / "metrics.csv", log=log)
    write_checkpoint(out / "model.ckpt", result)

    val = ValidationSet.synthetic(cfg)
    noisy = {}
    restored = {}
    for i, (c, n) in enumerate(zip(val.clean, val.noisy)):
        noisy[i] = eval_pair(n, c)
        restored[i] = eval_pair(forward(n, result.weights), c)

    def mean(reports):
        fields = ("psnr_rr", "psnr_rs", "ssim_rr", "ssim_rs")
        vals = {f: float(np.mean([getattr(r, f) for r in reports.values()])) for f in fields}
        return type(next(iter(reports.values())))(**vals)

    rows = {"noisy input": mean(noisy), "restored": mean(restored)}
    (out / "metrics.md").write_text(metrics_markdown(rows))
    (out / "metrics_table.csv").write_text(metrics_csv(rows))
    print(metrics_markdown(rows))
    print(f"wrote {out}, {time.perf_counter() - start:.0f} s")


if __name__ == "__main__":
    main()
