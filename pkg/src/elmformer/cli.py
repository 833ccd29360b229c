"""Command-line entry point: gen-data, train, restore, eval, flops.

Every failure prints exactly one line starting with ``elmformer-error:`` to
stderr and exits non-zero.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .bayer import NOISE_KINDS, read_raw, simple_isp, write_ppm, write_raw
from .config import ConfigFileError, from_kv, read_kv, split_known
from .data import generate_dataset, load_manifest, parse_noise_params
from .evaluation import eval_pair, flops_markdown, flops_model, sweep_markdown
from .network import ElmformerConfig, forward, load_checkpoint, load_weights
from .training import TrainConfig, train, write_checkpoint

ERROR_PREFIX = "elmformer-error:"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of printing usage, so errors stay on one line."""

    def error(self, message):
        raise CliError(message)


def _require_dir_for(path: Path) -> None:
    parent = path.resolve().parent
    if not parent.is_dir():
        raise CliError(f"{path}: parent directory does not exist")
    if not os.access(parent, os.W_OK):
        raise CliError(f"{path}: parent directory is not writable")


def _require_file(path: Path) -> None:
    if not path.is_file():
        raise CliError(f"{path}: no such file")


def read_run_config(path) -> tuple[ElmformerConfig, TrainConfig]:
    """Split one key=value file into model and training settings; unknown keys are errors."""
    values = read_kv(path) if path is not None else {}
    model_kv, rest = split_known(ElmformerConfig, values)
    train_kv, unknown = split_known(TrainConfig, rest)
    if unknown:
        raise ConfigFileError(f"{path}: unknown config keys {sorted(unknown)}")
    return from_kv(ElmformerConfig, model_kv), from_kv(TrainConfig, train_kv)


def parse_extent(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise CliError(f"--input expects HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise CliError(f"--input extents must be positive, got {text!r}")
    return h, w


def parse_sweep(text: str) -> list[int]:
    key, _, values = text.partition("=")
    if key.strip() != "M" or not values:
        raise CliError(f"--sweep expects M=a,b,..., got {text!r}")
    try:
        return [int(v) for v in values.split(",")]
    except ValueError:
        raise CliError(f"--sweep values must be integers, got {values!r}") from None


def parse_isp(text: str | None) -> dict:
    """``wb_r=..,wb_b=..,gamma=..`` (any subset) to simple_isp keyword arguments."""
    vals = {"wb_r": 1.0, "wb_b": 1.0, "gamma": 2.2}
    for item in filter(None, (p.strip() for p in (text or "").split(","))):
        k, sep, v = item.partition("=")
        if not sep or k.strip() not in vals:
            raise CliError(f"--isp-params entries are wb_r=, wb_b=, gamma=; got {item!r}")
        try:
            vals[k.strip()] = float(v)
        except ValueError:
            raise CliError(f"--isp-params {k}: {v!r} is not a number") from None
    if vals["gamma"] <= 0:
        raise CliError("--isp-params gamma must be positive")
    return {"wb": (vals["wb_r"], vals["wb_b"]), "gamma": vals["gamma"]}


# commands ------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise CliError(f"--count must be at least 1, got {args.count}")
    if args.size <= 0 or args.size % 2:
        raise CliError(f"--size must be even and positive, got {args.size}")
    try:
        params = parse_noise_params(args.noise, args.params or "")
    except ValueError as e:
        raise CliError(str(e)) from None
    out = Path(args.out)
    _require_dir_for(out)
    if out.exists() and not out.is_dir():
        raise CliError(f"{out}: exists and is not a directory")
    manifest = generate_dataset(out, args.count, args.size, args.noise, params, args.seed)
    print(f"wrote {len(manifest['pairs'])} pairs to {out}")
    return 0


def cmd_train(args) -> int:
    if args.config is not None:
        _require_file(Path(args.config))
    model, cfg = read_run_config(args.config)
    model = replace(model, seed=args.seed)
    model.check(cfg.patch_size, cfg.patch_size)
    if args.steps < 0:
        raise CliError(f"--steps must be non-negative, got {args.steps}")
    if args.data is not None:
        load_manifest(args.data)
    out = Path(args.out)
    _require_dir_for(out)
    metrics = out.with_suffix(".csv")

    def log(row):
        if row["val_psnr_rr"] is not None:
            print(f"step {row['step']} loss {row['loss']:.6f} val_psnr_rr {row['val_psnr_rr']:.3f} "
                  f"val_psnr_rs {row['val_psnr_rs']:.3f}", flush=True)

    result = train(model, args.data, args.steps, args.seed, cfg, metrics_path=metrics, log=log)
    write_checkpoint(out, result)
    print(f"checkpoint {out}, metrics {metrics}")
    return 0


def cmd_restore(args) -> int:
    ckpt_path, in_path, out_path = Path(args.ckpt), Path(args.inp), Path(args.out)
    _require_file(ckpt_path)
    _require_file(in_path)
    _require_dir_for(out_path)
    if args.render:
        _require_dir_for(Path(args.render))
    w = load_weights(load_checkpoint(ckpt_path))
    raw = read_raw(in_path)
    restored = forward(raw, w)
    write_raw(out_path, restored)
    if args.render:
        write_ppm(args.render, simple_isp(restored))
    return 0


def cmd_eval(args) -> int:
    pred_path, gt_path = Path(args.pred), Path(args.gt)
    _require_file(pred_path)
    _require_file(gt_path)
    isp = parse_isp(args.isp_params)
    report = eval_pair(read_raw(pred_path), read_raw(gt_path), **isp)
    for name in ("psnr_rr", "ssim_rr", "psnr_rs", "ssim_rs"):
        print(f"{name} = {getattr(report, name)!r}")
    return 0


def cmd_flops(args) -> int:
    if args.config is not None:
        _require_file(Path(args.config))
    model, _ = read_run_config(args.config)
    h, w = parse_extent(args.input)
    report = flops_model(model, h, w)
    print(flops_markdown(report), end="")
    if args.sweep:
        sizes = parse_sweep(args.sweep)
        d_k = model.stage_channels(0) // model.heads(0)
        print()
        print(sweep_markdown(sizes, d_k, model.heads(0), h, w), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="elmformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic clean/noisy raw pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--noise", choices=NOISE_KINDS, required=True)
    p.add_argument("--params", default="", help="e.g. sigma=0.1 or shot=0.01,read=0.02")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train and write a checkpoint plus a metrics CSV")
    p.add_argument("--data", default=None, help="gen-data directory; omitted means on-the-fly synthetic scenes")
    p.add_argument("--config", default=None)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", help="run a checkpoint on one raw file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--render", default=None)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="PSNR/SSIM of a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--isp-params", default=None, help="wb_r=..,wb_b=..,gamma=..")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="multiply-add profile of a model config")
    p.add_argument("--config", default=None)
    p.add_argument("--input", required=True, help="HxW")
    p.add_argument("--sweep", default=None, help="M=2,4,8")
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as e:
        print(f"{ERROR_PREFIX} usage: {e}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, KeyError) as e:
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"{ERROR_PREFIX} {args.command}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
