"""Losses, AdamW with cosine decay, and the deterministic training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import params as P
from .bayer import RawImage, add_noise, simple_isp
from .data import PairDataset, SyntheticSource, parse_noise_params, sample_batch, synthetic_scene
from .evaluation import psnr
from .network import Checkpoint, ElmformerConfig, ElmformerWeights, OptimizerMoments, build, forward_tensor
from .numerics import ShapeError, Tensor, no_grad, ops

LOSS_TAGS = ("l1", "l2", "charbonnier")
METRIC_COLUMNS = ("step", "lr", "loss", "val_psnr_rr", "val_psnr_rs")


@dataclass(frozen=True)
class LossKind:
    tag: str = "l1"
    eps: float = 1e-3

    def __post_init__(self):
        if self.tag not in LOSS_TAGS:
            raise ValueError(f"unknown loss {self.tag!r}; expected one of {LOSS_TAGS}")
        if self.tag == "charbonnier" and not self.eps > 0:
            raise ValueError(f"charbonnier eps must be positive, got {self.eps}")


def loss_tensor(pred: Tensor, target, kind: LossKind) -> Tensor:
    """Differentiable mean of ``|d|``, ``d²`` or ``sqrt(d² + eps²)`` with ``d = pred - target``."""
    target_data = target.data if isinstance(target, (Tensor, RawImage)) else np.asarray(target, float)
    if pred.shape != target_data.shape:
        raise ShapeError(f"loss extents differ: {pred.shape} vs {target_data.shape}")
    d = ops.sub(pred, Tensor(target_data))
    if kind.tag == "l1":
        per = ops.absolute(d)
    elif kind.tag == "l2":
        per = ops.square(d)
    else:
        per = ops.sqrt(ops.add(ops.square(d), kind.eps ** 2))
    return ops.mean_all(per)


def loss(pred, target, kind: LossKind = LossKind()) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to ``pred``."""
    p = Tensor(pred.data if isinstance(pred, (RawImage, Tensor)) else np.asarray(pred, float),
               requires_grad=True)
    value = loss_tensor(p, target, kind)
    value.backward()
    return float(value.data), p.grad


def cosine_lr(step: int, total_steps: int, lr0: float = 4e-4, lr_min: float = 1e-6) -> float:
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TrainState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr0: float = 4e-4
    lr_min: float = 1e-6
    total_steps: int = 1
    seed: int = 0

    @classmethod
    def for_params(cls, params: list, **kw) -> "TrainState":
        shapes = [np.shape(getattr(p, "data", p)) for p in params]
        return cls([np.zeros(s) for s in shapes], [np.zeros(s) for s in shapes], **kw)


def adamw_step(params: list, grads: list[np.ndarray], state: TrainState, lr: float, wd: float = 0.02,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place AdamW: ``p -= lr·wd·p`` plus the bias-corrected Adam step.

    ``params`` may hold Tensors or float arrays.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        data = p.data if isinstance(p, Tensor) else p
        if np.shape(g) != data.shape:
            raise ShapeError(f"parameter {i}: gradient {np.shape(g)} vs value {data.shape}")
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = lr * wd * data + lr * (m / c1) / (np.sqrt(v / c2) + eps)
        data -= update


@dataclass
class TrainConfig:
    """Loop, optimiser and data settings (desk-scale defaults, chosen for a CPU run)."""

    batch_size: int = 4
    patch_size: int = 64
    lr0: float = 4e-4
    lr_min: float = 1e-6
    weight_decay: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    loss: str = "l1"
    charbonnier_eps: float = 1e-3
    noise: str = "awgn"
    noise_params: str = "sigma=0.09803921568627451"
    augment: bool = True
    val_every: int = 100
    val_count: int = 8
    val_size: int = 64
    val_seed: int = 20240101


@dataclass
class ValidationSet:
    clean: list[RawImage]
    noisy: list[RawImage]

    @classmethod
    def synthetic(cls, cfg: TrainConfig) -> "ValidationSet":
        params = parse_noise_params(cfg.noise, cfg.noise_params)
        rng = np.random.default_rng(cfg.val_seed)
        clean, noisy = [], []
        for _ in range(cfg.val_count):
            c = synthetic_scene(cfg.val_size, rng)
            clean.append(c)
            noisy.append(add_noise(c, cfg.noise, params, int(rng.integers(2 ** 63))))
        return cls(clean, noisy)

    def psnr_pair(self, restored: list[np.ndarray]) -> tuple[float, float]:
        """Mean raw/raw and raw/sRGB PSNR of ``restored`` against the clean set."""
        rr, rs = [], []
        for out, c in zip(restored, self.clean):
            out = np.clip(out, 0.0, 1.0)
            rr.append(psnr(out, c.data))
            rs.append(psnr(simple_isp(RawImage(out)).data, simple_isp(c).data))
        return float(np.mean(rr)), float(np.mean(rs))

    def baseline(self) -> tuple[float, float]:
        return self.psnr_pair([n.data for n in self.noisy])

    def evaluate(self, w: ElmformerWeights) -> tuple[float, float]:
        x = np.stack([n.data for n in self.noisy])[:, None]
        with no_grad():
            out = forward_tensor(Tensor(x), w).data[:, 0]
        return self.psnr_pair(list(out))


@dataclass
class TrainResult:
    weights: ElmformerWeights
    checkpoint: Checkpoint
    rows: list[dict] = field(default_factory=list)
    baseline_psnr_rr: float = float("nan")
    baseline_psnr_rs: float = float("nan")

    @property
    def final_val(self) -> tuple[float, float]:
        for row in reversed(self.rows):
            if row["val_psnr_rr"] is not None:
                return row["val_psnr_rr"], row["val_psnr_rs"]
        return float("nan"), float("nan")


def train(model: ElmformerConfig, dataset, steps: int, seed: int, cfg: TrainConfig | None = None,
          metrics_path=None, log=None) -> TrainResult:
    """Train from ``build(model with seed)``.

    ``dataset`` is a PairDataset, a directory written by ``generate_dataset``,
    or None for on-the-fly synthetic scenes. Batch ``t`` is drawn from a
    generator seeded with ``(seed, t)``, so runs are reproducible bit for bit.
    Validation runs every ``val_every`` steps and after the last step.
    """
    cfg = cfg or TrainConfig()
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    kind = LossKind(cfg.loss, cfg.charbonnier_eps)
    model = replace(model, seed=seed)
    w = build(model, cfg.patch_size, cfg.patch_size)
    if dataset is None:
        source = SyntheticSource(cfg.noise, parse_noise_params(cfg.noise, cfg.noise_params))
    elif isinstance(dataset, PairDataset):
        source = dataset
    else:
        source = PairDataset.from_dir(dataset)
    params = P.parameters(w)
    state = TrainState.for_params(params, lr0=cfg.lr0, lr_min=cfg.lr_min, total_steps=max(steps, 1), seed=seed)
    val = ValidationSet.synthetic(cfg)
    base_rr, base_rs = val.baseline()

    writer = None
    handle = None
    if metrics_path is not None:
        handle = open(metrics_path, "w", newline="")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
    rows = []
    try:
        for step in range(1, steps + 1):
            rng = np.random.default_rng([seed, step])
            noisy, clean = sample_batch(source, cfg.batch_size, cfg.patch_size, rng, cfg.augment)
            P.zero_grad(w)
            value = loss_tensor(forward_tensor(Tensor(noisy), w), clean, kind)
            value.backward()
            lr = cosine_lr(step - 1, steps, cfg.lr0, cfg.lr_min)
            adamw_step(params, [p.grad if p.grad is not None else np.zeros(p.shape) for p in params],
                       state, lr, cfg.weight_decay, (cfg.beta1, cfg.beta2))
            vr = vs = None
            if step % cfg.val_every == 0 or step == steps:
                vr, vs = val.evaluate(w)
            row = {"step": step, "lr": lr, "loss": float(value.data), "val_psnr_rr": vr, "val_psnr_rs": vs}
            rows.append(row)
            if writer is not None:
                writer.writerow([step, repr(lr), repr(row["loss"]),
                                 "" if vr is None else repr(vr), "" if vs is None else repr(vs)])
                handle.flush()
            if log is not None:
                log(row)
    finally:
        if handle is not None:
            handle.close()

    moments = OptimizerMoments(state.step, np.concatenate([m.ravel() for m in state.m]) if params else np.zeros(0),
                               np.concatenate([v.ravel() for v in state.v]) if params else np.zeros(0))
    extra = {"baseline_psnr_rr": repr(base_rr), "baseline_psnr_rs": repr(base_rs)}
    ckpt = Checkpoint(model, P.flatten(w), steps, moments, extra)
    return TrainResult(w, ckpt, rows, base_rr, base_rs)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_checkpoint(path, result: TrainResult) -> None:
    from .network import save_checkpoint

    ck = result.checkpoint
    save_checkpoint(path, result.weights, ck.step, ck.optimizer, ck.extra)
