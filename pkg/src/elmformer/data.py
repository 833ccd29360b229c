"""Procedural clean scenes, generated datasets on disk, and seed-driven batch sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bayer import (
    CHANNEL_OFFSETS,
    NOISE_KINDS,
    RawImage,
    add_noise,
    augment_array,
    pack_array,
    random_crop_pair,
    read_raw,
    unpack_array,
    write_raw,
)

MANIFEST = "manifest.json"
_RGB_OF_CHANNEL = (0, 1, 1, 2)


def mosaic_rgb(rgb: np.ndarray) -> np.ndarray:
    """Sample a ``3×H×W`` image through an RGGB filter array."""
    _, H, W = rgb.shape
    out = np.empty((H, W))
    for c, (r0, c0) in enumerate(CHANNEL_OFFSETS):
        out[r0::2, c0::2] = rgb[_RGB_OF_CHANNEL[c], r0::2, c0::2]
    return out


def synthetic_scene(size: int, rng: np.random.Generator) -> RawImage:
    """Smooth colour gradients with a few flat rectangles and discs, mosaiced.

    Values stay inside [0.05, 0.95] so moderate noise rarely clips.
    """
    if size % 2 or size <= 0:
        raise ValueError(f"scene size must be even and positive, got {size}")
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    rgb = np.empty((3, size, size))
    for c in range(3):
        a, b, base = rng.uniform(-0.4, 0.4, 2).tolist() + [rng.uniform(0.3, 0.7)]
        rgb[c] = base + a * (yy - 0.5) + b * (xx - 0.5)
    for _ in range(int(rng.integers(2, 6))):
        colour = rng.uniform(0.05, 0.95, 3)[:, None]
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, size, 2)
            hh, ww = rng.integers(size // 8, size // 2 + 1, 2)
            mask = (yy * (size - 1) >= y0) & (yy * (size - 1) < y0 + hh) & \
                   (xx * (size - 1) >= x0) & (xx * (size - 1) < x0 + ww)
        else:
            cy, cx = rng.uniform(0, 1, 2)
            rad = rng.uniform(0.08, 0.3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
        rgb[:, mask] = colour
    return RawImage(np.clip(mosaic_rgb(rgb), 0.05, 0.95))


def parse_noise_params(kind: str, text: str | dict) -> dict[str, float]:
    """``"sigma=0.1"`` style text (comma separated) to a checked parameter dict."""
    needed = {"awgn": ("sigma",), "uniform": ("amplitude",), "shotread": ("shot", "read")}
    if kind not in needed:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    if isinstance(text, dict):
        params = {k: float(v) for k, v in text.items()}
    else:
        params = {}
        for item in filter(None, (p.strip() for p in text.split(","))):
            if "=" not in item:
                raise ValueError(f"noise parameter {item!r} is not name=value")
            k, v = (s.strip() for s in item.split("=", 1))
            try:
                params[k] = float(v)
            except ValueError:
                raise ValueError(f"noise parameter {k}: {v!r} is not a number") from None
    if set(params) != set(needed[kind]):
        raise ValueError(f"{kind} noise takes {list(needed[kind])}, got {sorted(params)}")
    if any(v < 0 for v in params.values()):
        raise ValueError(f"noise parameters must be non-negative, got {params}")
    return params


def pair_seeds(seed: int, index: int) -> tuple[int, int]:
    """Independent (scene, noise) seeds for dataset entry ``index``."""
    ss = np.random.SeedSequence([seed, index])
    a, b = ss.generate_state(2)
    return int(a), int(b)


def generate_dataset(out: Path, count: int, size: int, noise: str, params: dict, seed: int) -> dict:
    """Write ``count`` clean/noisy pairs plus a JSON manifest; returns the manifest."""
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    if size % 2 or size <= 0:
        raise ValueError(f"size must be even and positive, got {size}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i in range(count):
        scene_seed, noise_seed = pair_seeds(seed, i)
        clean = synthetic_scene(size, np.random.default_rng(scene_seed))
        noisy = add_noise(clean, noise, params, noise_seed)
        names = (f"clean_{i:05d}.elmr", f"noisy_{i:05d}.elmr")
        write_raw(out / names[0], clean)
        write_raw(out / names[1], noisy)
        pairs.append({"clean": names[0], "noisy": names[1], "scene_seed": scene_seed, "noise_seed": noise_seed})
    manifest = {"seed": seed, "size": size, "noise": noise, "params": params, "pairs": pairs}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_manifest(root) -> dict:
    path = Path(root) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no dataset manifest") from None
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: malformed manifest ({e})") from None
    if not manifest.get("pairs"):
        raise ValueError(f"{path}: dataset is empty")
    return manifest


@dataclass
class PairDataset:
    clean: list[RawImage]
    noisy: list[RawImage]

    @classmethod
    def from_dir(cls, root) -> "PairDataset":
        root = Path(root)
        manifest = load_manifest(root)
        clean, noisy = [], []
        for p in manifest["pairs"]:
            clean.append(read_raw(root / p["clean"]))
            noisy.append(read_raw(root / p["noisy"]))
        return cls(clean, noisy)

    def __len__(self) -> int:
        return len(self.clean)


@dataclass(frozen=True)
class SyntheticSource:
    """Fresh procedural scenes each draw, degraded on the fly."""

    noise: str
    params: dict


def augment_raw(raw: np.ndarray, transform: int) -> np.ndarray:
    return unpack_array(augment_array(pack_array(raw), transform))


def sample_batch(source, batch: int, patch: int, rng: np.random.Generator,
                 augment: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(noisy, clean)`` arrays of shape ``batch×1×patch×patch``.

    Every random choice comes from ``rng`` in a fixed order.
    """
    noisy = np.empty((batch, 1, patch, patch))
    clean = np.empty_like(noisy)
    for i in range(batch):
        if isinstance(source, SyntheticSource):
            c = synthetic_scene(patch, rng)
            n = add_noise(c, source.noise, source.params, int(rng.integers(2 ** 63)))
        else:
            k = int(rng.integers(len(source)))
            c, n, _ = random_crop_pair(source.clean[k], source.noisy[k], patch, int(rng.integers(2 ** 63)))
        t = int(rng.integers(8)) if augment else 0
        clean[i, 0] = augment_raw(c.data, t)
        noisy[i, 0] = augment_raw(n.data, t)
    return noisy, clean
