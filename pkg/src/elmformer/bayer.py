"""RGGB Bayer mosaics: packing, phase-preserving augmentation, synthetic
noise, a small deterministic ISP, and the on-disk raw container.

Raw values live in ``[0, 1]`` after ingestion. Only the RGGB phase is
supported; the 2x2 tile is

    R  G1
    G2 B
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .numerics import ShapeError

CFA_RGGB = "RGGB"
# (row, col) offset of R, G1, G2, B inside the tile
CHANNEL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))

RAW_MAGIC = b"ELMR"
RAW_VERSION = 1
_RAW_HEADER = struct.Struct("<4sIIIBB2x")


class RawFormatError(ValueError):
    """Raised for malformed raw container files."""


@dataclass
class RawImage:
    data: np.ndarray
    cfa: str = CFA_RGGB
    black_level: float = 0.0
    white_level: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.cfa != CFA_RGGB:
            raise ValueError(f"unsupported CFA pattern {self.cfa!r}; only RGGB is handled")
        if self.data.ndim != 2:
            raise ShapeError(f"raw image must be HxW, got {self.data.shape}")
        h, w = self.data.shape
        if h % 2 or w % 2 or h == 0 or w == 0:
            raise ShapeError(f"raw extents must be even, got {h}x{w}")

    @classmethod
    def from_sensor(cls, values, black_level: float, white_level: float, cfa: str = CFA_RGGB) -> "RawImage":
        """Normalise sensor counts into [0, 1]."""
        if white_level <= black_level:
            raise ValueError("white_level must exceed black_level")
        v = (np.asarray(values, dtype=np.float64) - black_level) / (white_level - black_level)
        return cls(np.clip(v, 0.0, 1.0), cfa, black_level, white_level)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class PackedRaw:
    channels: np.ndarray  # 4 x H/2 x W/2, order R, G1, G2, B

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 3 or self.channels.shape[0] != 4:
            raise ShapeError(f"packed raw must be 4xhxw, got {self.channels.shape}")


@dataclass
class SrgbImage:
    data: np.ndarray  # 3 x H x W, gamma encoded


# packing ------------------------------------------------------------------------

def pack_array(x: np.ndarray) -> np.ndarray:
    """``(..., H, W)`` mosaic to ``(..., 4, H/2, W/2)`` planes."""
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"cannot pack odd extents {h}x{w}")
    planes = x.reshape(*lead, h // 2, 2, w // 2, 2)
    n = len(lead)
    planes = planes.transpose(*range(n), n + 1, n + 3, n, n + 2)
    return np.ascontiguousarray(planes.reshape(*lead, 4, h // 2, w // 2))


def unpack_array(p: np.ndarray) -> np.ndarray:
    *lead, four, h, w = p.shape
    if four != 4:
        raise ShapeError(f"expected 4 planes, got {p.shape}")
    n = len(lead)
    x = p.reshape(*lead, 2, 2, h, w).transpose(*range(n), n + 2, n, n + 3, n + 1)
    return np.ascontiguousarray(x.reshape(*lead, 2 * h, 2 * w))


def pack(raw: RawImage) -> PackedRaw:
    return PackedRaw(pack_array(raw.data))


def unpack(packed: PackedRaw) -> RawImage:
    return RawImage(unpack_array(packed.channels))


def color_mask(h: int, w: int) -> np.ndarray:
    """Per-pixel channel index (0=R, 1=G1, 2=G2, 3=B) of an RGGB mosaic."""
    rows = np.arange(h)[:, None] % 2
    cols = np.arange(w)[None, :] % 2
    return rows * 2 + cols


# augmentation -----------------------------------------------------------------------

DIHEDRAL_NAMES = ("identity", "rot90", "rot180", "rot270", "flip_h", "flip_v", "transpose", "antitranspose")
# transforms that exchange the row and column axes swap which green shares
# a row with R (G1) and which shares a column (G2)
_SWAPS_AXES = (False, True, False, True, False, False, True, True)
_G_SWAP = np.array([0, 2, 1, 3])


def _spatial(a: np.ndarray, t: int) -> np.ndarray:
    if t == 0:
        return a
    if 1 <= t <= 3:
        return np.rot90(a, t, axes=(-2, -1))
    if t == 4:
        return a[..., :, ::-1]
    if t == 5:
        return a[..., ::-1, :]
    if t == 6:
        return np.swapaxes(a, -1, -2)
    return np.rot90(np.swapaxes(a, -1, -2), 2, axes=(-2, -1))


def augment_array(p: np.ndarray, transform: int) -> np.ndarray:
    """Apply dihedral element ``transform`` to ``(..., 4, h, w)`` packed planes."""
    if not isinstance(transform, (int, np.integer)) or not 0 <= transform < 8:
        raise ValueError(f"dihedral transform id must be in 0..7, got {transform!r}")
    out = _spatial(p, int(transform))
    if _SWAPS_AXES[transform]:
        out = out[..., _G_SWAP, :, :]
    return np.ascontiguousarray(out)


def augment(packed: PackedRaw, transform: int) -> PackedRaw:
    return PackedRaw(augment_array(packed.channels, transform))


def compose_dihedral(a: int, b: int) -> int:
    """Id of ``a`` applied after ``b``, found by acting on a probe grid."""
    probe = np.arange(6.0).reshape(2, 3)
    target = _spatial(_spatial(probe, b), a)
    for t in range(8):
        cand = _spatial(probe, t)
        if cand.shape == target.shape and np.array_equal(cand, target):
            return t
    raise AssertionError("dihedral group is not closed")


# noise -------------------------------------------------------------------------------

def _finish(raw: RawImage, values: np.ndarray, clip: bool) -> RawImage:
    if clip:
        values = np.clip(values, 0.0, 1.0)
    return RawImage(values, raw.cfa, raw.black_level, raw.white_level)


def add_awgn(raw: RawImage, sigma: float, seed=None, clip: bool = True) -> RawImage:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    return _finish(raw, raw.data + sigma * rng.standard_normal(raw.data.shape), clip)


def add_uniform(raw: RawImage, amplitude: float, seed=None, clip: bool = True) -> RawImage:
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    rng = np.random.default_rng(seed)
    return _finish(raw, raw.data + rng.uniform(-amplitude, amplitude, raw.data.shape), clip)


def add_shot_read(raw: RawImage, shot: float, read: float, seed=None, clip: bool = True) -> RawImage:
    """Heteroscedastic Gaussian: variance ``shot * v + read**2`` at value v."""
    if shot < 0 or read < 0:
        raise ValueError("shot and read must be non-negative")
    rng = np.random.default_rng(seed)
    std = np.sqrt(shot * np.clip(raw.data, 0.0, None) + read * read)
    return _finish(raw, raw.data + std * rng.standard_normal(raw.data.shape), clip)


NOISE_KINDS = ("awgn", "uniform", "shotread")


def add_noise(raw: RawImage, kind: str, params: dict, seed=None) -> RawImage:
    if kind == "awgn":
        return add_awgn(raw, params["sigma"], seed)
    if kind == "uniform":
        return add_uniform(raw, params["amplitude"], seed)
    if kind == "shotread":
        return add_shot_read(raw, params["shot"], params["read"], seed)
    raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


# ISP -----------------------------------------------------------------------------------

_K_GREEN = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
_K_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0


def demosaic_bilinear(mosaic: np.ndarray) -> np.ndarray:
    """HxW RGGB mosaic to 3xHxW linear RGB.

    Borders mirror without repeating the edge sample, which keeps the
    CFA phase of the padded ring.
    """
    cls = color_mask(*mosaic.shape)
    r = np.where(cls == 0, mosaic, 0.0)
    g = np.where((cls == 1) | (cls == 2), mosaic, 0.0)
    b = np.where(cls == 3, mosaic, 0.0)
    return np.stack([
        ndimage.correlate(r, _K_RB, mode="mirror"),
        ndimage.correlate(g, _K_GREEN, mode="mirror"),
        ndimage.correlate(b, _K_RB, mode="mirror"),
    ])


def simple_isp(raw: RawImage, wb: tuple[float, float] = (1.0, 1.0), gamma: float = 2.2) -> SrgbImage:
    """White balance, bilinear demosaic, clamp, then ``v ** (1/gamma)``."""
    r_gain, b_gain = wb
    if r_gain <= 0 or b_gain <= 0 or gamma <= 0:
        raise ValueError("white-balance gains and gamma must be positive")
    cls = color_mask(raw.height, raw.width)
    m = raw.data.copy()
    m[cls == 0] *= r_gain
    m[cls == 3] *= b_gain
    rgb = np.clip(demosaic_bilinear(m), 0.0, 1.0)
    return SrgbImage(rgb ** (1.0 / gamma))


# cropping --------------------------------------------------------------------------------

def random_crop_pair(clean: RawImage, degraded: RawImage, size: int, seed=None):
    """Aligned ``size``x``size`` crops at an even origin.

    Returns ``(clean_crop, degraded_crop, (y0, x0))``.
    """
    if clean.data.shape != degraded.data.shape:
        raise ShapeError(f"pair extents differ: {clean.data.shape} vs {degraded.data.shape}")
    h, w = clean.data.shape
    if size % 2 or size <= 0:
        raise ValueError(f"crop size must be even and positive, got {size}")
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds image {h}x{w}")
    rng = np.random.default_rng(seed)
    y0 = 2 * int(rng.integers(0, (h - size) // 2 + 1))
    x0 = 2 * int(rng.integers(0, (w - size) // 2 + 1))
    sl = (slice(y0, y0 + size), slice(x0, x0 + size))
    return (RawImage(clean.data[sl].copy(), clean.cfa, clean.black_level, clean.white_level),
            RawImage(degraded.data[sl].copy(), degraded.cfa, degraded.black_level, degraded.white_level),
            (y0, x0))


# file formats -------------------------------------------------------------------------------

def write_raw(path, raw: RawImage) -> None:
    h, w = raw.data.shape
    header = _RAW_HEADER.pack(RAW_MAGIC, RAW_VERSION, h, w, 0, 0)
    Path(path).write_bytes(header + raw.data.astype("<f4").tobytes())


def read_raw(path) -> RawImage:
    blob = Path(path).read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise RawFormatError(f"{path}: truncated header")
    magic, version, h, w, cfa, dtype = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise RawFormatError(f"{path}: bad magic {magic!r}")
    if version != RAW_VERSION:
        raise RawFormatError(f"{path}: unsupported version {version}")
    if cfa != 0 or dtype != 0:
        raise RawFormatError(f"{path}: unsupported cfa/dtype codes {cfa}/{dtype}")
    body = blob[_RAW_HEADER.size:]
    if len(body) != 4 * h * w:
        raise RawFormatError(f"{path}: expected {4 * h * w} data bytes, found {len(body)}")
    data = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(h, w)
    return RawImage(data)


def write_ppm(path, img: SrgbImage) -> None:
    _, h, w = img.data.shape
    px = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + px.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Binary PPM as written by :func:`write_ppm` to a 3xHxW uint8 array."""
    blob = Path(path).read_bytes()
    lines = blob.split(b"\n", 3)
    if len(lines) < 4 or lines[0] != b"P6":
        raise RawFormatError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in lines[1].split())
    if int(lines[2]) != 255:
        raise RawFormatError(f"{path}: unsupported maxval {lines[2]!r}")
    px = np.frombuffer(lines[3], dtype=np.uint8)
    if px.size != 3 * w * h:
        raise RawFormatError(f"{path}: truncated pixel data")
    return px.reshape(h, w, 3).transpose(2, 0, 1)
