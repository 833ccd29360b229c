"""Bi-directional fusion projection from a 1xHxW mosaic to CxH/2xW/2 features.

Two half-width routes are built from the same mosaic:

* colour route: pack to RGGB planes, 3x3 conv
* spatial route: 3x3 stride-2 conv straight on the mosaic

Each route is gated by a sigmoid of a 1x1 conv applied to the *other*
route, and the gated maps are concatenated spatial-first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import params as P
from .bayer import RawImage
from .numerics import ConvSpec, ShapeError, Tensor, conv2d, ops


@dataclass
class BfpWeights:
    conv_pack_3x3: Tensor
    conv_pack_3x3_bias: Tensor
    conv_ds_3x3: Tensor
    conv_ds_3x3_bias: Tensor
    conv_color_1x1: Tensor
    conv_color_1x1_bias: Tensor
    conv_spatial_1x1: Tensor
    conv_spatial_1x1_bias: Tensor

    @property
    def channels(self) -> int:
        return 2 * self.conv_pack_3x3.shape[0]


def init_bfp(channels: int, rng: np.random.Generator) -> BfpWeights:
    if channels % 2:
        raise ValueError(f"BFP width must be even, got {channels}")
    h = channels // 2
    return BfpWeights(
        P.conv_uniform(rng, (h, 4, 3, 3)), P.zeros(h),
        P.conv_uniform(rng, (h, 1, 3, 3)), P.zeros(h),
        P.conv_uniform(rng, (h, h, 1, 1)), P.zeros(h),
        P.conv_uniform(rng, (h, h, 1, 1)), P.zeros(h),
    )


def pack_tensor(x: Tensor) -> Tensor:
    """Differentiable RGGB packing of ``B×1×H×W`` to ``B×4×H/2×W/2``."""
    B, one, H, W = x.shape
    if one != 1:
        raise ShapeError(f"packing expects one input channel, got {one}")
    if H % 2 or W % 2:
        raise ShapeError(f"raw extents must be even, got {H}x{W}")
    y = ops.reshape(x, (B, H // 2, 2, W // 2, 2))
    y = ops.permute(y, (0, 2, 4, 1, 3))
    return ops.reshape(y, (B, 4, H // 2, W // 2))


def as_batch(raw) -> tuple[Tensor, bool]:
    """Coerce a RawImage, ``H×W``, ``1×H×W`` or ``B×1×H×W`` input to ``B×1×H×W``."""
    if isinstance(raw, RawImage):
        return Tensor(raw.data[None, None]), True
    t = raw if isinstance(raw, Tensor) else Tensor(raw)
    if t.ndim == 2:
        return ops.reshape(t, (1, 1) + t.shape), True
    if t.ndim == 3:
        return ops.reshape(t, (1,) + t.shape), True
    if t.ndim == 4:
        return t, False
    raise ShapeError(f"cannot interpret input of shape {t.shape} as raw")


def bfp_forward(raw, w: BfpWeights) -> Tensor:
    x, single = as_batch(raw)
    B, _, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"raw extents must be even, got {H}x{W}")
    if H // 2 < 3 or W // 2 < 3:
        raise ShapeError(f"raw {H}x{W} too small for the projection")
    h = w.channels // 2
    packed = pack_tensor(x)
    color = conv2d(packed, ConvSpec(3, 3, 1, 1, 4, h), w.conv_pack_3x3, w.conv_pack_3x3_bias)
    spatial = conv2d(x, ConvSpec(3, 3, 2, 1, 1, h), w.conv_ds_3x3, w.conv_ds_3x3_bias)
    gate_from_color = ops.sigmoid(conv2d(color, ConvSpec(1, 1, 1, 0, h, h), w.conv_color_1x1, w.conv_color_1x1_bias))
    gate_from_spatial = ops.sigmoid(conv2d(spatial, ConvSpec(1, 1, 1, 0, h, h), w.conv_spatial_1x1, w.conv_spatial_1x1_bias))
    f_spatial = ops.mul(spatial, gate_from_color)
    f_color = ops.mul(color, gate_from_spatial)
    out = ops.concat([f_spatial, f_color], axis=1)
    if single:
        out = ops.reshape(out, out.shape[1:])
    return out
