"""2-D convolutions (cross-correlation, zero padding) and their transposes.

Inputs are ``C×H×W`` or batched ``B×C×H×W``. Kernels follow the usual
layouts: ``(C_out, C_in, kh, kw)`` for conv2d (``(C, 1, kh, kw)`` when
depthwise) and ``(C_in, C_out, kh, kw)`` for the transposed conv.

Both directions loop over kernel offsets and issue one channel product per
offset, which keeps the backward pass a mirror image of the forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ConfigError, ShapeError, Tensor, record_macs


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    in_channels: int = 1
    out_channels: int = 1
    depthwise: bool = False

    def __post_init__(self):
        if self.stride < 1 or self.padding < 0 or self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigError(f"invalid conv spec {self}")
        if self.depthwise and self.in_channels != self.out_channels:
            raise ConfigError("depthwise conv needs in_channels == out_channels")

    def out_extent(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv {self.kernel_h}x{self.kernel_w} s{self.stride} "
                             f"p{self.padding} leaves no output for {h}x{w}")
        return oh, ow

    def kernel_shape(self, transposed: bool = False) -> tuple[int, int, int, int]:
        if self.depthwise:
            return (self.in_channels, 1, self.kernel_h, self.kernel_w)
        if transposed:
            return (self.in_channels, self.out_channels, self.kernel_h, self.kernel_w)
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def transposed_out_extent(self, h: int, w: int) -> tuple[int, int]:
        oh = (h - 1) * self.stride - 2 * self.padding + self.kernel_h
        ow = (w - 1) * self.stride - 2 * self.padding + self.kernel_w
        if oh < 1 or ow < 1:
            raise ShapeError(f"transposed conv leaves no output for {h}x{w}")
        return oh, ow


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"conv input must be CxHxW or BxCxHxW, got {x.shape}")


def _check(spec: ConvSpec, x: np.ndarray, k: np.ndarray, bias, transposed: bool) -> None:
    if k.shape != spec.kernel_shape(transposed):
        raise ConfigError(f"kernel shape {k.shape} disagrees with spec {spec.kernel_shape(transposed)}")
    if x.shape[1] != spec.in_channels:
        raise ConfigError(f"input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ConfigError(f"bias shape {bias.shape} != ({spec.out_channels},)")


def _channel_mix(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``(O, C) · (B, C, h, w) -> (B, O, h, w)``."""
    b, c, h, ww = x.shape
    return np.matmul(w, x.reshape(b, c, h * ww)).reshape(b, w.shape[0], h, ww)


def conv2d(inp: Tensor, spec: ConvSpec, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    x, squeeze = _batched(inp.data)
    k = kernels.data
    _check(spec, x, k, None if bias is None else bias.data, transposed=False)
    B, C, H, W = x.shape
    oh, ow = spec.out_extent(H, W)
    s, p = spec.stride, spec.padding
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    O = spec.out_channels
    out = np.zeros((B, O, oh, ow))
    offsets = [(dy, dx) for dy in range(spec.kernel_h) for dx in range(spec.kernel_w)]

    def window(arr, dy, dx):
        return arr[:, :, dy:dy + s * (oh - 1) + 1:s, dx:dx + s * (ow - 1) + 1:s]

    for dy, dx in offsets:
        xs = window(xp, dy, dx)
        if spec.depthwise:
            out += xs * k[:, 0, dy, dx][None, :, None, None]
        else:
            out += _channel_mix(k[:, :, dy, dx], np.ascontiguousarray(xs))
    if spec.depthwise:
        record_macs("conv", out.size * len(offsets))
    else:
        record_macs("conv", out.size * C * len(offsets))
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        g4 = g[None] if squeeze else g
        gx = np.zeros_like(xp) if inp.requires_grad else None
        gk = np.zeros_like(k) if kernels.requires_grad else None
        for dy, dx in offsets:
            if gk is not None:
                xs = window(xp, dy, dx)
                if spec.depthwise:
                    gk[:, 0, dy, dx] = (g4 * xs).sum(axis=(0, 2, 3))
                else:
                    gk[:, :, dy, dx] = np.einsum("bohw,bchw->oc", g4, xs, optimize=True)
            if gx is not None:
                if spec.depthwise:
                    window(gx, dy, dx)[...] += g4 * k[:, 0, dy, dx][None, :, None, None]
                else:
                    window(gx, dy, dx)[...] += _channel_mix(k[:, :, dy, dx].T, g4)
        if gx is not None:
            if p:
                gx = gx[:, :, p:p + H, p:p + W]
            if squeeze:
                gx = gx[0]
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gk, gb

    parents = (inp, kernels) if bias is None else (inp, kernels, bias)
    return Tensor._from_op(out[0] if squeeze else out, parents, backward)


def transposed_conv2d(inp: Tensor, spec: ConvSpec, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Adjoint of :func:`conv2d` with the same stride/padding, plus a bias."""
    if spec.depthwise:
        raise ConfigError("depthwise transposed conv is not supported")
    x, squeeze = _batched(inp.data)
    k = kernels.data
    _check(spec, x, k, None if bias is None else bias.data, transposed=True)
    B, C, H, W = x.shape
    oh, ow = spec.transposed_out_extent(H, W)
    s, p = spec.stride, spec.padding
    O = spec.out_channels
    full = np.zeros((B, O, oh + 2 * p, ow + 2 * p))
    offsets = [(dy, dx) for dy in range(spec.kernel_h) for dx in range(spec.kernel_w)]

    def window(arr, dy, dx):
        return arr[:, :, dy:dy + s * (H - 1) + 1:s, dx:dx + s * (W - 1) + 1:s]

    for dy, dx in offsets:
        window(full, dy, dx)[...] += _channel_mix(k[:, :, dy, dx].T, x)
    record_macs("conv", x.size * O * len(offsets))
    out = full[:, :, p:p + oh, p:p + ow]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g4 = g[None] if squeeze else g
        gp = np.pad(g4, ((0, 0), (0, 0), (p, p), (p, p))) if p else g4
        gx = np.zeros_like(x) if inp.requires_grad else None
        gk = np.zeros_like(k) if kernels.requires_grad else None
        for dy, dx in offsets:
            gs = np.ascontiguousarray(window(gp, dy, dx))
            if gx is not None:
                gx += _channel_mix(k[:, :, dy, dx], gs)
            if gk is not None:
                gk[:, :, dy, dx] = np.einsum("bchw,bohw->co", x, gs, optimize=True)
        if gx is not None and squeeze:
            gx = gx[0]
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gk, gb

    out = np.ascontiguousarray(out)
    parents = (inp, kernels) if bias is None else (inp, kernels, bias)
    return Tensor._from_op(out[0] if squeeze else out, parents, backward)
