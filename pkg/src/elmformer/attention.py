"""Lm-Win transformer block.

Windowed multi-head attention (with a learned relative position bias) and
2x2 sub-window attention are computed from the same normalised windows;
their per-head outputs are multiplied elementwise, concatenated, projected,
and added back. A locally-enhanced feed-forward (linear, GELU, depthwise
3x3, GELU, linear) follows with its own residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import params as P
from .numerics import (
    ConfigError,
    ConvSpec,
    ShapeError,
    Tensor,
    conv2d,
    layer_norm,
    linear,
    matmul,
    ops,
    softmax_lastdim,
    subwindow_rearrange,
    subwindow_restore,
    window_partition,
    window_reverse,
)


@dataclass
class WmsaWeights:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    w_out: Tensor
    b_out: Tensor
    bias_table: Tensor  # heads x (2M-1)^2
    heads: int
    window: int


@dataclass
class LmsaWeights:
    pq: Tensor
    bq: Tensor
    pk: Tensor
    bk: Tensor
    pv: Tensor
    bv: Tensor
    heads: int


@dataclass
class LeffWeights:
    w_expand: Tensor
    b_expand: Tensor
    dw_kernel: Tensor
    dw_bias: Tensor
    w_contract: Tensor
    b_contract: Tensor


@dataclass
class BlockWeights:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    wmsa: WmsaWeights
    lmsa: LmsaWeights
    ln2_gamma: Tensor
    ln2_beta: Tensor
    leff: LeffWeights


LEFF_RATIO = 4
LN_EPS = 1e-5


def init_block(channels: int, heads: int, window: int, rng: np.random.Generator) -> BlockWeights:
    if channels % heads:
        raise ConfigError(f"{channels} channels not divisible by {heads} heads")
    C, hid = channels, LEFF_RATIO * channels

    def tn(*shape):
        return P.trunc_normal(rng, shape)

    wmsa = WmsaWeights(tn(C, C), P.zeros(C), tn(C, C), P.zeros(C), tn(C, C), P.zeros(C),
                       tn(C, C), P.zeros(C), P.zeros(heads, (2 * window - 1) ** 2), heads, window)
    lmsa = LmsaWeights(tn(C, C), P.zeros(C), tn(C, C), P.zeros(C), tn(C, C), P.zeros(C), heads)
    leff = LeffWeights(tn(C, hid), P.zeros(hid), P.conv_uniform(rng, (hid, 1, 3, 3)), P.zeros(hid),
                       tn(hid, C), P.zeros(C))
    return BlockWeights(P.ones(C), P.zeros(C), wmsa, lmsa, P.ones(C), P.zeros(C), leff)


# relative position bias ----------------------------------------------------------

def relative_position_index(M: int) -> np.ndarray:
    """``M²×M²`` table offsets: ``(dh + M-1)(2M-1) + (dw + M-1)`` for ``pos(p) - pos(q)``."""
    coords = np.stack(np.meshgrid(np.arange(M), np.arange(M), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    return (rel[0] + M - 1) * (2 * M - 1) + (rel[1] + M - 1)


def relative_position_bias(M: int, bias_table: Tensor) -> Tensor:
    """Per-head ``heads×M²×M²`` bias gathered from a ``heads×(2M-1)²`` table."""
    if bias_table.ndim == 1:
        bias_table = ops.reshape(bias_table, (1, bias_table.shape[0]))
    if bias_table.shape[-1] != (2 * M - 1) ** 2:
        raise ConfigError(f"bias table has {bias_table.shape[-1]} entries per head, "
                          f"window {M} needs {(2 * M - 1) ** 2}")
    return ops.gather(bias_table, relative_position_index(M))


# attention ----------------------------------------------------------------------------

def _heads(x: Tensor, heads: int) -> Tensor:
    """``(N, T, C)`` to ``(N, heads, T, C/heads)``."""
    N, T, C = x.shape
    return ops.permute(ops.reshape(x, (N, T, heads, C // heads)), (0, 2, 1, 3))


def _check_heads(C: int, heads: int) -> None:
    if heads < 1 or C % heads:
        raise ConfigError(f"{C} channels cannot be split into {heads} heads")


def wmsa(windows: Tensor, w: WmsaWeights) -> Tensor:
    """Window attention; returns unconcatenated heads ``N×k×M²×d_k``."""
    N, T, C = windows.shape
    _check_heads(C, w.heads)
    if w.wq.shape != (C, C):
        raise ConfigError(f"W^Q is {w.wq.shape}, windows carry {C} channels")
    M = w.window
    if T != M * M:
        raise ShapeError(f"windows hold {T} tokens, expected {M}x{M}")
    d = C // w.heads
    q = _heads(linear(windows, w.wq, w.bq, tag="wmsa_proj"), w.heads)
    k = _heads(linear(windows, w.wk, w.bk, tag="wmsa_proj"), w.heads)
    v = _heads(linear(windows, w.wv, w.bv, tag="wmsa_proj"), w.heads)
    scores = matmul(ops.scale(q, 1.0 / math.sqrt(d)), ops.permute(k, (0, 1, 3, 2)), tag="wmsa_qk")
    scores = ops.add(scores, relative_position_bias(M, w.bias_table))
    return matmul(softmax_lastdim(scores), v, tag="wmsa_av")


def lmsa(windows: Tensor, w: LmsaWeights) -> Tensor:
    """2x2 sub-window attention without position bias, restored to window order."""
    N, T, C = windows.shape
    _check_heads(C, w.heads)
    if w.pq.shape != (C, C):
        raise ConfigError(f"P^Q is {w.pq.shape}, windows carry {C} channels")
    d = C // w.heads
    q = subwindow_rearrange(_heads(linear(windows, w.pq, w.bq, tag="lmsa_proj"), w.heads))
    k = subwindow_rearrange(_heads(linear(windows, w.pk, w.bk, tag="lmsa_proj"), w.heads))
    v = subwindow_rearrange(_heads(linear(windows, w.pv, w.bv, tag="lmsa_proj"), w.heads))
    scores = matmul(ops.scale(q, 1.0 / math.sqrt(d)), ops.permute(k, (0, 1, 2, 4, 3)), tag="lmsa_qk")
    z = matmul(softmax_lastdim(scores), v, tag="lmsa_av")
    return subwindow_restore(z)


def fuse_heads(Y: Tensor, Z: Tensor, w_out: Tensor, b_out: Tensor | None = None) -> Tensor:
    """Per-head product, head concatenation, then the shared output projection."""
    if Y.shape != Z.shape:
        raise ShapeError(f"W-MSA heads {Y.shape} and L-MSA heads {Z.shape} differ")
    N, k, T, d = Y.shape
    prod = ops.mul(Y, Z)
    merged = ops.reshape(ops.permute(prod, (0, 2, 1, 3)), (N, T, k * d))
    return linear(merged, w_out, b_out, tag="attn_out")


# feed-forward -------------------------------------------------------------------------

def leff(tokens: Tensor, w: LeffWeights, spatial: tuple[int, int]) -> Tensor:
    """Token-wise expand, depthwise 3x3 over the spatial grid, contract."""
    h, wd = spatial
    single = tokens.ndim == 2
    if single:
        tokens = ops.reshape(tokens, (1,) + tokens.shape)
    B, n, C = tokens.shape
    if n != h * wd:
        raise ShapeError(f"{n} tokens do not form a {h}x{wd} grid")
    hid = w.w_expand.shape[1]
    x = ops.gelu(linear(tokens, w.w_expand, w.b_expand, tag="leff"))
    x = ops.permute(ops.reshape(x, (B, h, wd, hid)), (0, 3, 1, 2))
    x = conv2d(x, ConvSpec(3, 3, 1, 1, hid, hid, depthwise=True), w.dw_kernel, w.dw_bias)
    x = ops.gelu(x)
    x = ops.reshape(ops.permute(x, (0, 2, 3, 1)), (B, n, hid))
    out = linear(x, w.w_contract, w.b_contract, tag="leff")
    return ops.reshape(out, (n, C)) if single else out


# block ----------------------------------------------------------------------------------

def lmwin_block(x: Tensor, w: BlockWeights, M: int | None = None) -> Tensor:
    """One Lm-Win block on ``C×h×w`` (or ``B×C×h×w``) features."""
    single = x.ndim == 3
    if single:
        x = ops.reshape(x, (1,) + x.shape)
    B, C, h, wd = x.shape
    M = w.wmsa.window if M is None else M
    if M != w.wmsa.window:
        raise ConfigError(f"block weights were built for window {w.wmsa.window}, asked for {M}")
    if h % M or wd % M:
        raise ShapeError(f"feature {h}x{wd} not divisible by window {M}")
    win = window_partition(x, M)
    normed = layer_norm(win, w.ln1_gamma, w.ln1_beta, LN_EPS)
    att = fuse_heads(wmsa(normed, w.wmsa), lmsa(normed, w.lmsa), w.wmsa.w_out, w.wmsa.b_out)
    x_sa = window_reverse(ops.add(att, win), M, h, wd, batch=B)
    tokens = ops.reshape(ops.permute(x_sa, (0, 2, 3, 1)), (B, h * wd, C))
    ff = leff(layer_norm(tokens, w.ln2_gamma, w.ln2_beta, LN_EPS), w.leff, (h, wd))
    out = ops.permute(ops.reshape(ops.add(ff, tokens), (B, h, wd, C)), (0, 3, 1, 2))
    return ops.reshape(out, (C, h, wd)) if single else out
