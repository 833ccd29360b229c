"""Differentiable primitives on :class:`Tensor`.

Every op returns a new tensor whose backward closure maps the output
gradient to one gradient per parent (``None`` for non-differentiable
inputs).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .tensor import ShapeError, Tensor, as_tensor, record_macs


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, (a, b),
                           lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, (a, b),
                           lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad * bd
    record_macs("elementwise", out.size)
    return Tensor._from_op(out, (a, b),
                           lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._from_op(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._from_op(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._from_op(out, (a,), lambda g: (0.5 * g / out,))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    record_macs("activation", out.size)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    record_macs("activation", x.size)

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return Tensor._from_op(x * cdf, (a,), backward)


def activation(kind: str, t: Tensor) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(t)
    if kind == "gelu":
        return gelu(t)
    raise ValueError(f"unknown activation {kind!r}")


# reductions -----------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor._from_op(np.asarray(a.data.sum()), (a,),
                           lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return Tensor._from_op(np.asarray(a.data.mean()), (a,),
                           lambda g: (np.full(shape, float(g) / n),))


# shape movement -----------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                           lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, parts, backward)


def split(a: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    """Split along ``axis`` into consecutive pieces of the given sizes."""
    if sum(sizes) != a.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover extent {a.shape[axis]}")
    out, start = [], 0
    for n in sizes:
        out.append(take_slice(a, axis, start, start + n))
        start += n
    return out


def take_slice(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return Tensor._from_op(a.data[idx].copy(), (a,), backward)


def gather(table: Tensor, index: np.ndarray) -> Tensor:
    """Select ``table[..., index]`` along the last axis; backward scatter-adds."""
    index = np.asarray(index)
    flat = index.ravel()
    n = table.shape[-1]
    lead = table.shape[:-1]

    def backward(g):
        g2 = g.reshape(lead + (flat.size,))
        rows = g2.reshape(-1, flat.size)
        acc = np.stack([np.bincount(flat, weights=r, minlength=n) for r in rows])
        return (acc.reshape(table.shape),)

    return Tensor._from_op(table.data[..., index], (table,), backward)


# linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor, tag: str = "matmul") -> Tensor:
    """Batched matrix product over the last two axes with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    record_macs(tag, out.size * ad.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                # shared weight: fold all leading axes into one product
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return (None if ga is None else _unbroadcast(ga, ad.shape),
                None if gb is None else _unbroadcast(gb, bd.shape))

    return Tensor._from_op(out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None, tag: str = "linear") -> Tensor:
    """Token-wise affine map ``x @ weight + bias`` on the last axis."""
    y = matmul(x, weight, tag=tag)
    return y if bias is None else add(y, bias)


# normalisation --------------------------------------------------------------

def softmax_lastdim(t: Tensor) -> Tensor:
    x = t.data
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    record_macs("softmax", out.size)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(out, (t,), backward)


def layer_norm(t: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each token over the last axis, then apply gamma and beta."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = t.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    record_macs("norm", 2 * x.size)

    def backward(g):
        gg = _unbroadcast(g * xhat, gd.shape) if gamma.requires_grad else None
        gb = _unbroadcast(g, beta.data.shape) if beta.requires_grad else None
        gx = None
        if t.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return Tensor._from_op(xhat * gd + beta.data, (t, gamma, beta), backward)
