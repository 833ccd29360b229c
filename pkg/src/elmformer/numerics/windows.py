"""Window partitioning and 2x2 sub-window regrouping of feature maps.

Tokens inside a window are flattened row-major. Inside a sub-window the
four tokens are ordered top-left, top-right, bottom-left, bottom-right,
i.e. the R, G1, G2, B positions of an RGGB tile.
"""

from __future__ import annotations

from . import ops
from .tensor import ShapeError, Tensor


def window_partition(t: Tensor, M: int) -> Tensor:
    """``C×H×W`` (or ``B×C×H×W``) to ``N×M²×C`` windows, N = B·HW/M²."""
    batched = t.ndim == 4
    if t.ndim not in (3, 4):
        raise ShapeError(f"window_partition expects CxHxW or BxCxHxW, got {t.shape}")
    B = t.shape[0] if batched else 1
    C, H, W = t.shape[-3:]
    if H % M or W % M:
        raise ShapeError(f"H={H}, W={W} not divisible by window size M={M}")
    x = ops.reshape(t, (B, C, H // M, M, W // M, M))
    x = ops.permute(x, (0, 2, 4, 3, 5, 1))
    return ops.reshape(x, (B * (H // M) * (W // M), M * M, C))


def window_reverse(windows: Tensor, M: int, H: int, W: int, batch: int | None = None) -> Tensor:
    """Inverse of :func:`window_partition`; returns ``B×C×H×W`` when ``batch`` is given."""
    N, T, C = windows.shape
    if T != M * M or H % M or W % M:
        raise ShapeError(f"cannot restore {windows.shape} windows to H={H}, W={W}, M={M}")
    per = (H // M) * (W // M)
    B = N // per
    if B * per != N or (batch is not None and batch != B):
        raise ShapeError(f"{N} windows do not tile H={H}, W={W}, M={M}")
    x = ops.reshape(windows, (B, H // M, W // M, M, M, C))
    x = ops.permute(x, (0, 5, 1, 3, 2, 4))
    if batch is None and B == 1:
        return ops.reshape(x, (C, H, W))
    return ops.reshape(x, (B, C, H, W))


def _side(tokens: int) -> int:
    M = int(round(tokens ** 0.5))
    if M * M != tokens:
        raise ShapeError(f"{tokens} tokens is not a square window")
    if M % 2:
        raise ShapeError(f"sub-windows need an even window size, got M={M}")
    return M


def subwindow_rearrange(windows: Tensor) -> Tensor:
    """``(..., M², C)`` to ``(..., M²/4, 4, C)`` grouped by 2x2 sub-window."""
    *lead, T, C = windows.shape
    M = _side(T)
    h = M // 2
    x = ops.reshape(windows, (*lead, h, 2, h, 2, C))
    n = len(lead)
    axes = list(range(n)) + [n, n + 2, n + 1, n + 3, n + 4]
    x = ops.permute(x, axes)
    return ops.reshape(x, (*lead, h * h, 4, C))


def subwindow_restore(groups: Tensor) -> Tensor:
    """Inverse of :func:`subwindow_rearrange`."""
    *lead, S, four, C = groups.shape
    if four != 4:
        raise ShapeError(f"expected groups of 4 tokens, got {groups.shape}")
    M = _side(4 * S)
    h = M // 2
    x = ops.reshape(groups, (*lead, h, h, 2, 2, C))
    n = len(lead)
    axes = list(range(n)) + [n, n + 2, n + 1, n + 3, n + 4]
    x = ops.permute(x, axes)
    return ops.reshape(x, (*lead, M * M, C))
