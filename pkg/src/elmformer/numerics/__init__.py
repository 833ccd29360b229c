"""Float64 tensor core: primitives, convolutions, windowing, gradient checks."""

from .conv import ConvSpec, conv2d, transposed_conv2d
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    absolute,
    activation,
    add,
    concat,
    gather,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean_all,
    mul,
    permute,
    reshape,
    scale,
    sigmoid,
    softmax_lastdim,
    split,
    sqrt,
    square,
    sub,
    sum_all,
    take_slice,
)
from .tensor import ConfigError, ShapeError, Tensor, as_tensor, count_macs, grad_enabled, no_grad
from .windows import subwindow_rearrange, subwindow_restore, window_partition, window_reverse
