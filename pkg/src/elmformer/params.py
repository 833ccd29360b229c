"""Parameter initialisation and traversal for weight dataclasses.

Weight containers are plain dataclasses whose fields are ``Tensor``
parameters, nested weight dataclasses, or lists of them. Non-tensor
fields (head counts, window sizes) are structural and are skipped.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Iterator

import numpy as np

from .numerics import Tensor


def param(a: np.ndarray) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def zeros(*shape) -> Tensor:
    return param(np.zeros(shape))


def ones(*shape) -> Tensor:
    return param(np.ones(shape))


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    """Normal(0, std) redrawn until every sample lies within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return param(out * std)


def conv_uniform(rng: np.random.Generator, shape) -> Tensor:
    """Uniform in +-1/sqrt(fan_in), fan_in over all but the leading axis."""
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / math.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, shape))


def iter_params(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted_name, tensor)`` in field-declaration order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from iter_params(getattr(obj, f.name), name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from iter_params(item, f"{prefix}.{i}")


def parameters(obj) -> list[Tensor]:
    return [t for _, t in iter_params(obj)]


def count_params(obj) -> int:
    return sum(t.size for t in parameters(obj))


def flatten(obj) -> np.ndarray:
    ps = parameters(obj)
    return np.concatenate([t.data.ravel() for t in ps]) if ps else np.zeros(0)


def unflatten_into(obj, flat: np.ndarray) -> None:
    """Overwrite every parameter of ``obj`` from one flat vector, in place."""
    ps = parameters(obj)
    need = sum(t.size for t in ps)
    if flat.size != need:
        raise ValueError(f"parameter count mismatch: got {flat.size}, model has {need}")
    pos = 0
    for t in ps:
        t.data = flat[pos:pos + t.size].reshape(t.shape).copy()
        pos += t.size


def zero_grad(obj) -> None:
    for t in parameters(obj):
        t.grad = None
