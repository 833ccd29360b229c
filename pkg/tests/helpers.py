import dataclasses

import numpy as np

from elmformer.numerics import Tensor


def as_numpy(obj):
    """Weight dataclass -> nested dict of numpy arrays (structural ints kept)."""
    if isinstance(obj, Tensor):
        return obj.data
    if dataclasses.is_dataclass(obj):
        return {f.name: as_numpy(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, list):
        return [as_numpy(o) for o in obj]
    return obj


def randomize(obj, rng, scale=0.3):
    """Fill every parameter with fresh normal noise (in place)."""
    from elmformer.params import parameters

    for t in parameters(obj):
        t.data = rng.standard_normal(t.shape) * scale
    return obj


def zero_out(obj):
    from elmformer.params import parameters

    for t in parameters(obj):
        t.data = np.zeros(t.shape)
    return obj
