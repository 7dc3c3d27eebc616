"""Parameter initialization and bookkeeping helpers.

Weights use the symmetric uniform fan rule ``+-sqrt(6 / (fan_in +
fan_out))``; biases start at zero and normalization gains at one.  A
model's parameters live in a plain ordered dict of name -> Tensor so
checkpointing, Adam, and the gradient checker can all enumerate them
without knowing the architecture.
"""

from __future__ import annotations

from typing import Dict

import numpy as np

from .rng import Rng
from .tensor import Tensor


def glorot(rng: Rng, shape, dtype, fan_in: int | None = None,
           fan_out: int | None = None) -> Tensor:
    """Uniform init with the summed-fan bound.

    For matrices the fans default to the two extents; convolution kernels
    pass explicit fans (receptive field x channels).
    """
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1]))
    if fan_out is None:
        fan_out = int(shape[-1])
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return Tensor(rng.uniform(-bound, bound, shape, dtype=dtype), requires_grad=True)


def zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def conv_kernel(rng: Rng, kt: int, kh: int, kw: int, cin: int, cout: int, dtype) -> Tensor:
    volume = kt * kh * kw
    return glorot(rng, (kt, kh, kw, cin, cout), dtype,
                  fan_in=volume * cin, fan_out=volume * cout)


def param_arrays(params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
    return {name: p.data for name, p in params.items()}


def zero_grads(params: Dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def total_size(params: Dict[str, Tensor]) -> int:
    return sum(p.size for p in params.values())
