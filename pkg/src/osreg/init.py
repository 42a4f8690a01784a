"""Parameter initialization helpers."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, default_dtype


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Uniform fan-in scaling suited to ReLU stacks."""
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(default_dtype()), requires_grad=True)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(default_dtype()), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=default_dtype()), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=default_dtype()), requires_grad=True)
