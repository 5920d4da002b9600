# src/core_services/initializers.py
import numpy as np

from core_services.tensor_core import Tensor, parameter
from utils.exceptions import ContractError


def xavier_bound(shape: tuple[int, ...]) -> float:
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:
        raise ContractError(f"Xavier initialization takes 1- or 2-D shapes, got {shape}")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(shape, rng: np.random.Generator, name: str | None = None, bias: bool = False) -> Tensor:
    """Uniform on ±sqrt(6 / (fan_in + fan_out)); biases start at zero.

    A 1-D weight shape uses its length for both fans. Bias tensors draw nothing
    from ``rng`` so adding one never shifts the random stream.
    """
    shape = tuple(int(s) for s in shape)
    if bias:
        return zeros_init(shape, name=name)
    bound = xavier_bound(shape)
    return parameter(rng.uniform(-bound, bound, size=shape), name=name)


def zeros_init(shape, name: str | None = None) -> Tensor:
    return parameter(np.zeros(shape), name=name)
