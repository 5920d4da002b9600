# src/core_services/coattention.py
"""
Co-dependent encoding of an image pair.

Feature maps are flattened C×M×M → C×M² row-major over the grid (row y major,
column x minor). The affinity entry L[i, j] scores cell i of image b against
cell j of image a through a trainable C×C matrix W_L. Column j of a
summary describes cell j of its own image as a weighted average of the other
image's feature columns. A_a = softmax_rows(L) holds, per cell of b, weights
over the cells of a; A_b = softmax_rows(Lᵀ) holds the reverse.
"""
from dataclasses import dataclass

import numpy as np

from core_services.base_encoder import FeatureMap
from core_services.initializers import xavier_init
from core_services.tensor_core import Tensor, as_tensor, matmul, reshape, softmax_rows, transpose
from utils.exceptions import ShapeError


@dataclass
class CoAttentionParams:
    W_L: Tensor

    def __post_init__(self):
        if self.W_L.ndim != 2 or self.W_L.shape[0] != self.W_L.shape[1]:
            raise ShapeError(f"W_L must be square C×C, got {self.W_L.shape}")

    def named(self) -> dict[str, Tensor]:
        return {"coattention.W_L": self.W_L}


@dataclass
class CoAttentionPair:
    L: Tensor
    A_a: Tensor
    A_b: Tensor
    Z_a: Tensor
    Z_b: Tensor


def init_coattention(channels: int, rng: np.random.Generator) -> CoAttentionParams:
    return CoAttentionParams(xavier_init((channels, channels), rng, name="coattention.W_L"))


def _values(q) -> Tensor:
    return q.values if isinstance(q, FeatureMap) else as_tensor(q)


def flatten_features(q) -> Tensor:
    """[N×]C×M×M → [N×]C×M²."""
    q = _values(q)
    if q.ndim < 3 or q.shape[-1] != q.shape[-2]:
        raise ShapeError(f"expected [N×]C×M×M features, got {q.shape}")
    return reshape(q, q.shape[:-2] + (q.shape[-1] * q.shape[-2],))


def _check_pair(q_a: Tensor, q_b: Tensor, params: CoAttentionParams) -> None:
    if q_a.shape != q_b.shape:
        raise ShapeError(f"paired feature maps differ: {q_a.shape} vs {q_b.shape}")
    if params.W_L.shape[0] != q_a.shape[-3]:
        raise ShapeError(f"W_L is {params.W_L.shape} but features have C={q_a.shape[-3]}")


def affinity(q_a, q_b, params: CoAttentionParams) -> Tensor:
    """L = flatten(Q_b)ᵀ · W_L · flatten(Q_a), shape [N×]M²×M²."""
    q_a, q_b = _values(q_a), _values(q_b)
    _check_pair(q_a, q_b, params)
    flat_a, flat_b = flatten_features(q_a), flatten_features(q_b)
    return matmul(transpose(flat_b), matmul(params.W_L, flat_a))


def co_attend(q_a, q_b, params: CoAttentionParams) -> CoAttentionPair:
    q_a, q_b = _values(q_a), _values(q_b)
    L = affinity(q_a, q_b, params)
    A_a = softmax_rows(L)
    A_b = softmax_rows(transpose(L))
    flat_a, flat_b = flatten_features(q_a), flatten_features(q_b)
    # row j of A_b weighs the cells of b for cell j of a
    Z_a = matmul(flat_b, transpose(A_b))
    Z_b = matmul(flat_a, transpose(A_a))
    return CoAttentionPair(L=L, A_a=A_a, A_b=A_b, Z_a=Z_a, Z_b=Z_b)


def attention_mass(pair: CoAttentionPair) -> tuple[np.ndarray, np.ndarray]:
    """Total weight each grid cell of a and of b receives from the other image (column sums)."""
    mass_a = pair.A_a.data.sum(axis=-2)
    mass_b = pair.A_b.data.sum(axis=-2)
    return mass_a, mass_b
