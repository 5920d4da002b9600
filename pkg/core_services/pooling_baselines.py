# src/core_services/pooling_baselines.py
"""Fixed-length pooling of co-attention summaries, used by the ablation heads in place of the comparator."""
import numpy as np

from core_services.tensor_core import Tensor, as_tensor, mean, reshape, take
from utils.exceptions import ShapeError


def _grid_side(Z: Tensor) -> int:
    side = int(round(np.sqrt(Z.shape[-1])))
    if Z.ndim < 2 or side * side != Z.shape[-1]:
        raise ShapeError(f"expected [P×]C×M² summaries with a square grid, got {Z.shape}")
    return side


def _bins(side: int) -> list[tuple[int, int]]:
    # two ranges per axis; odd sides share the middle row/column
    return [(int(np.floor(i * side / 2)), int(np.ceil((i + 1) * side / 2))) for i in range(2)]


def spp_pool(Z) -> Tensor:
    """Two-level pyramid: per channel the max of each 2×2 quadrant, then the global max (5 bins per channel)."""
    Z = as_tensor(Z)
    side = _grid_side(Z)
    grid = Z.data.reshape(-1, side, side)                                   # (lead·C)×M×M
    regions = [(r, c) for r in _bins(side) for c in _bins(side)] + [((0, side), (0, side))]

    cells = np.empty((grid.shape[0], len(regions)), dtype=np.intp)
    for k, ((r0, r1), (c0, c1)) in enumerate(regions):
        window = grid[:, r0:r1, c0:c1].reshape(grid.shape[0], -1)
        dy, dx = np.divmod(window.argmax(axis=1), c1 - c0)
        cells[:, k] = (r0 + dy) * side + (c0 + dx)
    flat = np.arange(grid.shape[0])[:, None] * side * side + cells
    pooled = take(reshape(Z, (-1,)), flat)                                  # (lead·C)×5
    return reshape(pooled, Z.shape[:-2] + (Z.shape[-2] * len(regions),))


def global_pool(Z) -> Tensor:
    """Per-channel spatial mean."""
    Z = as_tensor(Z)
    _grid_side(Z)
    return mean(Z, axis=-1)
