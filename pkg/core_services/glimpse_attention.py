# src/core_services/glimpse_attention.py
"""
Selective 2-D read from a feature grid.

A raw 3-vector (ĝ_X, ĝ_Y, δ̂) per pair is unpacked into a grid centre, a
stride and an intensity. K×A and K×B row-normalized filterbanks are built
around K filter centres per axis, and the glimpse of every channel is
γ · F_Y · Z[c] · F_Xᵀ.

All tensors carry a leading pair axis P; a single pair works with P omitted.
"""
from dataclasses import dataclass

import numpy as np

from config import GlimpseConfig
from core_services.tensor_core import (
    Tensor, abs_, add, as_tensor, clamp_min, constant, div, exp, matmul, mul, reduce_sum, reshape,
    scale, take, transpose,
)
from utils.exceptions import ShapeError

MIN_STRIDE = 1e-6


@dataclass
class GlimpseParams:
    g_x: Tensor
    g_y: Tensor
    delta: Tensor
    gamma: Tensor
    K: int
    A: int
    B: int

    def snapshot(self) -> "GlimpseRecord":
        return GlimpseRecord(
            g_x=self.g_x.numpy(), g_y=self.g_y.numpy(), delta=self.delta.numpy(),
            gamma=self.gamma.numpy(), K=self.K, A=self.A, B=self.B,
        )


@dataclass(frozen=True)
class GlimpseRecord:
    """Detached copy of one step's glimpse parameters, kept in the comparator trajectory."""
    g_x: np.ndarray
    g_y: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    K: int
    A: int
    B: int

    def window(self, pair: int = 0) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) in grid units: outer filter centres widened by two kernel scales."""
        g_x = float(np.reshape(self.g_x, -1)[pair])
        g_y = float(np.reshape(self.g_y, -1)[pair])
        half = self.K * float(np.reshape(self.delta, -1)[pair]) / 2 + 2 * float(np.reshape(self.gamma, -1)[pair])
        return (max(0.0, g_x - half), max(0.0, g_y - half),
                min(self.A - 1.0, g_x + half), min(self.B - 1.0, g_y + half))


@dataclass
class Filterbanks:
    F_X: Tensor
    F_Y: Tensor


def unpack_glimpse(raw, A: int, B: int, K: int) -> GlimpseParams:
    """(ĝ_X, ĝ_Y, δ̂) → centre, stride and intensity; ``raw`` is [P×]3."""
    if min(A, B, K) < 1:
        raise ShapeError(f"glimpse extents must be positive, got A={A}, B={B}, K={K}")
    raw = as_tensor(raw)
    if raw.shape[-1] != 3:
        raise ShapeError(f"raw glimpse vector must end in 3 entries, got {raw.shape}")
    hat_x = take(raw, 0, axis=-1)
    hat_y = take(raw, 1, axis=-1)
    hat_delta = abs_(take(raw, 2, axis=-1))

    g_x = scale(add(hat_x, 1.0), (A - 1) / 2.0)
    g_y = scale(add(hat_y, 1.0), (B - 1) / 2.0)
    # K = 1 has no spacing to spread over, the stride scale drops its (K - 1)
    stride_scale = max(A, B) / (K - 1) if K > 1 else float(max(A, B))
    delta = clamp_min(scale(hat_delta, stride_scale), MIN_STRIDE)
    gamma = exp(add(scale(hat_delta, -2.0), 1.0))
    return GlimpseParams(g_x=g_x, g_y=g_y, delta=delta, gamma=gamma, K=K, A=A, B=B)


def _centres(g: Tensor, delta: Tensor, K: int, eq7_division: bool) -> Tensor:
    offsets = constant(np.arange(1, K + 1) - K / 2.0 - 0.5)                 # i = 1..K
    g = reshape(g, g.shape + (1,))
    delta = reshape(delta, delta.shape + (1,))
    spread = div(offsets, delta) if eq7_division else mul(offsets, delta)
    return add(g, spread)                                                   # [P×]K


def _bank(centres: Tensor, gamma: Tensor, extent: int, kernel: str) -> Tensor:
    grid = constant(np.arange(extent, dtype=np.float64))
    mu = reshape(centres, centres.shape + (1,))                             # [P×]K×1
    scale_ = reshape(gamma, gamma.shape + (1, 1))                           # [P×]1×1
    offset = div(add(grid, scale(mu, -1.0)), scale_)                       # (a − μ)/γ
    if kernel == "gaussian":
        raw = exp(scale(mul(offset, offset), -0.5))
    else:
        raw = div(1.0, scale(mul(scale_, add(mul(offset, offset), 1.0)), np.pi))
    mass = reduce_sum(raw, axis=-1, keepdims=True)
    empty = constant(mass.data <= 0.0)
    # rows with no raw mass fall back to uniform weights
    normalized = div(raw, add(mass, empty))
    return add(normalized, scale(empty, 1.0 / extent))


def filterbanks(p: GlimpseParams, kernel: str = "cauchy", eq7_division: bool = False) -> Filterbanks:
    mu_x = _centres(p.g_x, p.delta, p.K, eq7_division)
    mu_y = _centres(p.g_y, p.delta, p.K, eq7_division)
    return Filterbanks(F_X=_bank(mu_x, p.gamma, p.A, kernel), F_Y=_bank(mu_y, p.gamma, p.B, kernel))


def extract_glimpse(p: GlimpseParams, Z, cfg: GlimpseConfig | None = None,
                    banks: Filterbanks | None = None) -> Tensor:
    """[P×]C×M² summary → [P×]C×K×K glimpse, γ · F_Y · Z[c] · F_Xᵀ per channel."""
    cfg = cfg or GlimpseConfig(K=p.K)
    Z = as_tensor(Z)
    side = int(round(np.sqrt(Z.shape[-1])))
    if side * side != Z.shape[-1] or side != p.A or side != p.B:
        raise ShapeError(f"summary with {Z.shape[-1]} cells does not match a {p.B}×{p.A} glimpse grid")
    if banks is None:
        banks = filterbanks(p, kernel=cfg.kernel, eq7_division=cfg.eq7_division)
    grid = reshape(Z, Z.shape[:-1] + (side, side))                          # [P×]C×M×M
    lead = banks.F_Y.shape[:-2]
    F_Y = reshape(banks.F_Y, lead + (1,) + banks.F_Y.shape[-2:])            # [P×]1×K×B
    F_Xt = reshape(transpose(banks.F_X), lead + (1, p.A, p.K))              # [P×]1×A×K
    glimpse = matmul(matmul(F_Y, grid), F_Xt)
    gamma = reshape(p.gamma, p.gamma.shape + (1, 1, 1))
    return mul(glimpse, gamma)
