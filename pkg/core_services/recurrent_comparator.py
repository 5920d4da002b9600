# src/core_services/recurrent_comparator.py
"""
Alternating glimpse comparator.

At step t the hidden state picks a glimpse window (raw = h W_gᵀ + b_g), the
window is read from Z_a on even steps and from Z_b on odd ones, and the
flattened C·K² glimpse drives one LSTM update. After T = 2·glimpses steps the
final hidden state is the relative representation of the pair.

Everything is batched over a leading pair axis P.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from config import ComparatorConfig, GlimpseConfig
from core_services.glimpse_attention import GlimpseRecord, extract_glimpse, unpack_glimpse
from core_services.initializers import xavier_init
from core_services.tensor_core import (
    Tensor, add, as_tensor, constant, matmul, mul, reshape, sigmoid, tanh, transpose,
)
from utils.exceptions import ContractError, ShapeError

logger = logging.getLogger(__name__)

GATES = ("i", "f", "o", "c")


@dataclass
class ComparatorParams:
    W_g: Tensor                     # 3×H
    b_g: Tensor                     # 3
    W: dict[str, Tensor]            # gate → (C·K²)×H
    U: dict[str, Tensor]            # gate → H×H
    b: dict[str, Tensor]            # gate → H

    def __post_init__(self):
        hidden = self.W_g.shape[-1]
        if self.W_g.shape != (3, hidden) or self.b_g.shape != (3,):
            raise ShapeError(f"glimpse projection must be 3×H plus a 3-vector, got {self.W_g.shape} and {self.b_g.shape}")
        for gate in GATES:
            if self.U[gate].shape != (hidden, hidden) or self.b[gate].shape != (hidden,) \
                    or self.W[gate].shape[-1] != hidden:
                raise ShapeError(f"LSTM gate '{gate}' is inconsistent with hidden size {hidden}")

    @property
    def hidden(self) -> int:
        return self.W_g.shape[-1]

    @property
    def input_size(self) -> int:
        return self.W["i"].shape[0]

    def named(self) -> dict[str, Tensor]:
        out = {"comparator.W_g": self.W_g, "comparator.b_g": self.b_g}
        for gate in GATES:
            out[f"comparator.lstm.W_{gate}"] = self.W[gate]
            out[f"comparator.lstm.U_{gate}"] = self.U[gate]
            out[f"comparator.lstm.b_{gate}"] = self.b[gate]
        return out


def init_comparator(channels: int, cfg: ComparatorConfig, glimpse: GlimpseConfig,
                    rng: np.random.Generator) -> ComparatorParams:
    hidden = cfg.hidden
    input_size = channels * glimpse.K * glimpse.K
    W, U, b = {}, {}, {}
    for gate in GATES:
        W[gate] = xavier_init((input_size, hidden), rng, name=f"comparator.lstm.W_{gate}")
        U[gate] = xavier_init((hidden, hidden), rng, name=f"comparator.lstm.U_{gate}")
        b[gate] = xavier_init((hidden,), rng, name=f"comparator.lstm.b_{gate}", bias=True)
    return ComparatorParams(
        W_g=xavier_init((3, hidden), rng, name="comparator.W_g"),
        b_g=xavier_init((3,), rng, name="comparator.b_g", bias=True),
        W=W, U=U, b=b,
    )


@dataclass
class ComparatorState:
    t: int
    h: Tensor                       # P×H
    c: Tensor                       # P×H
    total_steps: int
    trajectory: list[GlimpseRecord] = field(default_factory=list)


@dataclass
class Comparison:
    embedding: Tensor               # [P×]H, h_T after optional dropout
    trajectory: list[GlimpseRecord]
    steps: int


def initial_state(pairs: int, hidden: int, glimpses: int) -> ComparatorState:
    if glimpses < 1:
        raise ContractError(f"a comparison needs at least one glimpse per image, got {glimpses}")
    zeros = np.zeros((pairs, hidden))
    return ComparatorState(t=0, h=constant(zeros), c=constant(zeros), total_steps=2 * glimpses)


def select_stream(t: int, Z_a, Z_b):
    if t < 0:
        raise ContractError(f"step index must be non-negative, got {t}")
    return Z_a if t % 2 == 0 else Z_b


def _gate(x: Tensor, h: Tensor, params: ComparatorParams, gate: str) -> Tensor:
    return add(add(matmul(x, params.W[gate]), matmul(h, params.U[gate])), params.b[gate])


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, params: ComparatorParams) -> tuple[Tensor, Tensor]:
    i = sigmoid(_gate(x, h, params, "i"))
    f = sigmoid(_gate(x, h, params, "f"))
    o = sigmoid(_gate(x, h, params, "o"))
    candidate = tanh(_gate(x, h, params, "c"))
    c_next = add(mul(f, c), mul(i, candidate))
    return mul(o, tanh(c_next)), c_next


def step(state: ComparatorState, Z_a: Tensor, Z_b: Tensor, params: ComparatorParams,
         cfg: GlimpseConfig) -> ComparatorState:
    """One glimpse and one LSTM update; Z_a and Z_b are P×C×M²."""
    if state.t >= state.total_steps:
        raise ContractError(f"comparator already ran its {state.total_steps} steps")
    Z = select_stream(state.t, Z_a, Z_b)
    side = int(round(np.sqrt(Z.shape[-1])))
    raw = add(matmul(state.h, transpose(params.W_g)), params.b_g)          # P×3
    glimpse = unpack_glimpse(raw, side, side, cfg.K)
    G = extract_glimpse(glimpse, Z, cfg)                                   # P×C×K×K
    x = reshape(G, (G.shape[0], -1))
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"glimpse of size {x.shape[-1]} does not feed an LSTM with input size {params.input_size}")
    h, c = lstm_cell(x, state.h, state.c, params)
    return ComparatorState(t=state.t + 1, h=h, c=c, total_steps=state.total_steps,
                           trajectory=state.trajectory + [glimpse.snapshot()])


def make_dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multipliers: kept units scaled by 1/(1 - rate), dropped ones 0."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def compare(Z_a, Z_b, glimpses: int, params: ComparatorParams, cfg: GlimpseConfig | None = None,
            dropout_mask: np.ndarray | None = None) -> Comparison:
    """Run 2·glimpses steps over [P×]C×M² summaries and return h_T with the glimpse trajectory."""
    cfg = cfg or GlimpseConfig()
    Z_a, Z_b = as_tensor(Z_a), as_tensor(Z_b)
    if Z_a.shape != Z_b.shape:
        raise ShapeError(f"summaries differ in shape: {Z_a.shape} vs {Z_b.shape}")
    single = Z_a.ndim == 2
    if single:
        Z_a = reshape(Z_a, (1,) + Z_a.shape)
        Z_b = reshape(Z_b, (1,) + Z_b.shape)

    state = initial_state(Z_a.shape[0], params.hidden, glimpses)
    while state.t < state.total_steps:
        state = step(state, Z_a, Z_b, params, cfg)

    h_T = state.h
    if dropout_mask is not None:
        h_T = mul(h_T, constant(np.broadcast_to(dropout_mask, h_T.shape)))
    if single:
        h_T = reshape(h_T, (params.hidden,))
    logger.debug("compared %d pair(s) over %d steps", Z_a.shape[0], state.t)
    return Comparison(embedding=h_T, trajectory=state.trajectory, steps=state.t)
