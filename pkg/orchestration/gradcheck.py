# src/orchestration/gradcheck.py
"""
Central finite-difference checks of every differentiable block.

Each block builds a scalar from a few tracked tensors, differentiates it with
the tensor core and compares against (f(x+ε) − f(x−ε)) / 2ε element by
element. The error of a tensor is max|analytic − numeric| over
max(max|analytic|, max|numeric|, 1e-8).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from config import GlimpseConfig, config_from_dict
from core_services import tensor_core as tc
from core_services.coattention import CoAttentionParams, co_attend
from core_services.dcc_model import DCCModel
from core_services.glimpse_attention import extract_glimpse, unpack_glimpse
from core_services.recurrent_comparator import compare, init_comparator
from core_services.similarity_head import Episode, SimilarityParams, cross_entropy, episode_loss, score
from core_services.tensor_core import Tensor, parameter
from utils.exceptions import ContractError

logger = logging.getLogger(__name__)

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3
BLOCKS = ("ops", "coattention", "glimpse", "comparator", "head", "end_to_end")
GLIMPSE_BIAS = (0.1, -0.2, 0.5)                # keeps |δ̂| away from its kink at zero

# short weight names accepted by --perturb-weight
PERTURB_TARGETS = {
    "wl": "coattention.W_L",
    "wg": "comparator.W_g",
    "bg": "comparator.b_g",
    "lstm": "comparator.lstm.W_i",
    "head": "head.w",
    "class": "head.class_weights",
    "stem": "encoder.conv1.weight",
}

TINY_CONFIG = {
    "encoder": {"stem_channels": [2, 2], "stem_strides": [1, 1], "pool": 2, "kernel_size": 3,
                "activation": "tanh", "input_side": 8},
    "glimpse": {"K": 2},
    "comparator": {"hidden": 3, "glimpses": 1, "dropout": 0.0},
    "train": {"classes": 3, "batch_size": 1},
    "data": {"side": 8},
}


@dataclass
class BlockResult:
    name: str
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


@dataclass
class GradcheckReport:
    blocks: list[BlockResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    def lines(self) -> list[str]:
        out = []
        for block in self.blocks:
            mark = "✅" if block.passed else "❌"
            out.append(f"{mark} {block.name:<12} max relative error {block.max_error:.3e} (tolerance {block.tolerance:.0e})")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_gradient(fn: Callable[[], Tensor], tensor: Tensor, epsilon: float) -> np.ndarray:
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    with tc.no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            plus = fn().item()
            flat[i] = original - epsilon
            minus = fn().item()
            flat[i] = original
            grad.reshape(-1)[i] = (plus - minus) / (2.0 * epsilon)
    return grad


def check_block(name: str, fn: Callable[[], Tensor], tensors: dict[str, Tensor], epsilon: float,
                tolerance: float, corrupt: float = 1.0) -> BlockResult:
    loss = fn()
    grads = tc.backward(None, loss)
    errors = {}
    for label, tensor in tensors.items():
        analytic = grads.get(tensor, np.zeros_like(tensor.data)) * corrupt
        errors[label] = relative_error(analytic, numeric_gradient(fn, tensor, epsilon))
        logger.debug("%s/%s: %.3e", name, label, errors[label])
    return BlockResult(name, errors, tolerance)


def _projector(shape, rng):
    weights = tc.constant(rng.normal(size=shape))
    return lambda out: tc.reduce_sum(tc.mul(out, weights))


# --- blocks --------------------------------------------------------------------

def _ops_cases(rng):
    a = parameter(rng.normal(size=(3, 4)), "a")
    b = parameter(rng.normal(size=(3, 4)), "b")
    positive = parameter(rng.uniform(0.5, 2.0, size=(3, 4)), "positive")
    away = parameter(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.2, 1.0, size=(3, 4)), "away")
    m = parameter(rng.normal(size=(4, 2)), "m")
    batch = parameter(rng.normal(size=(2, 3, 4)), "batch")
    return {
        "add": (lambda: tc.add(a, b), {"a": a, "b": b}),
        "sub": (lambda: tc.sub(a, b), {"a": a, "b": b}),
        "mul": (lambda: tc.mul(a, b), {"a": a, "b": b}),
        "div": (lambda: tc.div(a, positive), {"a": a, "positive": positive}),
        "scale": (lambda: tc.scale(a, -1.7), {"a": a}),
        "tanh": (lambda: tc.tanh(a), {"a": a}),
        "sigmoid": (lambda: tc.sigmoid(a), {"a": a}),
        "exp": (lambda: tc.exp(a), {"a": a}),
        "log": (lambda: tc.log(positive), {"positive": positive}),
        "abs": (lambda: tc.abs_(away), {"away": away}),
        "clamp_min": (lambda: tc.clamp_min(away, 0.1), {"away": away}),
        "matmul": (lambda: tc.matmul(a, m), {"a": a, "m": m}),
        "batched_matmul": (lambda: tc.matmul(batch, m), {"batch": batch, "m": m}),
        "transpose": (lambda: tc.transpose(batch, (2, 0, 1)), {"batch": batch}),
        "reshape": (lambda: tc.reshape(a, (2, 6)), {"a": a}),
        "concatenate": (lambda: tc.concatenate([a, b], axis=1), {"a": a, "b": b}),
        "reduce_sum": (lambda: tc.reduce_sum(batch, axis=1), {"batch": batch}),
        "take": (lambda: tc.take(a, [0, 2, 2, 1], axis=0), {"a": a}),
        "softmax_rows": (lambda: tc.softmax_rows(batch), {"batch": batch}),
    }


def ops_block(rng, epsilon, corrupt=1.0) -> BlockResult:
    errors = {}
    for op, (build, tensors) in _ops_cases(rng).items():
        project = _projector(build().shape, rng)
        result = check_block(op, lambda: project(build()), tensors, epsilon, OP_TOLERANCE, corrupt)
        errors.update({f"{op}.{k}": v for k, v in result.errors.items()})
    return BlockResult("ops", errors, OP_TOLERANCE)


def coattention_block(rng, epsilon, corrupt=1.0) -> BlockResult:
    q_a = parameter(rng.normal(size=(2, 3, 3)), "Q_a")
    q_b = parameter(rng.normal(size=(2, 3, 3)), "Q_b")
    params = CoAttentionParams(parameter(rng.normal(size=(2, 2)) * 0.5, "coattention.W_L"))
    za, zb = _projector((2, 9), rng), _projector((2, 9), rng)

    def fn():
        pair = co_attend(q_a, q_b, params)
        return tc.add(za(pair.Z_a), zb(pair.Z_b))
    return check_block("coattention", fn, {"coattention.W_L": params.W_L, "Q_a": q_a, "Q_b": q_b},
                       epsilon, OP_TOLERANCE, corrupt)


def glimpse_block(rng, epsilon, corrupt=1.0) -> BlockResult:
    raw = parameter(np.array([0.3, -0.4, 0.6]), "raw")
    Z = parameter(rng.normal(size=(2, 9)), "Z")
    project = _projector((2, 2, 2), rng)
    cfg = GlimpseConfig(K=2)

    def fn():
        return project(extract_glimpse(unpack_glimpse(raw, 3, 3, 2), Z, cfg))
    return check_block("glimpse", fn, {"raw": raw, "Z": Z}, epsilon, OP_TOLERANCE, corrupt)


def comparator_block(rng, epsilon, corrupt=1.0) -> BlockResult:
    cfg = config_from_dict(TINY_CONFIG)
    params = init_comparator(2, cfg.comparator, cfg.glimpse, rng)
    params.b_g.data = np.array(GLIMPSE_BIAS)
    Z_a = parameter(rng.normal(size=(2, 4)), "Z_a")
    Z_b = parameter(rng.normal(size=(2, 4)), "Z_b")
    project = _projector((params.hidden,), rng)

    def fn():
        return project(compare(Z_a, Z_b, 2, params, cfg.glimpse).embedding)
    tensors = dict(params.named())
    tensors.update({"Z_a": Z_a, "Z_b": Z_b})
    return check_block("comparator", fn, tensors, epsilon, OP_TOLERANCE, corrupt)


def head_block(rng, epsilon, corrupt=1.0) -> BlockResult:
    head = SimilarityParams(w=parameter(rng.normal(size=3), "head.w"), b=parameter(0.1, "head.b"),
                            class_weights=parameter(rng.uniform(0.5, 1.5, size=3), "head.class_weights"))
    embeddings = parameter(rng.normal(size=(2, 3, 3)), "embeddings")

    def fn():
        return cross_entropy(score(embeddings, head), np.array([0, 2]), head)
    tensors = dict(head.named())
    tensors["embeddings"] = embeddings
    return check_block("head", fn, tensors, epsilon, OP_TOLERANCE, corrupt)


def tiny_model(seed: int = 0) -> tuple[DCCModel, Episode]:
    """The end-to-end check model (3 classes, 8×8 images, 2-channel 2×2 features, H=3, one glimpse per image)."""
    cfg = config_from_dict(TINY_CONFIG)
    rng = np.random.default_rng(seed)
    model = DCCModel.initialize(cfg, rng)
    model.comparator.b_g.data = np.array(GLIMPSE_BIAS)
    images = rng.uniform(0.0, 1.0, size=(4, 8, 8, 3))
    episode = Episode(unknown=images[0], references=tuple(images[1:]), identities=(0, 1, 2), target=1)
    return model, episode


def end_to_end_block(rng, epsilon, corrupt=1.0, only: str | None = None) -> BlockResult:
    model, episode = tiny_model(int(rng.integers(2 ** 31)))
    tensors = model.parameters()
    if only is not None:
        if only not in tensors:
            raise ContractError(f"no parameter named {only} in the end-to-end model")
        tensors = {only: tensors[only]}
    return check_block("end_to_end", lambda: episode_loss(model, [episode]).loss, tensors,
                       epsilon, END_TO_END_TOLERANCE, corrupt)


_BUILDERS = {
    "ops": ops_block,
    "coattention": coattention_block,
    "glimpse": glimpse_block,
    "comparator": comparator_block,
    "head": head_block,
    "end_to_end": end_to_end_block,
}


def run_gradcheck(blocks=None, epsilon: float = 1e-6, seed: int = 0, perturb_weight: str | None = None,
                  corrupt: float = 1.0) -> GradcheckReport:
    """Run the selected blocks (all by default); ``perturb_weight`` checks a single end-to-end tensor.

    ``corrupt`` scales every analytic gradient and exists to prove the check can fail.
    """
    report = GradcheckReport()
    if perturb_weight is not None:
        target = PERTURB_TARGETS.get(perturb_weight, perturb_weight)
        report.blocks.append(end_to_end_block(np.random.default_rng(seed), epsilon, corrupt, only=target))
        return report
    for name in blocks or BLOCKS:
        if name not in _BUILDERS:
            raise ContractError(f"unknown gradient-check block '{name}' (choose from {', '.join(BLOCKS)})")
        report.blocks.append(_BUILDERS[name](np.random.default_rng([seed, BLOCKS.index(name)]), epsilon, corrupt))
    return report
