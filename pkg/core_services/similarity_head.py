# src/core_services/similarity_head.py
"""
Scores and relative similarity.

Each pair embedding e is mapped to a bounded score s = tanh(w·e + b). Inside
an episode the C scores become class logits W[j]·s_j and a softmax over the
classes turns them into a relative similarity distribution; the training loss
is the cross-entropy of the true class.
"""
from dataclasses import dataclass

import numpy as np

from core_services.initializers import xavier_init
from core_services.tensor_core import (
    Tensor, add, as_tensor, constant, exp, log, mul, parameter, reduce_sum, reshape, scale, softmax_rows,
    sub, take, tanh,
)
from utils.exceptions import ContractError, ShapeError


@dataclass
class SimilarityParams:
    w: Tensor                       # D (embedding size)
    b: Tensor                       # scalar
    class_weights: Tensor           # C

    def named(self) -> dict[str, Tensor]:
        return {"head.w": self.w, "head.b": self.b, "head.class_weights": self.class_weights}


def init_head(embedding_size: int, classes: int, rng: np.random.Generator) -> SimilarityParams:
    return SimilarityParams(
        w=xavier_init((embedding_size,), rng, name="head.w"),
        b=xavier_init((), rng, name="head.b", bias=True),
        class_weights=parameter(np.ones(classes), name="head.class_weights"),
    )


@dataclass(frozen=True)
class Episode:
    """One unknown image scored against one reference per identity class.

    ``target`` is the 0-based position of the unknown's identity among the references.
    Images are arrays (tiny-stem mode) or feature-file paths (file-load mode).
    """
    unknown: object
    references: tuple
    identities: tuple[int, ...]
    target: int
    cameras: tuple[int, ...] = ()
    unknown_camera: int = -1

    @property
    def classes(self) -> int:
        return len(self.identities)

    def validate(self) -> None:
        if len(set(self.identities)) != len(self.identities):
            raise ContractError(f"episode repeats an identity class: {list(self.identities)}")
        if len(self.references) != len(self.identities):
            raise ContractError("episode needs exactly one reference per identity class")
        if not 0 <= self.target < len(self.identities):
            raise ContractError(f"true class index {self.target} is outside 0..{len(self.identities) - 1}")


@dataclass
class EpisodeOutcome:
    loss: Tensor
    probs: np.ndarray               # B×C
    predictions: np.ndarray         # B
    targets: np.ndarray             # B

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.predictions == self.targets))


def score(e, params: SimilarityParams) -> Tensor:
    """s = tanh(w·e + b) over the last axis of ``e``."""
    e = as_tensor(e)
    if e.shape[-1] != params.w.shape[0]:
        raise ShapeError(f"embedding size {e.shape[-1]} does not match head weights {params.w.shape}")
    return tanh(add(reduce_sum(mul(e, params.w), axis=-1), params.b))


def _logits(scores, params: SimilarityParams) -> Tensor:
    scores = as_tensor(scores)
    classes = scores.shape[-1]
    if classes < 2:
        raise ContractError(f"relative similarity needs at least two classes, got {classes}")
    if classes != params.class_weights.shape[0]:
        raise ShapeError(f"{classes} scores but {params.class_weights.shape[0]} class weights")
    return mul(scores, params.class_weights)


def class_probs(scores, params: SimilarityParams) -> Tensor:
    return softmax_rows(_logits(scores, params))


def log_class_probs(scores, params: SimilarityParams) -> Tensor:
    logits = _logits(scores, params)
    shifted = sub(logits, constant(np.max(logits.data, axis=-1, keepdims=True)))
    return sub(shifted, log(reduce_sum(exp(shifted), axis=-1, keepdims=True)))


def cross_entropy(scores, targets, params: SimilarityParams) -> Tensor:
    """Mean of −log p[target] over the leading episode axis of a B×C score matrix."""
    log_p = log_class_probs(scores, params)
    batch, classes = log_p.shape
    flat = np.arange(batch) * classes + np.asarray(targets, dtype=np.intp)
    return scale(reduce_sum(take(reshape(log_p, (-1,)), flat)), -1.0 / batch)


def episode_loss(model, episodes, rng: np.random.Generator | None = None) -> EpisodeOutcome:
    """Encode, co-attend, compare and score every (unknown, reference) pair of a batch of episodes.

    ``model`` is a DCCModel; passing ``rng`` switches dropout on.
    """
    episodes = list(episodes)
    if not episodes:
        raise ContractError("episode_loss needs at least one episode")
    classes = episodes[0].classes
    for episode in episodes:
        episode.validate()
        if episode.classes != classes:
            raise ContractError("all episodes in a batch must have the same number of classes")

    # unknowns first, then every episode's references in class order
    images = [e.unknown for e in episodes] + [r for e in episodes for r in e.references]
    batch = len(episodes)
    index_a = np.repeat(np.arange(batch), classes)
    index_b = batch + np.arange(batch * classes)

    embeddings = model.embed_images(images, index_a, index_b, rng=rng)
    scores = reshape(score(embeddings, model.head), (batch, classes))
    targets = np.array([e.target for e in episodes])
    loss = cross_entropy(scores, targets, model.head)
    probs = class_probs(constant(scores.data), model.head).data
    return EpisodeOutcome(loss=loss, probs=probs, predictions=probs.argmax(axis=1), targets=targets)
