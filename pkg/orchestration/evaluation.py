# src/orchestration/evaluation.py
"""
Single-shot re-identification evaluation.

Probes are scored against every gallery image once; each trial then keeps one
randomly chosen gallery image per identity, ranks it by descending similarity
(ties go to the lower gallery index) and accumulates CMC and mAP. Reported
values are trial means.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from data_services.dataset import IdentityDataset
from utils import storage_service
from utils.exceptions import ProtocolError

logger = logging.getLogger(__name__)

__all__ = ["EvalResult", "cmc", "evaluate", "map_score", "split_probe_gallery"]

DEFAULT_RANKS = (1, 5, 10, 20)


def _rank_order(similarity: np.ndarray) -> np.ndarray:
    return np.argsort(-similarity, axis=1, kind="stable")


def _match_matrix(similarity, query_labels, gallery_labels) -> np.ndarray:
    similarity = np.asarray(similarity, dtype=np.float64)
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    if similarity.shape != (len(query_labels), len(gallery_labels)):
        raise ProtocolError(f"similarity is {similarity.shape} for {len(query_labels)} queries "
                            f"and {len(gallery_labels)} gallery items")
    order = _rank_order(similarity)
    matches = gallery_labels[order] == query_labels[:, None]
    orphans = query_labels[~matches.any(axis=1)]
    if orphans.size:
        raise ProtocolError("queries without a gallery match", identities=np.unique(orphans))
    return matches


def cmc(similarity, query_labels, gallery_labels) -> np.ndarray:
    """curve[k] = fraction of queries whose first true match sits at rank ≤ k+1."""
    matches = _match_matrix(similarity, query_labels, gallery_labels)
    first_hit = matches.argmax(axis=1)
    hits = np.zeros(matches.shape[1])
    np.add.at(hits, first_hit, 1.0)
    return np.cumsum(hits) / matches.shape[0]


def map_score(similarity, query_labels, gallery_labels) -> float:
    matches = _match_matrix(similarity, query_labels, gallery_labels)
    precisions = []
    for row in matches:
        positions = np.flatnonzero(row) + 1
        precisions.append(np.mean(np.arange(1, len(positions) + 1) / positions))
    return float(np.mean(precisions))


@dataclass
class EvalResult:
    cmc: np.ndarray
    mAP: float
    trials: int
    ranks: dict[int, float] = field(default_factory=dict)
    queries: int = 0
    gallery_size: int = 0

    @classmethod
    def from_curve(cls, curve: np.ndarray, mAP: float, trials: int, ranks=DEFAULT_RANKS,
                   queries: int = 0) -> "EvalResult":
        table = {int(k): float(curve[min(k, len(curve)) - 1]) for k in ranks}
        return cls(cmc=curve, mAP=mAP, trials=trials, ranks=table, queries=queries, gallery_size=len(curve))

    def report(self, title: str = "DCC") -> str:
        header = " | ".join(f"R={k:<3}" for k in self.ranks) + " | mAP"
        values = " | ".join(f"{100 * v:5.1f}" for v in self.ranks.values()) + f" | {100 * self.mAP:5.1f}"
        width = max(len(header), len(values)) + len(title) + 3
        lines = [
            f"Single-shot evaluation: {self.queries} probes, gallery of {self.gallery_size}, {self.trials} trial(s)",
            "-" * width,
            f"{'Method':<{len(title)}} | {header}",
            f"{title} | {values}",
            "-" * width,
        ]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"cmc": [float(v) for v in self.cmc], "mAP": self.mAP, "trials": self.trials,
                "ranks": {str(k): v for k, v in self.ranks.items()},
                "queries": self.queries, "gallery_size": self.gallery_size}

    def save(self, path: str) -> str:
        return storage_service.save_json(path, self.to_dict())


def split_probe_gallery(dataset: IdentityDataset, probe_camera: int = 0) -> tuple[IdentityDataset, IdentityDataset]:
    """Probe = images from ``probe_camera``; gallery = everything seen by the other cameras."""
    probe = np.flatnonzero(dataset.cameras == probe_camera)
    gallery = np.flatnonzero(dataset.cameras != probe_camera)
    if probe.size == 0:
        raise ProtocolError(f"no images from probe camera {probe_camera}")

    def part(idx):
        return IdentityDataset(items=dataset.select(idx), labels=dataset.labels[idx],
                               cameras=dataset.cameras[idx], side=dataset.side)
    return part(probe), part(gallery)


def evaluate(model, probe: IdentityDataset, gallery: IdentityDataset, trials: int = 10, seed: int = 0,
             ranks=DEFAULT_RANKS, symmetric: bool = False) -> EvalResult:
    """Mean single-shot CMC/mAP; ``model`` only needs ``pair_scores(images_a, images_b, symmetric)``."""
    if len(gallery) == 0:
        raise ProtocolError("gallery is empty", identities=probe.identities)
    missing = sorted(set(probe.identities) - set(gallery.identities))
    if missing:
        raise ProtocolError("identities with no gallery-view image", identities=missing)

    similarity = np.asarray(model.pair_scores(probe.items, gallery.items, symmetric=symmetric))
    gallery_ids = gallery.identities
    curves, maps = [], []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        columns = np.array([rng.choice(gallery.indices_of(identity)) for identity in gallery_ids])
        labels = gallery.labels[columns]
        curves.append(cmc(similarity[:, columns], probe.labels, labels))
        maps.append(map_score(similarity[:, columns], probe.labels, labels))
        logger.debug("trial %d: rank-1 %.3f", trial, curves[-1][0])

    result = EvalResult.from_curve(np.mean(curves, axis=0), float(np.mean(maps)), trials,
                                   ranks=ranks, queries=len(probe))
    logger.info("evaluation over %d trial(s): rank-1 %.3f, mAP %.3f", trials, result.cmc[0], result.mAP)
    return result
