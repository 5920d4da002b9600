# src/data_services/episodes.py
import numpy as np

from core_services.similarity_head import Episode
from data_services.dataset import IdentityDataset
from utils.exceptions import DataError


def make_episode(dataset: IdentityDataset, classes: int, rng: np.random.Generator) -> Episode:
    """C distinct identities, one reference each, and an unknown from another camera of one of them."""
    eligible = dataset.multi_view_identities()
    if classes < 2:
        raise DataError(f"an episode needs at least two classes, got {classes}")
    if len(eligible) < classes:
        raise DataError(f"episode needs {classes} identities with at least two camera views, "
                        f"dataset has {len(eligible)}")

    identities = [int(i) for i in rng.choice(eligible, size=classes, replace=False)]
    target = int(rng.integers(classes))
    references, cameras = [], []
    unknown = unknown_camera = None
    for position, identity in enumerate(identities):
        ref = int(rng.choice(dataset.indices_of(identity)))
        references.append(dataset.items[ref])
        cameras.append(int(dataset.cameras[ref]))
        if position == target:
            others = np.flatnonzero((dataset.labels == identity) & (dataset.cameras != dataset.cameras[ref]))
            pick = int(rng.choice(others))
            unknown, unknown_camera = dataset.items[pick], int(dataset.cameras[pick])

    return Episode(unknown=unknown, references=tuple(references), identities=tuple(identities),
                   target=target, cameras=tuple(cameras), unknown_camera=unknown_camera)


def sample_episodes(dataset: IdentityDataset, classes: int, count: int, rng: np.random.Generator) -> list[Episode]:
    return [make_episode(dataset, classes, rng) for _ in range(count)]
