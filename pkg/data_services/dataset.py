# src/data_services/dataset.py
from dataclasses import dataclass, field

import numpy as np

from utils.exceptions import DataError


@dataclass
class IdentityDataset:
    """Labelled images: ``items[k]`` shows identity ``labels[k]`` seen from camera ``cameras[k]``.

    Items are H×W×3 arrays in [0,1], or feature-file paths for file-load encoders.
    """
    items: list
    labels: np.ndarray
    cameras: np.ndarray
    side: int
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.cameras = np.asarray(self.cameras, dtype=np.int64)
        if not (len(self.items) == len(self.labels) == len(self.cameras)):
            raise DataError(f"dataset columns disagree: {len(self.items)} items, "
                            f"{len(self.labels)} labels, {len(self.cameras)} cameras")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def identities(self) -> list[int]:
        return sorted(int(i) for i in np.unique(self.labels))

    def indices_of(self, identity: int, camera: int | None = None) -> np.ndarray:
        mask = self.labels == identity
        if camera is not None:
            mask &= self.cameras == camera
        return np.flatnonzero(mask)

    def cameras_of(self, identity: int) -> list[int]:
        return sorted(int(c) for c in np.unique(self.cameras[self.labels == identity]))

    def multi_view_identities(self) -> list[int]:
        return [i for i in self.identities if len(self.cameras_of(i)) >= 2]

    def select(self, indices) -> list:
        return [self.items[int(k)] for k in indices]

    def manifest(self) -> dict:
        counts = {}
        for identity in self.identities:
            per_camera = {str(c): int(len(self.indices_of(identity, c))) for c in self.cameras_of(identity)}
            counts[str(identity)] = per_camera
        return {
            "images": len(self),
            "identities": self.identities,
            "cameras": sorted(int(c) for c in np.unique(self.cameras)) if len(self) else [],
            "side": self.side,
            "counts": counts,
        }
