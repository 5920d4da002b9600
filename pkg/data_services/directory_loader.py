# src/data_services/directory_loader.py
import logging
import os
import re

import numpy as np

from data_services.dataset import IdentityDataset
from utils import storage_service
from utils.exceptions import DataError
from utils.image_utils import IMAGE_SUFFIXES, load_image

logger = logging.getLogger(__name__)

FEATURE_SUFFIX = ".dccfeat"
_NAME = re.compile(r"^(\d+)_(\d+)$")


def _identity_label(folder: str, fallback: int) -> int:
    return int(folder) if folder.isdigit() else fallback


def load_directory(path: str, side: int, features: bool = False) -> IdentityDataset:
    """Read ``<root>/<identity>/<camera>_<index>.<png|ppm>`` into a dataset.

    With ``features`` set the loader collects ``.dccfeat`` files instead and
    keeps their paths for the file-load encoder. Unparseable names are skipped
    with a warning and listed in ``dataset.skipped``.
    """
    if not os.path.isdir(path):
        raise DataError(f"dataset directory not found: {path}")
    folders = sorted(d for d in os.listdir(path) if os.path.isdir(os.path.join(path, d)))
    if not folders:
        raise DataError(f"dataset directory {path} has no identity folders")

    suffixes = (FEATURE_SUFFIX,) if features else IMAGE_SUFFIXES
    items, labels, cameras, skipped = [], [], [], []
    for position, folder in enumerate(folders):
        identity = _identity_label(folder, position)
        entries = []
        for name in sorted(os.listdir(os.path.join(path, folder))):
            stem, suffix = os.path.splitext(name)
            match = _NAME.match(stem)
            if suffix.lower() not in suffixes or match is None:
                skipped.append(os.path.join(folder, name))
                continue
            entries.append((int(match.group(1)), int(match.group(2)), name))
        if not entries:
            raise DataError(f"identity folder '{folder}' holds no usable images")
        for camera, _, name in sorted(entries):
            file_path = os.path.join(path, folder, name)
            items.append(file_path if features else load_image(file_path, side))
            labels.append(identity)
            cameras.append(camera)

    if skipped:
        logger.warning("skipped %d file(s) with unparseable names: %s", len(skipped), ", ".join(skipped))
        print(f"⚠️  Skipped {len(skipped)} file(s) whose names are not <camera>_<index>.<ext>.")
    dataset = IdentityDataset(items=items, labels=np.array(labels), cameras=np.array(cameras),
                              side=side, skipped=skipped)
    logger.info("loaded %d images of %d identities from %s", len(dataset), len(dataset.identities), path)
    return dataset


def write_manifest(dataset: IdentityDataset, path: str) -> str:
    return storage_service.save_json(path, dataset.manifest())
