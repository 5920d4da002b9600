import os

import numpy as np
import pytest

from config import config_from_dict
from core_services.tensor_core import set_debug_nans
from data_services.synth_data_service import build_dataset

TINY = {
    "encoder": {"stem_channels": [2, 2], "stem_strides": [1, 1], "pool": 2, "kernel_size": 3,
                "activation": "tanh", "input_side": 8},
    "glimpse": {"K": 2},
    "comparator": {"hidden": 3, "glimpses": 1, "dropout": 0.0},
    "train": {"classes": 3, "batch_size": 2, "episodes_per_epoch": 4, "epochs": 2,
              "checkpoint_every": 1, "early_stop_patience": None, "seed": 3},
    "eval": {"trials": 2},
    "data": {"side": 8, "ids": 4, "views": 2, "max_shift": 0, "max_occlusion": 0.0},
}


def pytest_collection_modifyitems(config, items):
    if os.getenv("DCC_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="slow learning run; set DCC_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_config(**sections):
    raw = {name: dict(values) for name, values in TINY.items()}
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    return config_from_dict(raw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_dataset(tiny_cfg):
    return build_dataset(tiny_cfg.data, seed=3)


@pytest.fixture(autouse=True)
def _debug_nans_off():
    set_debug_nans(False)
    yield
    set_debug_nans(False)
