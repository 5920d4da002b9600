# src/data_services/synth_data_service.py
"""
Procedural multi-view identities.

An identity is a three-part figure (head, torso, legs) with its own part
colours, textures and build. Every view of it shifts the figure, jitters the
brightness and hue, may drop an occluding block over it and adds sensor
noise. All randomness is keyed on (seed, identity, camera), so any single
image can be reproduced on its own.
"""
import logging
import os
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from PIL import Image, ImageDraw

from config import DataConfig
from data_services.dataset import IdentityDataset
from utils import storage_service
from utils.exceptions import DataError
from utils.image_utils import quantize, save_image

logger = logging.getLogger(__name__)

HUE_BINS = 12
PARTS = ("head", "torso", "legs")
HUE_JITTER_LIMIT = 1.0 / (4 * HUE_BINS)          # keeps neighbouring bins apart
STRIPE_AMPLITUDE = 0.06
BACKGROUND = 0.5
OCCLUDER = 0.35
MAX_FIGURE_OCCLUSION = 0.6
VIEW_ATTEMPTS = 16

# (x0, y0, x1, y1) as fractions of the side, before the per-identity build is applied
_LAYOUT = {
    "head": (0.40, 0.06, 0.60, 0.26),
    "torso": (0.30, 0.26, 0.70, 0.60),
    "legs": (0.34, 0.60, 0.66, 0.94),
}


@dataclass(frozen=True)
class IdentityPrototype:
    identity: int
    hue_bins: tuple[int, int, int]
    hues: tuple[float, float, float]
    saturations: tuple[float, float, float]
    values: tuple[float, float, float]
    textures: tuple[int, int, int]                 # 0 solid, 1 horizontal stripes, 2 vertical stripes
    build: float                                   # width multiplier of the figure

    @property
    def attributes(self) -> tuple:
        return (self.hue_bins, self.textures, round(self.build, 6))


@dataclass(frozen=True)
class ViewParams:
    camera: int
    brightness: float = 0.0
    hue_shift: float = 0.0
    shift_x: int = 0
    shift_y: int = 0
    occlusion: tuple[float, float, float, float] | None = None    # fractions of the side
    noise: float = 0.0
    noise_seed: int = 0


@lru_cache(maxsize=32)
def _hue_table(seed: int) -> np.ndarray:
    """A seed-dependent ordering of every (head, torso, legs) hue-bin triple."""
    return np.random.default_rng(seed).permutation(HUE_BINS ** len(PARTS))


def generate_identity(seed: int, identity: int) -> IdentityPrototype:
    table = _hue_table(seed)
    if not 0 <= identity < len(table):
        raise DataError(f"identity {identity} is outside the {len(table)} distinct colourings available")
    bins = tuple(int(b) for b in np.unravel_index(int(table[identity]), (HUE_BINS,) * len(PARTS)))
    rng = np.random.default_rng([seed, identity])
    jitter = rng.uniform(-HUE_JITTER_LIMIT, HUE_JITTER_LIMIT, size=len(PARTS)) * 0.9
    hues = tuple(float(((b + 0.5) / HUE_BINS + j) % 1.0) for b, j in zip(bins, jitter))
    return IdentityPrototype(
        identity=identity,
        hue_bins=bins,
        hues=hues,
        saturations=tuple(float(s) for s in rng.uniform(0.55, 0.8, size=len(PARTS))),
        values=tuple(float(v) for v in rng.uniform(0.45, 0.7, size=len(PARTS))),
        textures=tuple(int(t) for t in rng.integers(0, 3, size=len(PARTS))),
        build=float(rng.uniform(0.9, 1.1)),
    )


def sample_view(cfg: DataConfig, camera: int, rng: np.random.Generator) -> ViewParams:
    occlusion = None
    if cfg.max_occlusion > 0 and rng.random() < 0.5:
        area = rng.uniform(0.0, cfg.max_occlusion)
        aspect = rng.uniform(0.5, 2.0)
        w = min(1.0, np.sqrt(area * aspect))
        h = min(1.0, area / max(w, 1e-9))
        x0, y0 = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
        occlusion = (float(x0), float(y0), float(x0 + w), float(y0 + h))
    return ViewParams(
        camera=camera,
        brightness=float(rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter)),
        hue_shift=float(rng.uniform(-cfg.hue_jitter, cfg.hue_jitter)),
        shift_x=int(rng.integers(-cfg.max_shift, cfg.max_shift + 1)),
        shift_y=int(rng.integers(-cfg.max_shift, cfg.max_shift + 1)),
        occlusion=occlusion,
        noise=cfg.noise,
        noise_seed=int(rng.integers(2 ** 31)),
    )


def _part_mask(proto: IdentityPrototype, view: ViewParams, side: int) -> np.ndarray:
    """side×side labels: 0 background, 1 head, 2 torso, 3 legs."""
    canvas = Image.new("L", (side, side), 0)
    draw = ImageDraw.Draw(canvas)
    for label, part in sorted(enumerate(PARTS, start=1), key=lambda item: -item[0]):
        x0, y0, x1, y1 = _LAYOUT[part]
        centre = (x0 + x1) / 2
        half = (x1 - x0) / 2 * proto.build
        box = [(centre - half) * side + view.shift_x, y0 * side + view.shift_y,
               (centre + half) * side + view.shift_x - 1, y1 * side + view.shift_y - 1]
        if part == "head":
            draw.ellipse(box, fill=label)
        else:
            draw.rectangle(box, fill=label)
    return np.asarray(canvas, dtype=np.uint8)


def _part_colours(proto: IdentityPrototype, hue_shift: float) -> np.ndarray:
    hsv = np.array([[[(h + hue_shift) % 1.0, s, v]
                     for h, s, v in zip(proto.hues, proto.saturations, proto.values)]])
    pixels = Image.fromarray(np.rint(hsv * 255).astype(np.uint8), mode="HSV").convert("RGB")
    return np.asarray(pixels, dtype=np.float64)[0] / 255.0                # 3 parts × RGB


def render_view(proto: IdentityPrototype, view: ViewParams, side: int = 56) -> np.ndarray:
    """side×side×3 image in [0,1], quantized to 8 bits."""
    labels = _part_mask(proto, view, side)
    figure = labels > 0
    colours = _part_colours(proto, view.hue_shift)

    image = np.full((side, side, 3), BACKGROUND)
    rows, cols = np.indices((side, side))
    for label, texture in enumerate(proto.textures, start=1):
        part = labels == label
        image[part] = colours[label - 1]
        if texture:
            phase = rows if texture == 1 else cols
            stripes = np.where((phase // 2) % 2 == 0, STRIPE_AMPLITUDE, -STRIPE_AMPLITUDE)
            image[part] += stripes[part][:, None]

    if view.occlusion is not None:
        x0, y0, x1, y1 = (int(round(v * side)) for v in view.occlusion)
        block = np.zeros((side, side), dtype=bool)
        block[y0:y1, x0:x1] = True
        covered = (block & figure).sum() / max(int(figure.sum()), 1)
        if covered > MAX_FIGURE_OCCLUSION:
            raise DataError(f"occlusion hides {covered:.0%} of the figure (limit "
                            f"{MAX_FIGURE_OCCLUSION:.0%}); resample the view with a smaller occluder")
        image[block] = OCCLUDER

    image += view.brightness
    if view.noise > 0:
        image += np.random.default_rng(view.noise_seed).normal(0.0, view.noise, size=image.shape)
    return quantize(np.clip(image, 0.0, 1.0))


def render_identity_views(cfg: DataConfig, seed: int, identity: int) -> list[tuple[int, np.ndarray]]:
    proto = generate_identity(seed, identity)
    views = []
    for camera in range(cfg.views):
        rng = np.random.default_rng([seed, identity, camera])
        for _ in range(VIEW_ATTEMPTS):
            view = sample_view(cfg, camera, rng)
            try:
                views.append((camera, render_view(proto, view, cfg.side)))
                break
            except DataError:
                continue
        else:
            views.append((camera, render_view(proto, replace(view, occlusion=None), cfg.side)))
    return views


def build_dataset(cfg: DataConfig, seed: int) -> IdentityDataset:
    """ids × views images of identities id_offset..id_offset+ids-1, ordered by identity then camera."""
    items, labels, cameras = [], [], []
    for identity in range(cfg.id_offset, cfg.id_offset + cfg.ids):
        for camera, image in render_identity_views(cfg, seed, identity):
            items.append(image)
            labels.append(identity)
            cameras.append(camera)
    logger.info("rendered %d synthetic images (%d identities × %d views, seed %d)",
                len(items), cfg.ids, cfg.views, seed)
    return IdentityDataset(items=items, labels=np.array(labels), cameras=np.array(cameras), side=cfg.side)


def export_dataset(dataset: IdentityDataset, root: str, image_format: str = "ppm") -> list[str]:
    """Write ``<root>/<identity>/<camera>_<index>.<fmt>`` plus ``manifest.json``."""
    if image_format not in ("ppm", "png"):
        raise DataError(f"unsupported export format '{image_format}'")
    paths = []
    seen: dict[tuple[int, int], int] = {}
    for item, identity, camera in zip(dataset.items, dataset.labels, dataset.cameras):
        key = (int(identity), int(camera))
        index = seen.get(key, 0)
        seen[key] = index + 1
        path = os.path.join(root, f"{int(identity):04d}", f"{int(camera)}_{index}.{image_format}")
        paths.append(save_image(path, item))
    storage_service.save_json(os.path.join(root, "manifest.json"), dataset.manifest())
    print(f"✅ Exported {len(paths)} images of {len(dataset.identities)} identities to '{root}'.")
    return paths
