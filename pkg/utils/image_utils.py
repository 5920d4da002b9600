# src/utils/image_utils.py
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from utils.exceptions import FormatError

IMAGE_SUFFIXES = (".png", ".ppm")


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap [0,1] values onto the 8-bit grid so that saving and reloading is exact."""
    return to_uint8(image).astype(np.float64) / 255.0


def save_image(path: str, image: np.ndarray) -> str:
    """Write an H×W×3 image in [0,1]; the suffix picks PNG or binary PPM (P6)."""
    suffix = os.path.splitext(path)[1].lower()
    if suffix not in IMAGE_SUFFIXES:
        raise FormatError(f"unsupported image suffix '{suffix}' for {path}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG" if suffix == ".png" else "PPM")
    return path


def load_image(path: str, side: int | None = None) -> np.ndarray:
    """Read a PNG/PPM as H×W×3 float64 in [0,1], resized to side×side when it differs."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if side is not None and img.size != (side, side):
                img = img.resize((side, side), Image.Resampling.BILINEAR)
            pixels = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError:
        raise FormatError(f"image not found: {path}") from None
    except (UnidentifiedImageError, OSError) as e:
        raise FormatError(f"could not decode image {path}: {e}") from None
    return pixels.astype(np.float64) / 255.0


def upscale(image: np.ndarray, side: int) -> Image.Image:
    """Nearest-neighbour enlargement for overlays, so individual cells stay visible."""
    return Image.fromarray(to_uint8(image), mode="RGB").resize((side, side), Image.Resampling.NEAREST)
