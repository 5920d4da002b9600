# src/core_services/base_encoder.py
"""
Per-image convolutional feature blocks Q (C×M×M).

The tiny stem stands in for a pretrained residual backbone: each stage is a
"same"-padded k×k convolution, an activation and a max-pool. Convolutions are
patch gathers followed by a matmul, so the whole stem differentiates through
the tensor core.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from config import EncoderConfig
from core_services.initializers import xavier_init
from core_services.tensor_core import (
    Tensor, add, as_tensor, concatenate, constant, matmul, relu, reshape, take, tanh, transpose,
)
from utils import storage_service
from utils.exceptions import FormatError, ShapeError


@dataclass
class FeatureMap:
    """Convolutional activations of one image (C×M×M) or a batch of them (N×C×M×M)."""
    values: Tensor

    def __post_init__(self):
        shape = self.values.shape
        if self.values.ndim not in (3, 4) or shape[-1] != shape[-2]:
            raise ShapeError(f"feature map must be [N×]C×M×M with a square grid, got {shape}")

    @property
    def channels(self) -> int:
        return self.values.shape[-3]

    @property
    def side(self) -> int:
        return self.values.shape[-1]

    @property
    def batched(self) -> bool:
        return self.values.ndim == 4


@dataclass
class StemParams:
    weights: list[Tensor]
    biases: list[Tensor]

    def named(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases), start=1):
            out[f"encoder.conv{i}.weight"] = w
            out[f"encoder.conv{i}.bias"] = b
        return out


def init_stem(cfg: EncoderConfig, rng: np.random.Generator) -> StemParams:
    weights, biases = [], []
    in_channels = 3
    for i, out_channels in enumerate(cfg.stem_channels, start=1):
        fan_in = in_channels * cfg.kernel_size * cfg.kernel_size
        weights.append(xavier_init((fan_in, out_channels), rng, name=f"encoder.conv{i}.weight"))
        biases.append(xavier_init((out_channels,), rng, name=f"encoder.conv{i}.bias", bias=True))
        in_channels = out_channels
    return StemParams(weights, biases)


@lru_cache(maxsize=64)
def _patch_index(batch: int, channels: int, side: int, kernel: int, stride: int) -> np.ndarray:
    """Flat indices of every k×k patch; out-of-image taps point at a trailing zero slot."""
    pad = kernel // 2
    out_side = (side + 2 * pad - kernel) // stride + 1
    origin = np.arange(out_side) * stride - pad
    offsets = np.arange(kernel)
    rows = origin[:, None, None, None] + offsets[None, None, :, None]      # (out, 1, k, 1)
    cols = origin[None, :, None, None] + offsets[None, None, None, :]      # (1, out, 1, k)
    rows, cols = np.broadcast_arrays(rows, cols)                           # (out, out, k, k)
    inside = (rows >= 0) & (rows < side) & (cols >= 0) & (cols < side)
    pad_slot = batch * channels * side * side

    n = np.arange(batch)[:, None, None, None, None, None]
    c = np.arange(channels)[None, None, None, :, None, None]
    flat = ((n * channels + c) * side + rows[None, :, :, None]) * side + cols[None, :, :, None]
    flat = np.where(inside[None, :, :, None], flat, pad_slot)              # (N, out, out, C, k, k)
    return flat.reshape(batch, out_side * out_side, channels * kernel * kernel)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, kernel: int, stride: int) -> Tensor:
    """N×C×S×S → N×C'×S'×S' via patch gather and matmul (weight is (C·k·k)×C')."""
    batch, channels, side, _ = x.shape
    index = _patch_index(batch, channels, side, kernel, stride)
    flat = concatenate([reshape(x, (-1,)), constant(np.zeros(1))])
    patches = take(flat, index)                                            # (N, P, C·k·k)
    out = add(matmul(patches, weight), bias)                               # (N, P, C')
    out_side = int(round(np.sqrt(index.shape[1])))
    return reshape(transpose(out), (batch, weight.shape[1], out_side, out_side))


def max_pool(x: Tensor, size: int) -> Tensor:
    """Non-overlapping size×size max-pool, routed through ``take`` at the argmax cells."""
    if size == 1:
        return x
    batch, channels, side, _ = x.shape
    out_side = side // size
    blocks = x.data.reshape(batch, channels, out_side, size, out_side, size)
    winner = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(batch, channels, out_side, out_side, size * size).argmax(-1)
    dy, dx = np.divmod(winner, size)
    n = np.arange(batch)[:, None, None, None]
    c = np.arange(channels)[None, :, None, None]
    y = np.arange(out_side)[None, None, :, None] * size + dy
    xx = np.arange(out_side)[None, None, None, :] * size + dx
    flat_index = ((n * channels + c) * side + y) * side + xx
    return take(reshape(x, (-1,)), flat_index)


def _check_images(images: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ShapeError(f"images must be H×W×3 or N×H×W×3, got {images.shape}")
    if images.shape[1] != cfg.input_side or images.shape[2] != cfg.input_side:
        raise ShapeError(f"image side {images.shape[1]}×{images.shape[2]} does not match "
                         f"the configured input side {cfg.input_side}")
    if not np.all(np.isfinite(images)) or images.min() < 0.0 or images.max() > 1.0:
        raise ShapeError("image values must be finite and lie in [0, 1]")
    return images


def encode(image, cfg: EncoderConfig, params: StemParams | None = None) -> FeatureMap:
    """Image(s) in [0,1] → FeatureMap; in file-load mode ``image`` is a feature-file path."""
    if cfg.mode == "file-load":
        features = load_feature_file(image)
        if features.channels != cfg.channels or features.side != cfg.side:
            raise FormatError(f"feature file declares {features.channels}×{features.side}×{features.side}, "
                              f"config expects {cfg.channels}×{cfg.side}×{cfg.side}")
        return features

    if params is None:
        raise ShapeError("tiny-stem encoding needs stem parameters")
    images = _check_images(image, cfg)
    single = np.asarray(image).ndim == 3
    x = constant(images.transpose(0, 3, 1, 2))
    for weight, bias, stride in zip(params.weights, params.biases, cfg.stem_strides):
        x = conv2d(x, weight, bias, cfg.kernel_size, stride)
        x = relu(x) if cfg.activation == "relu" else tanh(x)
        x = max_pool(x, cfg.pool)
    if single:
        x = reshape(x, x.shape[1:])
    return FeatureMap(x)


def load_feature_file(path: str) -> FeatureMap:
    return FeatureMap(constant(storage_service.read_feature_file(path)))


def save_feature_file(path: str, features: FeatureMap | Tensor | np.ndarray) -> str:
    if isinstance(features, FeatureMap):
        features = features.values
    values = as_tensor(features).data
    return storage_service.write_feature_file(path, values)
