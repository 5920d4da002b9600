# src/core_services/dcc_model.py
"""
The full comparator model: stem → co-attention → fusion → score head.

``head.fusion`` picks how a co-attended pair becomes an embedding:
``dcc`` runs the alternating glimpse comparator, ``spp`` and ``gp`` pool the
concatenated summaries [Z_a; Z_b] (the ablation baselines).
"""
import logging

import numpy as np

from config import RunConfig
from core_services.base_encoder import FeatureMap, StemParams, encode, init_stem
from core_services.coattention import CoAttentionPair, co_attend, init_coattention
from core_services.pooling_baselines import global_pool, spp_pool
from core_services.recurrent_comparator import Comparison, compare, init_comparator, make_dropout_mask
from core_services.similarity_head import init_head, score
from core_services.tensor_core import Tensor, concatenate, constant, mul, no_grad, reshape, take
from utils.exceptions import ShapeError

logger = logging.getLogger(__name__)

SPP_BINS = 5
SCORE_CHUNK = 256


class DCCModel:
    def __init__(self, cfg: RunConfig, stem: StemParams, coattention, comparator, head):
        self.cfg = cfg
        self.stem = stem
        self.coattention = coattention
        self.comparator = comparator
        self.head = head

    @classmethod
    def initialize(cls, cfg: RunConfig, rng: np.random.Generator) -> "DCCModel":
        enc = cfg.encoder
        stem = init_stem(enc, rng) if enc.mode == "tiny-stem" else StemParams([], [])
        coattention = init_coattention(enc.channels, rng)
        comparator = None
        if cfg.head.fusion == "dcc":
            comparator = init_comparator(enc.channels, cfg.comparator, cfg.glimpse, rng)
        head = init_head(cls.embedding_size_for(cfg), cfg.train.classes, rng)
        model = cls(cfg, stem, coattention, comparator, head)
        logger.info("initialized %s model with %d parameter tensors (%d values)",
                    cfg.head.fusion, len(model.parameters()), model.parameter_count())
        return model

    @staticmethod
    def embedding_size_for(cfg: RunConfig) -> int:
        channels = cfg.encoder.channels
        if cfg.head.fusion == "dcc":
            return cfg.comparator.hidden
        if cfg.head.fusion == "spp":
            return SPP_BINS * 2 * channels
        return 2 * channels

    # --- parameters ------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        named = {}
        named.update(self.stem.named())
        named.update(self.coattention.named())
        if self.comparator is not None:
            named.update(self.comparator.named())
        named.update(self.head.named())
        return named

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.numpy() for name, t in self.parameters().items()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        """Copy stored values into the live parameters; names and shapes must match exactly."""
        params = self.parameters()
        missing = sorted(set(params) - set(tensors))
        unexpected = sorted(set(tensors) - set(params))
        if missing or unexpected:
            raise ShapeError(f"checkpoint does not fit this model (missing {missing}, unexpected {unexpected})")
        for name, tensor in params.items():
            stored = np.asarray(tensors[name], dtype=np.float64)
            if stored.shape != tensor.shape:
                raise ShapeError(f"checkpoint tensor {name} has shape {stored.shape}, model expects {tensor.shape}")
            tensor.data = stored.copy()
            tensor.grad = None

    # --- forward ---------------------------------------------------------------

    def encode(self, images) -> FeatureMap:
        """A list (or N×H×W×3 array) of images, or feature-file paths in file-load mode → N×C×M×M."""
        enc = self.cfg.encoder
        if enc.mode == "file-load":
            blocks = [encode(path, enc).values for path in images]
            return FeatureMap(concatenate([reshape(b, (1,) + b.shape) for b in blocks], axis=0))
        return encode(np.stack([np.asarray(image, dtype=np.float64) for image in images]), enc, self.stem)

    def co_attend(self, features: FeatureMap, index_a, index_b) -> CoAttentionPair:
        q_a = take(features.values, index_a, axis=0)
        q_b = take(features.values, index_b, axis=0)
        return co_attend(q_a, q_b, self.coattention)

    def fuse(self, pair: CoAttentionPair, dropout_mask: np.ndarray | None = None) -> Tensor:
        """Co-attended pairs → P×D embeddings under the configured fusion."""
        fusion = self.cfg.head.fusion
        if fusion == "dcc":
            return compare(pair.Z_a, pair.Z_b, self.cfg.comparator.glimpses, self.comparator,
                           self.cfg.glimpse, dropout_mask=dropout_mask).embedding
        stacked = concatenate([pair.Z_a, pair.Z_b], axis=-2)                  # P×2C×M²
        pooled = spp_pool(stacked) if fusion == "spp" else global_pool(stacked)
        if dropout_mask is not None:
            pooled = mul(pooled, constant(dropout_mask))
        return pooled

    def embed_images(self, images, index_a, index_b, rng: np.random.Generator | None = None) -> Tensor:
        """Embeddings of the pairs (images[index_a[p]], images[index_b[p]]); ``rng`` enables dropout."""
        features = self.encode(images)
        pair = self.co_attend(features, index_a, index_b)
        mask = None
        if rng is not None and self.cfg.comparator.dropout > 0.0:
            mask = make_dropout_mask((len(index_a), self.head.w.shape[0]), self.cfg.comparator.dropout, rng)
        return self.fuse(pair, dropout_mask=mask)

    def pair_scores(self, images_a, images_b, symmetric: bool = False) -> np.ndarray:
        """Test-time similarity s(h_T(a, b)) for every a in ``images_a`` against every b in ``images_b``."""
        images = list(images_a) + list(images_b)
        n_a, n_b = len(images_a), len(images_b)
        rows = np.repeat(np.arange(n_a), n_b)
        cols = n_a + np.tile(np.arange(n_b), n_a)
        with no_grad():
            features = self.encode(images)
            scores = self._chunked_scores(features, rows, cols)
            if symmetric:
                scores = 0.5 * (scores + self._chunked_scores(features, cols, rows))
        return scores.reshape(n_a, n_b)

    def _chunked_scores(self, features: FeatureMap, index_a: np.ndarray, index_b: np.ndarray) -> np.ndarray:
        out = np.empty(len(index_a))
        for start in range(0, len(index_a), SCORE_CHUNK):
            stop = start + SCORE_CHUNK
            pair = self.co_attend(features, index_a[start:stop], index_b[start:stop])
            out[start:stop] = score(self.fuse(pair), self.head).data
        return out

    def compare_pair(self, image_a, image_b) -> tuple[Comparison | None, CoAttentionPair]:
        """One pair, no gradients: the comparator run (None for pooling heads) and its co-attention."""
        with no_grad():
            features = self.encode([image_a, image_b])
            pair = self.co_attend(features, np.array([0]), np.array([1]))
            comparison = None
            if self.comparator is not None:
                comparison = compare(pair.Z_a, pair.Z_b, self.cfg.comparator.glimpses,
                                     self.comparator, self.cfg.glimpse)
        return comparison, pair
