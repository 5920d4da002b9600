# src/config.py
# THIS FILE IS SAFE TO COMMIT TO GITHUB

import copy
import os
from math import prod
from typing import Literal

import toml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from utils.exceptions import ConfigError

# This line loads the variables from your .env file into the environment
load_dotenv()


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return default
    try:
        return int(value)
    except ValueError:
        print(f"⚠️  Warning: {name}={value!r} is not an integer, using {default}.")
        return default


# --- Environment defaults (read from environment) ---
DCC_SEED = _env_int("DCC_SEED", 0)
DATA_PATH = os.getenv("DATA_PATH", ".")
DCC_DEBUG_NANS = os.getenv("DCC_DEBUG_NANS", "0").strip().lower() in ("1", "true", "yes", "on")
DCC_LOG_LEVEL = os.getenv("DCC_LOG_LEVEL", "INFO")

# --- Output layout ---
RUNS_PATH = os.path.join(DATA_PATH, "runs")
CHECKPOINT_NAME = "checkpoint.dcckpt"
METRICS_LOG_NAME = "metrics.csv"
TRAINING_LOG_NAME = "training.log"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EncoderConfig(_Section):
    mode: Literal["tiny-stem", "file-load"] = "tiny-stem"
    stem_channels: tuple[int, ...] = (16, 32)
    stem_strides: tuple[int, ...] = (2, 1)
    pool: int = Field(2, ge=1)
    kernel_size: int = Field(3, ge=1)
    activation: Literal["relu", "tanh"] = "relu"
    input_side: int = Field(56, ge=1)
    feature_channels: int = Field(1024, ge=1)
    feature_side: int = Field(14, ge=1)

    @model_validator(mode="after")
    def _check_geometry(self):
        if len(self.stem_channels) != len(self.stem_strides) or not self.stem_channels:
            raise ValueError("stem_channels and stem_strides need the same, non-zero length")
        if min(self.stem_channels) < 1 or min(self.stem_strides) < 1:
            raise ValueError("stem widths and strides must be positive")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd so 'same' padding is symmetric")
        if self.mode == "tiny-stem":
            side = self.input_side
            for stride in self.stem_strides:
                for step in (stride, self.pool):
                    if side % step:
                        raise ValueError(
                            f"input_side {self.input_side} does not reduce evenly through strides "
                            f"{self.stem_strides} with pool {self.pool}")
                    side //= step
        return self

    @property
    def reduction(self) -> int:
        return prod(s * self.pool for s in self.stem_strides)

    @property
    def channels(self) -> int:
        return self.stem_channels[-1] if self.mode == "tiny-stem" else self.feature_channels

    @property
    def side(self) -> int:
        return self.input_side // self.reduction if self.mode == "tiny-stem" else self.feature_side


class GlimpseConfig(_Section):
    K: int = Field(2, ge=1)
    kernel: Literal["cauchy", "gaussian"] = "cauchy"
    eq7_division: bool = False


class ComparatorConfig(_Section):
    hidden: int = Field(64, ge=1)
    glimpses: int = Field(8, ge=1)
    dropout: float = Field(0.3, ge=0.0, lt=1.0)


class HeadConfig(_Section):
    fusion: Literal["dcc", "spp", "gp"] = "dcc"


class TrainConfig(_Section):
    batch_size: int = Field(8, ge=1)
    classes: int = Field(10, ge=2)
    lr: float = Field(1e-3, ge=0.0)
    decay: float = Field(0.88, gt=0.0, lt=1.0)
    staircase: bool = False
    clip: float = Field(100.0, gt=0.0)
    clip_mode: Literal["sum_of_norms", "global_norm"] = "sum_of_norms"
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    epochs: int = Field(50, ge=1)
    episodes_per_epoch: int = Field(256, ge=1)
    checkpoint_every: int = Field(100, ge=1)
    early_stop_patience: int | None = Field(5, ge=1)
    seed: int = Field(default_factory=lambda: DCC_SEED)

    @property
    def steps_per_epoch(self) -> int:
        return max(1, -(-self.episodes_per_epoch // self.batch_size))


class EvalConfig(_Section):
    trials: int = Field(10, ge=1)
    ranks: tuple[int, ...] = (1, 5, 10, 20)
    probe_camera: int = Field(0, ge=0)
    symmetric: bool = False


class DataConfig(_Section):
    ids: int = Field(20, ge=1)
    views: int = Field(4, ge=1)
    side: int = Field(56, ge=8)
    id_offset: int = Field(0, ge=0)
    max_occlusion: float = Field(0.15, ge=0.0, le=0.6)
    noise: float = Field(0.02, ge=0.0, le=0.2)
    brightness_jitter: float = Field(0.08, ge=0.0, le=0.3)
    hue_jitter: float = Field(0.015, ge=0.0, le=0.1)
    max_shift: int = Field(3, ge=0)


class RunConfig(_Section):
    encoder: EncoderConfig = EncoderConfig()
    glimpse: GlimpseConfig = GlimpseConfig()
    comparator: ComparatorConfig = ComparatorConfig()
    head: HeadConfig = HeadConfig()
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = EvalConfig()
    data: DataConfig = DataConfig()
    debug_nans: bool = DCC_DEBUG_NANS

    @model_validator(mode="after")
    def _check_cross_section(self):
        if self.encoder.mode == "tiny-stem" and self.encoder.input_side != self.data.side:
            raise ValueError(f"encoder.input_side ({self.encoder.input_side}) must equal data.side ({self.data.side})")
        return self


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not of the form section.key=value")
    dotted, raw_value = text.split("=", 1)
    path = [part.strip() for part in dotted.strip().split(".") if part.strip()]
    if not path:
        raise ConfigError(f"override '{text}' has an empty key")
    try:
        value = toml.loads(f"v = {raw_value.strip()}")["v"]
    except toml.TomlDecodeError:
        value = raw_value.strip()
    return path, value


def _validation_key(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first.get("loc", ())) or "<root>"


def load_run_config(path: str | None = None, overrides=()) -> RunConfig:
    """Read a TOML config, apply ``section.key=value`` overrides, validate everything."""
    raw: dict = {}
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = toml.load(path)
        except (toml.TomlDecodeError, OSError) as e:
            raise ConfigError(f"could not parse config file {path}: {e}") from None

    return config_from_dict(apply_overrides(raw, overrides))


def apply_overrides(raw: dict, overrides=()) -> dict:
    """Return a copy of ``raw`` with every ``section.key=value`` override written into it."""
    raw = copy.deepcopy(raw)
    for text in overrides:
        keys, value = _parse_override(text)
        node = raw
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError("override descends into a scalar", key=".".join(keys))
        node[keys[-1]] = value
    return raw


def config_from_dict(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        key = _validation_key(e)
        raise ConfigError(f"invalid configuration: {e.errors()[0].get('msg', 'rejected')}", key=key) from None


def config_to_dict(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json")
