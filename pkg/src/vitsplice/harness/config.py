"""Flat ``key = value`` pipeline configuration with dotted section keys.

Example::

    seed = 7
    vit.depth = 4
    train.steps = 500
    threshold.policy = otsu
    post.schedule = 1:2, 1:3, 2:4, 3:6, 5:8

Unknown keys are errors.  ``seed`` must be given, either in the file or as
an override.  Environment variables named ``VITSPLICE_<SECTION>__<NAME>``
(for example ``VITSPLICE_TRAIN__STEPS=10``) override file values.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..detect import ThresholdPolicy
from ..errors import ConfigError
from ..morphology import ErodeIsolatedSpec, PostProcessConfig, StructuringElement
from ..vit_recon import ViTConfig

ENV_PREFIX = "VITSPLICE_"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class ThresholdConfig:
    policy: str = "quantile"
    value: float = 0.99

    def build(self) -> ThresholdPolicy:
        return ThresholdPolicy(self.policy, self.value)


@dataclass(frozen=True)
class DetectConfig:
    stride: int | None = None  # None: one tile, i.e. non-overlapping
    laplacian: int = 4
    batch_size: int = 16


@dataclass(frozen=True)
class PostConfig:
    closing: int = 3
    fill_holes: bool = True
    schedule: tuple = ((1, 2), (1, 3), (2, 4), (3, 6), (5, 8))
    max_iterations: int | None = None

    def build(self) -> PostProcessConfig:
        return PostProcessConfig(
            StructuringElement.square(self.closing),
            self.fill_holes,
            tuple(ErodeIsolatedSpec(a, b) for a, b in self.schedule),
            self.max_iterations,
        )


@dataclass(frozen=True)
class DataConfig:
    train_dir: str = ""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    vit: ViTConfig = field(default_factory=ViTConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    post: PostConfig = field(default_factory=PostConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.detect.stride is not None and not 1 <= self.detect.stride <= self.vit.image_size:
            raise ConfigError("detect.stride must lie in [1, vit.image_size]")
        if self.train.steps < 0 or self.train.batch_size < 1:
            raise ConfigError("train.steps must be >= 0 and train.batch_size >= 1")
        # surface nested validation errors at load time
        self.threshold.build()
        self.post.build()


_SECTIONS = ("vit", "train", "threshold", "detect", "post", "data")
_OPTIONAL_INTS = ("post.max_iterations", "detect.stride")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(f"{a}:{b}" for a, b in value)
    return str(value)


def _parse(key: str, text: str, default):
    text = text.strip()
    try:
        if key == "post.schedule":
            pairs = []
            for item in text.split(","):
                a, b = item.split(":")
                pairs.append((int(a), int(b)))
            return tuple(pairs)
        if key in _OPTIONAL_INTS:
            return None if text.lower() == "none" else int(text)
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true/false, got {text!r}")
            return low == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc


def _defaults() -> dict:
    base = PipelineConfig(seed=0)
    out = {"seed": 0}
    for sec in _SECTIONS:
        for f in dataclasses.fields(getattr(base, sec)):
            out[f"{sec}.{f.name}"] = getattr(getattr(base, sec), f.name)
    return out


KNOWN_KEYS = tuple(_defaults())


def to_flat(cfg: PipelineConfig) -> dict:
    out = {"seed": cfg.seed}
    for sec in _SECTIONS:
        for f in dataclasses.fields(getattr(cfg, sec)):
            out[f"{sec}.{f.name}"] = getattr(getattr(cfg, sec), f.name)
    return out


def from_flat(values: Mapping[str, str]) -> PipelineConfig:
    """Build a config from string values keyed by dotted names."""
    defaults = _defaults()
    unknown = sorted(set(values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if "seed" not in values:
        raise ConfigError("config must set 'seed'")
    typed = {k: _parse(k, v, defaults[k]) for k, v in values.items()}
    sections = {sec: {} for sec in _SECTIONS}
    for key, val in typed.items():
        if key != "seed":
            sec, name = key.split(".", 1)
            sections[sec][name] = val
    classes = {
        "vit": ViTConfig,
        "train": TrainConfig,
        "threshold": ThresholdConfig,
        "detect": DetectConfig,
        "post": PostConfig,
        "data": DataConfig,
    }
    try:
        built = {sec: classes[sec](**kw) for sec, kw in sections.items()}
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return PipelineConfig(seed=typed["seed"], **built)


def override(cfg: PipelineConfig, values: Mapping[str, str]) -> PipelineConfig:
    """Copy of ``cfg`` with some dotted keys replaced (values given as text)."""
    flat = {k: _format(v) for k, v in to_flat(cfg).items()}
    flat.update(values)
    return from_flat(flat)


def parse_config(text: str, overrides: Mapping[str, str] | None = None) -> PipelineConfig:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = val
    values.update(overrides or {})
    return from_flat(values)


def serialize_config(cfg: PipelineConfig) -> str:
    """Canonical text: every key, fixed order, one per line."""
    return "".join(f"{k} = {_format(v)}\n" for k, v in to_flat(cfg).items())


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, val in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"environment variable {name} names unknown config key {key!r}")
        out[key] = val
    return out


def load_config(path=None, overrides: Mapping[str, str] | None = None, environ=None) -> PipelineConfig:
    """Read ``path`` (optional), then apply environment and explicit overrides."""
    text = Path(path).read_text() if path is not None else ""
    merged = env_overrides(environ)
    merged.update(overrides or {})
    return parse_config(text, merged)
