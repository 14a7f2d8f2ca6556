"""Dataclass configs for the model, training and selection, plus JSON helpers.

Every config validates itself in ``__post_init__`` and round-trips through
plain dicts so it can be echoed next to checkpoints and run outputs.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .errors import ConfigError

SCHEMA_VERSION = 1

SCENARIOS = ("none", "weight-all", "kendall", "ours")


@dataclass
class GeneratorConfig:
    z_dim: int = 256
    n_classes: int = 2
    init_grid: Tuple[int, int] = (2, 2)
    stage_dims: Tuple[int, int, int, int] = (256, 256, 64, 16)
    encoders_per_stage: Tuple[int, int, int, int] = (4, 4, 4, 4)
    window_sizes: Dict[int, int] = field(default_factory=lambda: {3: 8, 4: 16})
    out_resolution: Tuple[int, int] = (32, 32)
    num_heads: int = 4
    mlp_ratio: float = 4.0
    interp_mode: str = "bicubic"
    eps: float = 1e-5

    n_stages = 4

    def __post_init__(self):
        self.init_grid = tuple(self.init_grid)
        self.stage_dims = tuple(self.stage_dims)
        self.encoders_per_stage = tuple(self.encoders_per_stage)
        self.out_resolution = tuple(self.out_resolution)
        self.window_sizes = {int(k): int(v) for k, v in self.window_sizes.items()}
        h0, w0 = self.init_grid
        if self.out_resolution != (h0 * 16, w0 * 16):
            raise ConfigError(
                f"out_resolution {self.out_resolution} != init_grid x 16 ({h0 * 16}, {w0 * 16})")
        if len(self.stage_dims) != 4 or len(self.encoders_per_stage) != 4:
            raise ConfigError("stage_dims and encoders_per_stage need 4 entries")
        d = self.stage_dims
        if d[1] != d[0]:
            raise ConfigError("stage_dims[1] must equal stage_dims[0] (interpolation keeps channels)")
        for i in (2, 3):
            if d[i] * 4 != d[i - 1]:
                raise ConfigError(f"stage_dims[{i}] must be stage_dims[{i - 1}] / 4")
        if d[3] % 4:
            raise ConfigError("stage_dims[3] must be divisible by 4 for the last pixel shuffle")
        if self.z_dim % self.n_stages:
            raise ConfigError(f"z_dim {self.z_dim} not divisible by {self.n_stages} stages")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if set(self.window_sizes) - {3, 4}:
            raise ConfigError("window_sizes may only name stages 3 and 4")
        for stage, win in self.window_sizes.items():
            res = self.stage_resolution(stage)
            if win <= 0 or res[0] % win or res[1] % win:
                raise ConfigError(f"window {win} does not divide stage-{stage} grid {res}")
        if self.interp_mode not in ("bicubic", "bilinear"):
            raise ConfigError(f"unknown interp_mode {self.interp_mode!r}")

    def stage_resolution(self, stage):
        """Grid after ``stage`` upsamplings (stage 0 is the initial token grid)."""
        h0, w0 = self.init_grid
        return (h0 * 2 ** stage, w0 * 2 ** stage)

    def stage_channels(self, stage):
        """Channel width of the encoders in ``stage`` (1..4); stage 0 is the token embedding."""
        if stage == 0:
            return self.stage_dims[0]
        if stage == 4:
            return self.stage_dims[3] // 4
        return self.stage_dims[stage]

    @property
    def chunk_dim(self):
        return self.z_dim // self.n_stages

    @classmethod
    def full_scale(cls, **overrides):
        """96x96 layout: 6x6 tokens, four 2x upsamplings, windows 24/16."""
        kw = dict(init_grid=(6, 6), out_resolution=(96, 96),
                  stage_dims=(1024, 1024, 256, 64), window_sizes={3: 24, 4: 16})
        kw.update(overrides)
        return cls(**kw)


@dataclass
class DiscriminatorConfig:
    in_resolution: Tuple[int, int] = (32, 32)
    patch_sizes: Tuple[int, int, int] = (4, 8, 16)
    embed_dims: Tuple[int, int, int] = (64, 96, 128)
    encoders_per_stage: Tuple[int, int, int, int] = (1, 1, 1, 2)
    n_classes: int = 2
    num_heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        self.in_resolution = tuple(self.in_resolution)
        self.patch_sizes = tuple(self.patch_sizes)
        self.embed_dims = tuple(self.embed_dims)
        self.encoders_per_stage = tuple(self.encoders_per_stage)
        p = self.patch_sizes
        if len(p) != 3 or len(self.embed_dims) != 3 or len(self.encoders_per_stage) != 4:
            raise ConfigError("need 3 patch sizes, 3 embed dims and 4 encoder counts")
        if p[1] != 2 * p[0] or p[2] != 2 * p[1]:
            raise ConfigError(f"patch sizes {p} must double at each level")
        h, w = self.in_resolution
        if h % p[2] or w % p[2]:
            raise ConfigError(f"resolution {self.in_resolution} not divisible by patch {p[2]}")
        for d in self.embed_dims:
            if d % self.num_heads:
                raise ConfigError(f"embed dim {d} not divisible by num_heads {self.num_heads}")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")

    def level_grid(self, level):
        h, w = self.in_resolution
        p = self.patch_sizes[level]
        return (h // p, w // p)

    @classmethod
    def full_scale(cls, **overrides):
        kw = dict(in_resolution=(96, 96), patch_sizes=(8, 16, 32), embed_dims=(384, 384, 384))
        kw.update(overrides)
        return cls(**kw)


@dataclass
class LossConfig:
    gp_coeff: float = 10.0
    scenario: str = "ours"
    exact_scaled_softmax: bool = False

    def __post_init__(self):
        if self.gp_coeff < 0:
            raise ConfigError("gp_coeff must be >= 0")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")


@dataclass
class GanConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    aug_policy: str = "color,translation,cutout,scaling,rotation"

    def __post_init__(self):
        g, d = self.generator, self.discriminator
        if g.out_resolution != d.in_resolution:
            raise ConfigError("generator output and discriminator input resolutions differ")
        if g.n_classes != d.n_classes:
            raise ConfigError("generator and discriminator disagree on n_classes")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    batch_size: int = 12
    epochs: int = 500
    d_steps_per_g: int = 1
    fid_every: int = 5
    fid_sample_count: int = 1024
    fid_extractor: str = "toy-fixed"
    seed: int = 0
    max_steps_per_epoch: Optional[int] = None

    def __post_init__(self):
        for name in ("lr", "batch_size", "epochs", "d_steps_per_g", "fid_every", "fid_sample_count"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must be in [0, 1)")
        if self.epochs > 500:
            raise ConfigError("epochs is capped at 500")


@dataclass
class SelectionConfig:
    tau: float = 0.7
    conf_threshold: float = 0.6
    ratio: float = 1.0
    class_balance: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")
        if not 0 < self.conf_threshold < 1:
            raise ConfigError("conf_threshold must be in (0, 1)")
        if not self.ratio > 0:
            raise ConfigError("ratio must be > 0")

    def check_classes(self, n_classes):
        if self.conf_threshold <= 1.0 / n_classes:
            raise ConfigError(
                f"conf_threshold {self.conf_threshold} is vacuous for {n_classes} classes")


# -- dict / JSON round trips -------------------------------------------------

_NESTED = {
    GanConfig: {"generator": GeneratorConfig, "discriminator": DiscriminatorConfig,
                "loss": LossConfig},
}


def to_dict(cfg):
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, dict):
            v = {str(k): val for k, val in v.items()}
        out[f.name] = v
    return out


def from_dict(cls, data):
    """Build ``cls`` from a dict, rejecting unknown keys and filling defaults."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} expects an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = dict(data)
    for key, sub in _NESTED.get(cls, {}).items():
        if key in kw:
            kw[key] = from_dict(sub, kw[key])
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(cfg):
    blob = json.dumps(to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunConfig:
    """Merged, schema-versioned configuration written next to every CLI output."""

    gan: GanConfig = field(default_factory=GanConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    data_root: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")


_NESTED[RunConfig] = {"gan": GanConfig, "train": TrainConfig, "selection": SelectionConfig}


def load_run_config(path=None, data=None):
    if path is not None:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad config JSON: {exc}") from exc
    return from_dict(RunConfig, data or {})


def dump_json(obj, path):
    if dataclasses.is_dataclass(obj):
        obj = to_dict(obj)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
