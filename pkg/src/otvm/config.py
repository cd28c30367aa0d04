"""Presets and config-file loading.

Two presets exist: ``paper`` mirrors the published training setup (320px crops,
ResNet50 backbones, lr 1e-5) and ``toy`` is a desk-scale variant that trains on
a single CPU core. Config files are TOML::

    [preset]
    name = "toy"

    [model]
    key_dim = 16

    [train]
    lr = 1e-3
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import tomli

STAGE_NAMES = ("1a", "1b", "2", "3", "4")


@dataclass
class ModelConfig:
    preset: str = "toy"
    backbone: str = "toy"  # "toy" or "resnet50"
    key_dim: int = 16
    value_dim: int = 32
    prop_channels: tuple = (16, 24, 32, 48)
    decoder_channels: int = 32
    alpha_channels: tuple = (16, 24, 32, 48, 64)
    alpha_decoder_channels: int = 32
    ppm_bins: tuple = (1, 2, 3, 6)
    ppm_channels: int = 16
    refine_channels: int = 16
    alpha_hidden: int = 64
    refine_hidden: int = 16
    norm: str = "gn_ws"  # "gn_ws" or "bn"
    blur_sigmas: tuple = (1.0, 2.0, 4.0)


@dataclass
class SimConfig:
    out_size: int = 64
    crop_sizes: tuple = (64, 96, 128)
    trimap_kernel: tuple = (1, 7)  # inclusive range, odd kernels sampled
    affine: bool = True
    augment: bool = True
    # per-frame motion is a fraction of the full affine ranges around a shared base pose
    motion_fraction: float = 0.25
    flip_prob: float = 0.5
    max_rotation: float = 30.0
    max_shear: float = 10.0
    zoom: tuple = (0.8, 1.25)
    max_translation: float = 0.1
    hist_match_prob: float = 0.3
    hist_match_strength: float = 0.5
    motion_blur_prob: float = 0.3
    max_blur_length: int = 11
    noise_prob: float = 0.5
    max_noise_sigma: float = 0.02
    jpeg_prob: float = 0.3
    jpeg_quality: tuple = (70, 95)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_drop_at: float = 0.9
    lr_drop_factor: float = 0.1
    batch_size: int = 4
    frames: int = 3
    grad_clip: float | None = 5.0
    iterations: dict = field(
        default_factory=lambda: {"1a": 2000, "1b": 4000, "2": 1000, "3": 1000, "4": 2000}
    )
    checkpoint_every: int = 0
    seed: int = 0


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def preset(self):
        return self.model.preset

    def to_dict(self):
        return dataclasses.asdict(self)


def paper_config():
    return Config(
        model=ModelConfig(
            preset="paper",
            backbone="resnet50",
            key_dim=128,
            value_dim=512,
            prop_channels=(64, 256, 512, 1024),
            decoder_channels=256,
            alpha_channels=(64, 256, 512, 1024, 2048),
            alpha_decoder_channels=256,
            ppm_channels=256,
            refine_channels=32,
        ),
        sim=SimConfig(out_size=320, crop_sizes=(320, 480, 640), trimap_kernel=(1, 26)),
        train=TrainConfig(
            lr=1e-5,
            batch_size=4,
            grad_clip=None,
            iterations={"1a": 100_000, "1b": 400_000, "2": 50_000, "3": 50_000, "4": 80_000},
        ),
    )


def toy_config():
    return Config()


PRESETS = {"paper": paper_config, "toy": toy_config}


def get_config(preset="toy"):
    try:
        return PRESETS[preset]()
    except KeyError:
        raise ValueError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}") from None


def _apply(section, overrides, name):
    known = {f.name: f for f in dataclasses.fields(section)}
    for key, value in overrides.items():
        if key not in known:
            raise ValueError(f"unknown key {name}.{key}")
        current = getattr(section, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        if isinstance(current, dict) and isinstance(value, dict):
            value = {**current, **{str(k): v for k, v in value.items()}}
        setattr(section, key, value)


def config_from_dict(data):
    preset = data.get("preset", {}).get("name", "toy")
    cfg = get_config(preset)
    for name in ("model", "sim", "train"):
        if name in data:
            _apply(getattr(cfg, name), data[name], name)
    cfg.model.preset = preset
    return cfg


def load_config(path):
    with open(path, "rb") as f:
        return config_from_dict(tomli.load(f))


def model_config_from_dict(d):
    d = dict(d)
    for f in dataclasses.fields(ModelConfig):
        if isinstance(f.default, tuple) and f.name in d:
            d[f.name] = tuple(d[f.name])
    return ModelConfig(**d)
