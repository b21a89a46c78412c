"""Dataclass configs, named presets, and flat dotted-key merging.

Every field is addressable as ``section.field`` (``backbone.widths``,
``encoder.pos_embed``, ``train.epochs`` ...).  Sources merge with precedence
flags > config file > IVGN_SEED env var (seed only) > preset defaults.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from ivgn.errors import ConfigError


@dataclass
class BackboneConfig:
    widths: Tuple[int, ...] = (32, 64, 128, 256)
    strides: Tuple[int, ...] = (4, 2, 2, 2)
    kernels: Tuple[int, ...] = (3, 3, 3, 3)
    image_side: int = 224
    # 1-based stage indices followed by a GIA module (conv3_x / conv4_x analogues)
    gia_stages: Tuple[int, ...] = (3, 4)

    def validate(self) -> None:
        n = len(self.widths)
        if n == 0 or len(self.strides) != n or len(self.kernels) != n:
            raise ConfigError("backbone widths/strides/kernels must be non-empty and equal length")
        if any(k % 2 == 0 for k in self.kernels):
            raise ConfigError(f"backbone kernels must be odd, got {self.kernels}")
        if any(s < 1 for s in self.strides) or any(w < 1 for w in self.widths):
            raise ConfigError("backbone strides and widths must be positive")
        if len(set(self.gia_stages)) != len(self.gia_stages) or any(
            not 1 <= s <= n for s in self.gia_stages
        ):
            raise ConfigError(f"gia_stages {self.gia_stages} must be distinct indices in 1..{n}")
        side = self.image_side
        for i, s in enumerate(self.strides, start=1):
            if side % s:
                raise ConfigError(
                    f"image side {self.image_side} incompatible with stride plan {self.strides} "
                    f"(stage {i} input {side} not divisible by {s})"
                )
            side //= s
            if i in self.gia_stages and side * side < 2:
                raise ConfigError(f"GIA after stage {i} needs H*W >= 2, got {side}x{side}")
        if side * side < 2:
            raise ConfigError(f"final feature maps must have H*W >= 2, got {side}x{side}")

    def stage_sides(self) -> Tuple[int, ...]:
        sides, side = [], self.image_side
        for s in self.strides:
            side //= s
            sides.append(side)
        return tuple(sides)


@dataclass
class GiaConfig:
    scheme: str = "dsp"
    delta: float = 1e-4
    fusion: str = "mean"  # parallel-stage merge: "mean" | "sum"

    def validate(self) -> None:
        from ivgn.gia import parse_scheme

        if self.scheme not in ("", "none"):
            parse_scheme(self.scheme)
        if self.delta <= 0:
            raise ConfigError(f"SimAM delta must be positive, got {self.delta}")
        if self.fusion not in ("mean", "sum"):
            raise ConfigError(f"gia fusion must be 'mean' or 'sum', got {self.fusion!r}")


@dataclass
class EncoderConfig:
    layers: int = 3
    heads: int = 8
    dim: int = 512
    ff_dim: int = 2048
    dropout: float = 0.1
    pos_embed: bool = True

    def validate(self) -> None:
        if self.layers < 0 or self.heads < 1 or self.dim < 1:
            raise ConfigError("encoder layers >= 0, heads >= 1, dim >= 1 required")
        if self.dim % self.heads:
            raise ConfigError(f"encoder dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"encoder dropout must be in [0, 1), got {self.dropout}")


@dataclass
class DecoderConfig:
    hidden: int = 512
    embed: int = 512
    attn: int = 512
    pool: str = "sum"  # context pooling over positions: "sum" | "mean"
    init_state: str = "zeros"  # "zeros" | "visual"

    def validate(self) -> None:
        if min(self.hidden, self.embed, self.attn) < 1:
            raise ConfigError("decoder dims must be positive")
        if self.pool not in ("sum", "mean"):
            raise ConfigError(f"decoder pool must be 'sum' or 'mean', got {self.pool!r}")
        if self.init_state not in ("zeros", "visual"):
            raise ConfigError(f"decoder init_state must be 'zeros' or 'visual', got {self.init_state!r}")


@dataclass
class DataConfig:
    views: int = 1
    min_freq: int = 1

    def validate(self) -> None:
        if self.views < 1 or self.min_freq < 1:
            raise ConfigError("data views and min_freq must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr_backbone: float = 1e-3
    lr_gia: float = 5e-5
    lr_rest: float = 1e-2
    weight_decay: float = 5e-5
    decay_factor: float = 0.8
    decay_period: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: Optional[float] = None
    seed: int = 0
    beam_size: int = 3
    max_len: int = 60
    length_norm_alpha: float = 0.0
    dtype: str = "float64"
    val_every: int = 1

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.decay_period < 1:
            raise ConfigError("epochs, batch_size and decay_period must be >= 1")
        for name in ("lr_backbone", "lr_gia", "lr_rest"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be >= 0")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError(f"train.decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.beam_size < 1 or self.max_len < 1:
            raise ConfigError("beam_size and max_len must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"train.dtype must be float64 or float32, got {self.dtype!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("train.clip_norm must be positive when set")


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    gia: GiaConfig = field(default_factory=GiaConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    views: int = 1
    vocab_size: int = 0

    def validate(self) -> None:
        self.backbone.validate()
        self.gia.validate()
        self.encoder.validate()
        self.decoder.validate()
        if self.views < 1:
            raise ConfigError("views must be >= 1")
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the 4 reserved ids plus a token, got {self.vocab_size}")


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    gia: GiaConfig = field(default_factory=GiaConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        for section in SECTIONS:
            getattr(self, section).validate()
        return self

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            backbone=dataclasses.replace(self.backbone),
            gia=dataclasses.replace(self.gia),
            encoder=dataclasses.replace(self.encoder),
            decoder=dataclasses.replace(self.decoder),
            views=self.data.views,
            vocab_size=vocab_size,
        )

    def to_flat(self) -> Dict[str, Any]:
        return flatten(self)


SECTIONS = ("backbone", "gia", "encoder", "decoder", "data", "train")


def flatten(cfg) -> Dict[str, Any]:
    flat = {}
    for section in SECTIONS:
        sub = getattr(cfg, section, None)
        if sub is None:
            continue
        for f in dataclasses.fields(sub):
            value = getattr(sub, f.name)
            flat[f"{section}.{f.name}"] = list(value) if isinstance(value, tuple) else value
    return flat


def model_config_to_dict(cfg: ModelConfig) -> dict:
    out = {k: v for k, v in flatten(cfg).items()}
    out["views"] = cfg.views
    out["vocab_size"] = cfg.vocab_size
    return out


def model_config_from_dict(d: dict) -> ModelConfig:
    cfg = ModelConfig(views=int(d["views"]), vocab_size=int(d["vocab_size"]))
    for key, value in d.items():
        if "." in key:
            _set_key(cfg, key, value)
    return cfg


def _coerce(current, value, key: str):
    """Convert ``value`` (possibly a CLI string) to the type of the field's current value."""
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if isinstance(current, tuple):
            if isinstance(value, str):
                value = [v for v in value.replace(" ", "").split(",") if v]
            return tuple(int(v) for v in value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if current is None:
            if value in (None, "", "none", "None"):
                return None
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r} for {key}") from exc


def _set_key(cfg, key: str, value) -> None:
    parts = key.split(".")
    if len(parts) != 2 or not hasattr(cfg, parts[0]):
        raise ConfigError(f"unknown config key {key!r}")
    section = getattr(cfg, parts[0])
    names = {f.name for f in dataclasses.fields(section)}
    if parts[1] not in names:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(section, parts[1], _coerce(getattr(section, parts[1]), value, key))


def apply_overrides(cfg: RunConfig, overrides: Dict[str, Any]) -> RunConfig:
    for key, value in overrides.items():
        _set_key(cfg, key, value)
    return cfg


def read_config_file(path) -> Dict[str, Any]:
    """JSON (flat dotted keys or nested sections) or ``key=value`` lines."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        flat = {}
        for key, value in raw.items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    flat[f"{key}.{sub}"] = v
            else:
                flat[key] = value
        return flat
    flat = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def _iu_xray_preset() -> RunConfig:
    # full-scale IU X-Ray settings; far too slow for the numpy engine, kept for reference
    return RunConfig(
        train=TrainConfig(
            epochs=50, batch_size=16, lr_backbone=1e-3, lr_gia=5e-5, lr_rest=1e-2,
            weight_decay=5e-5, decay_factor=0.8, decay_period=10, beam_size=3,
        ),
        data=DataConfig(views=2),
    )


def _toy_preset() -> RunConfig:
    return RunConfig(
        backbone=BackboneConfig(
            widths=(16, 32, 32), strides=(2, 2, 2), kernels=(3, 3, 3), image_side=32,
            gia_stages=(2, 3),
        ),
        encoder=EncoderConfig(layers=1, heads=4, dim=32, ff_dim=64, dropout=0.1, pos_embed=True),
        decoder=DecoderConfig(hidden=64, embed=32, attn=32),
        train=TrainConfig(
            epochs=60, batch_size=16, lr_backbone=2e-3, lr_gia=2e-3, lr_rest=5e-3,
            weight_decay=5e-5, decay_factor=0.8, decay_period=10, beam_size=3, max_len=30,
        ),
    )


PRESETS = {"iu-xray": _iu_xray_preset, "toy": _toy_preset, "default": RunConfig}


def resolve_config(
    preset_name: str = "toy",
    config_path=None,
    overrides: Optional[Dict[str, Any]] = None,
    environ: Optional[Dict[str, str]] = None,
) -> RunConfig:
    cfg = preset(preset_name)
    env = os.environ if environ is None else environ
    if env.get("IVGN_SEED"):
        apply_overrides(cfg, {"train.seed": env["IVGN_SEED"]})
    if config_path is not None:
        apply_overrides(cfg, read_config_file(config_path))
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg.validate()
