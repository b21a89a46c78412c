"""Visual encoder: conv backbone with GIA insertions, token flattening, Transformer encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ivgn.autodiff import Tensor, concat, conv2d, dropout, softmax
from ivgn.autodiff.nn import BatchNorm, LayerNorm, Linear, Module, parameter
from ivgn.config import BackboneConfig, EncoderConfig, GiaConfig
from ivgn.errors import ConfigError
from ivgn.gia import GiaModule


def avg_pool(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping ``factor x factor`` mean pooling via reshape."""
    if factor == 1:
        return x
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ConfigError(f"{h}x{w} map not divisible by downsample factor {factor}")
    return x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


class ConvStage(Module):
    """conv(k x k, stride 1, same padding) -> BN -> ReLU -> stride-s downsample."""

    def __init__(self, rng: np.random.Generator, cin: int, cout: int, kernel: int, stride: int):
        fan_in = cin * kernel * kernel
        self.kernel = parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, kernel, kernel)))
        self.bn = BatchNorm(cout, axis=1)
        self.stride = stride
        self.padding = kernel // 2

    def __call__(self, x):
        x = conv2d(x, self.kernel, stride=1, padding=self.padding)
        return avg_pool(self.bn(x).relu(), self.stride)


class Backbone(Module):
    def __init__(self, rng: np.random.Generator, config: BackboneConfig, gia: Optional[GiaConfig] = None,
                 in_channels: int = 3):
        config.validate()
        self.config = config
        self.stages: List[ConvStage] = []
        cin = in_channels
        for width, kernel, stride in zip(config.widths, config.kernels, config.strides):
            self.stages.append(ConvStage(rng, cin, width, kernel, stride))
            cin = width
        self.gia = {}
        use_gia = gia is not None and gia.scheme not in ("", "none")
        if use_gia:
            sides = config.stage_sides()
            for idx in config.gia_stages:
                side = sides[idx - 1]
                self.gia[str(idx)] = GiaModule(
                    config.widths[idx - 1], side, side, gia.scheme, gia.delta, gia.fusion
                )

    @property
    def out_channels(self) -> int:
        return self.config.widths[-1]

    @property
    def out_side(self) -> int:
        return self.config.stage_sides()[-1]

    def __call__(self, images):
        return backbone_forward(images, self)


def backbone_forward(images, backbone: Backbone) -> Tensor:
    """``n x 3 x H0 x W0`` images -> ``n x C x H x W`` maps, GIA applied after flagged stages."""
    cfg = backbone.config
    if images.ndim != 4 or images.shape[2] != cfg.image_side or images.shape[3] != cfg.image_side:
        raise ConfigError(
            f"backbone expects N x C x {cfg.image_side} x {cfg.image_side} images, got {images.shape}"
        )
    x = images
    for i, stage in enumerate(backbone.stages, start=1):
        x = stage(x)
        gia = backbone.gia.get(str(i))
        if gia is not None:
            x = gia(x)
    return x


@dataclass
class VisualTokens:
    tokens: Tensor  # B x S x C'
    views: int
    height: int
    width: int

    @property
    def count(self) -> int:
        return self.tokens.shape[-2]

    def positions(self) -> np.ndarray:
        """(image index, row, col) per token: image-major, then row-major."""
        img, row, col = np.meshgrid(
            np.arange(self.views), np.arange(self.height), np.arange(self.width), indexing="ij"
        )
        return np.stack([img.ravel(), row.ravel(), col.ravel()], axis=1)


def flatten_maps(maps: Tensor, views: int) -> Tensor:
    """``(B*views) x C x H x W`` -> ``B x (views*H*W) x C``, image-major then row-major."""
    nb, c, h, w = maps.shape
    if nb % views:
        raise ConfigError(f"{nb} feature maps cannot be grouped into studies of {views} views")
    return maps.permute(0, 2, 3, 1).reshape(nb // views, views * h * w, c)


def flatten_project(maps, proj: Linear, views: Optional[int] = None) -> VisualTokens:
    """Per-image maps -> projected visual tokens.

    ``maps`` is either a batched ``(B*views) x C x H x W`` tensor or a list of
    ``C x H x W`` maps belonging to one study.
    """
    if isinstance(maps, (list, tuple)):
        shapes = {tuple(m.shape) for m in maps}
        if len(shapes) != 1:
            raise ConfigError(f"heterogeneous feature-map shapes in one study: {sorted(shapes)}")
        views = len(maps)
        maps = concat([m.reshape((1,) + tuple(m.shape)) for m in maps], axis=0)
    views = views or 1
    _, _, h, w = maps.shape
    return VisualTokens(proj(flatten_maps(maps, views)), views, h, w)


class MultiHeadSelfAttention(Module):
    def __init__(self, rng, dim: int, heads: int):
        if dim % heads:
            raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.o = Linear(rng, dim, dim)
        self.heads = heads
        self.last_weights: Optional[np.ndarray] = None

    def __call__(self, x):
        b, s, d = x.shape
        hd = d // self.heads

        def split(t):
            return t.reshape(b, s, self.heads, hd).permute(0, 2, 1, 3)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = (q @ k.permute(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        weights = softmax(scores, axis=-1)
        self.last_weights = weights.data
        out = (weights @ v).permute(0, 2, 1, 3).reshape(b, s, d)
        return self.o(out)


class EncoderLayer(Module):
    """Pre-norm layer: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, rng, config: EncoderConfig, dropout_rng: np.random.Generator):
        self.ln1 = LayerNorm(config.dim)
        self.attn = MultiHeadSelfAttention(rng, config.dim, config.heads)
        self.ln2 = LayerNorm(config.dim)
        self.ff1 = Linear(rng, config.dim, config.ff_dim)
        self.ff2 = Linear(rng, config.ff_dim, config.dim)
        self.rate = config.dropout
        self.dropout_rng = dropout_rng

    def _drop(self, x):
        return dropout(x, self.rate, self.dropout_rng, training=self.training)

    def __call__(self, x):
        x = x + self._drop(self.attn(self.ln1(x)))
        return x + self._drop(self.ff2(self.ff1(self.ln2(x)).relu()))


class TransformerEncoder(Module):
    def __init__(self, rng, config: EncoderConfig, dropout_rng: np.random.Generator):
        config.validate()
        self.layers = [EncoderLayer(rng, config, dropout_rng) for _ in range(config.layers)]
        self.final_ln = LayerNorm(config.dim) if config.layers else None

    def __call__(self, x):
        return transformer_encode(x, self)


def transformer_encode(tokens, encoder: TransformerEncoder) -> Tensor:
    x = tokens.tokens if isinstance(tokens, VisualTokens) else tokens
    if x.shape[-2] < 1:
        raise ConfigError("transformer encoder needs at least one token")
    for layer in encoder.layers:
        x = layer(x)
    return encoder.final_ln(x) if encoder.final_ln is not None else x


class VisualEncoder(Module):
    """images ``B x views x 3 x H0 x W0`` -> encoded tokens ``B x S x C'``."""

    def __init__(self, rng, backbone: BackboneConfig, gia: GiaConfig, encoder: EncoderConfig,
                 views: int, dropout_rng: np.random.Generator):
        self.backbone = Backbone(rng, backbone, gia)
        self.views = views
        self.proj = Linear(rng, self.backbone.out_channels, encoder.dim)
        side = self.backbone.out_side
        self.num_tokens = views * side * side
        self.pos = (
            parameter(rng.uniform(-0.1, 0.1, size=(self.num_tokens, encoder.dim)))
            if encoder.pos_embed else None
        )
        self.transformer = TransformerEncoder(rng, encoder, dropout_rng)

    def tokens(self, images) -> VisualTokens:
        b, v = images.shape[:2]
        if v != self.views:
            raise ConfigError(f"encoder built for {self.views} views per study, got {v}")
        flat = images.reshape((b * v,) + tuple(images.shape[2:]))
        toks = flatten_project(self.backbone(flat), self.proj, self.views)
        if self.pos is not None:
            toks.tokens = toks.tokens + self.pos
        return toks

    def __call__(self, images) -> Tensor:
        return transformer_encode(self.tokens(images), self.transformer)


def token_count(views: int, height: int, width: int) -> int:
    return views * height * width


__all__: Sequence[str] = [
    "Backbone", "ConvStage", "TransformerEncoder", "VisualEncoder", "VisualTokens",
    "avg_pool", "backbone_forward", "flatten_maps", "flatten_project", "token_count",
    "transformer_encode",
]
