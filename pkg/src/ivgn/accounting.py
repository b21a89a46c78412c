"""Analytic parameter and FLOP counts derived from a model config alone.

FLOPs count a multiply-add as two operations:

* conv: ``Cout * H * W * Cin * k * k * 2`` per image at stride 1
* linear: ``2 * in * out`` per row, plus ``out`` for the bias
* self-attention: ``2 * S * S * d`` for the scores and again for the weighted sum
* elementwise ops (BN, activations, SimAM, BNWA reweighting): a fixed small
  per-element constant listed in ``ELEMENTWISE``

Encoder FLOPs are per study; decoder FLOPs are per generated token.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

from ivgn.config import ModelConfig
from ivgn.gia import bnwa_param_count, parse_scheme

ELEMENTWISE = {"bn": 2, "relu": 1, "pool": 1, "bnwa": 6, "simam": 10, "ln": 8, "softmax": 3,
               "residual": 1}


@dataclass
class Accounting:
    params: Dict[str, int] = field(default_factory=dict)
    flops: Dict[str, int] = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    def add(self, key: str, params: int = 0, flops: int = 0) -> None:
        self.params[key] = self.params.get(key, 0) + params
        self.flops[key] = self.flops.get(key, 0) + flops


def linear_params(n_in: int, n_out: int, bias: bool = True) -> int:
    return n_in * n_out + (n_out if bias else 0)


def linear_flops(n_in: int, n_out: int, rows: int = 1, bias: bool = True) -> int:
    return rows * (2 * n_in * n_out + (n_out if bias else 0))


def gia_flops(channels: int, side: int, scheme: str) -> int:
    spec = parse_scheme(scheme)
    elems = channels * side * side
    per = {"d": ELEMENTWISE["bnwa"], "s": ELEMENTWISE["bnwa"], "p": ELEMENTWISE["simam"]}
    fuse = sum(len(stage) - 1 for stage in spec.stages if len(stage) > 1)
    return elems * (sum(per[k] for k in spec.kinds) + fuse + ELEMENTWISE["residual"])


def count_params_flops(config: ModelConfig) -> Accounting:
    """Per-module parameter counts and forward FLOPs (per study / per decoded token)."""
    config.validate()
    acc = Accounting()
    bb, enc, dec = config.backbone, config.encoder, config.decoder
    views = config.views
    sides = bb.stage_sides()
    side_in = bb.image_side
    cin = 3
    use_gia = config.gia.scheme not in ("", "none")
    for i, (w, k, s) in enumerate(zip(bb.widths, bb.kernels, bb.strides), start=1):
        elems = w * side_in * side_in
        acc.add("backbone", w * cin * k * k + 2 * w,
                views * (w * side_in * side_in * cin * k * k * 2
                         + elems * (ELEMENTWISE["bn"] + ELEMENTWISE["relu"] + ELEMENTWISE["pool"])))
        side_in = sides[i - 1]
        if use_gia and i in bb.gia_stages:
            spec = parse_scheme(config.gia.scheme)
            acc.add("gia", bnwa_param_count(w, side_in, side_in, spec),
                    views * gia_flops(w, side_in, config.gia.scheme))
        cin = w

    c, d = bb.widths[-1], enc.dim
    seq = views * sides[-1] * sides[-1]
    acc.add("projection", linear_params(c, d) + (seq * d if enc.pos_embed else 0),
            linear_flops(c, d, seq) + (seq * d if enc.pos_embed else 0))
    per_layer_params = 2 * 2 * d + 4 * linear_params(d, d) + linear_params(d, enc.ff_dim) \
        + linear_params(enc.ff_dim, d)
    per_layer_flops = (
        2 * ELEMENTWISE["ln"] * seq * d
        + 4 * linear_flops(d, d, seq)
        + 2 * 2 * seq * seq * d + ELEMENTWISE["softmax"] * enc.heads * seq * seq
        + linear_flops(d, enc.ff_dim, seq) + linear_flops(enc.ff_dim, d, seq)
        + seq * enc.ff_dim + 2 * seq * d
    )
    if enc.layers:
        acc.add("transformer", enc.layers * per_layer_params + 2 * d,
                enc.layers * per_layer_flops + ELEMENTWISE["ln"] * seq * d)
    else:
        acc.add("transformer")

    h, e, a, vsz = dec.hidden, dec.embed, dec.attn, config.vocab_size
    params = (
        linear_params(d, a, bias=False) + linear_params(h, a) + linear_params(a, 1)  # attention
        + linear_params(h, d)  # gate
        + vsz * e  # shared embedding
        + (e + d) * 4 * h + h * 4 * h + 4 * h  # LSTM
        + linear_params(h, e, bias=False) + linear_params(d, e, bias=False) + linear_params(e, vsz)
    )
    if dec.init_state == "visual":
        params += 2 * linear_params(d, h)
    flops = (
        linear_flops(h, a) + seq * a * 2 + linear_flops(a, 1, seq)  # additive scores (Y proj cached)
        + ELEMENTWISE["softmax"] * seq + 2 * seq * d  # weights and pooled context
        + linear_flops(h, d) + 2 * d  # gate
        + 2 * (e + d) * 4 * h + 2 * h * 4 * h + 10 * h  # LSTM
        + linear_flops(h, e, bias=False) + linear_flops(d, e, bias=False) + 2 * e
        + linear_flops(e, vsz)
    )
    acc.add("decoder", params, flops)
    acc.add("decoder_setup", 0, linear_flops(d, a, seq, bias=False))
    return acc


def checkpoint_param_count(arrays: Dict[str, "object"], buffer_names) -> int:
    """Sum of parameter sizes stored in a checkpoint, skipping buffers."""
    skip = set(buffer_names)
    return int(sum(v.size for k, v in arrays.items() if k not in skip))
