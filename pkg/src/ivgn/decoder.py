"""Visual Knowledge-guided Decoder.

Per step, with previous hidden state ``h``:

    score_i = w_a . tanh(W_y Y_i + W_h h) + b_a         A = softmax(score)
    C_i     = A_i * Y_i                                  pooled = sum_i C_i
    g_c     = sigmoid(F_g(h)) * pooled
    logits  = L_o(E r_prev + L_h h + L_c g_c)
    (h, c)  <- LSTM([E r_prev ; g_c], (h, c))

The logits read the *previous* hidden state, as in the deep-output formula;
the LSTM update feeds the next step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ivgn.autodiff import Tensor, concat, embedding_lookup, softmax, stack
from ivgn.autodiff.nn import Embedding, Linear, Module, parameter, xavier
from ivgn.autodiff.tensor import sigmoid
from ivgn.config import DecoderConfig
from ivgn.errors import ConfigError


@dataclass
class DecoderState:
    h: Tensor  # B x hidden
    c: Tensor  # B x hidden
    t: int = 0

    def select(self, rows) -> "DecoderState":
        rows = np.asarray(rows)
        return DecoderState(Tensor(self.h.data[rows]), Tensor(self.c.data[rows]), self.t)


class VisualAttention(Module):
    def __init__(self, rng, dim: int, hidden: int, attn: int):
        self.proj_y = Linear(rng, dim, attn, bias=False)
        self.proj_h = Linear(rng, hidden, attn)
        self.score = Linear(rng, attn, 1)


class Vkgd(Module):
    def __init__(self, rng: np.random.Generator, config: DecoderConfig, dim: int, vocab_size: int):
        config.validate()
        self.config = config
        self.dim = dim
        self.vocab_size = vocab_size
        h, e = config.hidden, config.embed
        self.attention = VisualAttention(rng, dim, h, config.attn)
        self.gate = Linear(rng, h, dim)  # F_g
        self.embed = Embedding(rng, vocab_size, e)  # E, shared by LSTM input and output layer
        self.lstm_x = xavier(rng, e + dim, 4 * h)
        self.lstm_h = xavier(rng, h, 4 * h)
        self.lstm_b = parameter(np.zeros(4 * h))
        self.out_h = Linear(rng, h, e, bias=False)  # L_h
        self.out_c = Linear(rng, dim, e, bias=False)  # L_c
        self.out = Linear(rng, e, vocab_size)  # L_o
        if config.init_state == "visual":
            self.init_h = Linear(rng, dim, h)
            self.init_c = Linear(rng, dim, h)
        # forced gate pre-activation (e.g. -inf closes the visual path); None = learned
        self.force_gate_logit: Optional[float] = None

    # --- pieces ----------------------------------------------------------
    def project_tokens(self, y: Tensor) -> Tensor:
        return self.attention.proj_y(y)

    def initial_state(self, y: Tensor) -> DecoderState:
        b = y.shape[0]
        hsz = self.config.hidden
        if self.config.init_state == "visual":
            pooled = y.mean(axis=1)
            return DecoderState(self.init_h(pooled), self.init_c(pooled))
        zeros = np.zeros((b, hsz), dtype=y.data.dtype)
        return DecoderState(Tensor(zeros), Tensor(zeros.copy()))


def visual_attention(y: Tensor, h_prev: Tensor, dec: Vkgd, y_proj: Optional[Tensor] = None
                     ) -> Tuple[Tensor, Tensor]:
    """Attention weights ``A`` (B x S) and per-position context ``C = A_i * Y_i`` (B x S x C')."""
    b, s, d = y.shape
    if s < 1:
        raise ConfigError("visual attention needs at least one token")
    att = dec.attention
    if y_proj is None:
        y_proj = att.proj_y(y)
    hp = att.proj_h(h_prev).reshape(b, 1, -1)
    scores = att.score((y_proj + hp).tanh()).reshape(b, s)
    weights = softmax(scores, axis=-1)
    return weights, y * weights.reshape(b, s, 1)


def pool_context(context: Tensor, mode: str = "sum") -> Tensor:
    pooled = context.sum(axis=1)
    return pooled / float(context.shape[1]) if mode == "mean" else pooled


def guided_context(context: Tensor, h_prev: Tensor, dec: Vkgd) -> Tensor:
    """``sigmoid(F_g(h)) * pool(C)``; a forced gate logit overrides ``F_g(h)``."""
    pooled = pool_context(context, dec.config.pool)
    if dec.force_gate_logit is not None:
        gate_pre = Tensor(np.full(pooled.shape, dec.force_gate_logit, dtype=pooled.data.dtype))
    else:
        gate_pre = dec.gate(h_prev)
    return sigmoid(gate_pre) * pooled


def lstm_cell(x: Tensor, state: DecoderState, dec: Vkgd) -> DecoderState:
    hsz = dec.config.hidden
    z = x @ dec.lstm_x + state.h @ dec.lstm_h + dec.lstm_b
    i = z[:, :hsz].sigmoid()
    f = z[:, hsz : 2 * hsz].sigmoid()
    g = z[:, 2 * hsz : 3 * hsz].tanh()
    o = z[:, 3 * hsz :].sigmoid()
    c = f * state.c + i * g
    return DecoderState(o * c.tanh(), c, state.t + 1)


def decoder_features(prev_ids, state: DecoderState, y: Tensor, dec: Vkgd,
                     y_proj: Optional[Tensor] = None):
    """One step up to the pre-``L_o`` vector; returns (features, new state, attention)."""
    prev_ids = np.asarray(prev_ids)
    emb = embedding_lookup(dec.embed.weight, prev_ids)
    weights, context = visual_attention(y, state.h, dec, y_proj)
    g_c = guided_context(context, state.h, dec)
    feats = emb + dec.out_h(state.h) + dec.out_c(g_c)
    new_state = lstm_cell(concat([emb, g_c], axis=1), state, dec)
    return feats, new_state, weights


def decoder_step(prev_ids, state: DecoderState, y: Tensor, dec: Vkgd,
                 y_proj: Optional[Tensor] = None) -> Tuple[Tensor, DecoderState]:
    """Next-token logits (B x vocab) and the updated state."""
    feats, new_state, _ = decoder_features(prev_ids, state, y, dec, y_proj)
    return dec.out(feats), new_state


def teacher_forced_logits(y: Tensor, tokens: np.ndarray, dec: Vkgd) -> Tensor:
    """Logits for every target position of BOS-framed ``tokens`` (B x T) -> B x (T-1) x V."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] < 2:
        raise ConfigError(f"token matrix must be B x T with T >= 2, got {tokens.shape}")
    state = dec.initial_state(y)
    y_proj = dec.project_tokens(y)
    feats = []
    for t in range(tokens.shape[1] - 1):
        f, state, _ = decoder_features(tokens[:, t], state, y, dec, y_proj)
        feats.append(f)
    return dec.out(stack(feats, axis=1))
