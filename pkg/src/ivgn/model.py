"""The full image-to-report network and its teacher-forced objective."""

from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from ivgn.autodiff import Tensor, cross_entropy, log_softmax, no_grad
from ivgn.autodiff.checkpoint import load_checkpoint, save_checkpoint
from ivgn.autodiff.nn import Module
from ivgn.config import ModelConfig, model_config_from_dict, model_config_to_dict
from ivgn.data import BOS, EOS, PAD, Vocabulary
from ivgn.decoder import DecoderState, Vkgd, decoder_step, teacher_forced_logits
from ivgn.encoder import VisualEncoder
from ivgn.errors import CheckpointError, DataError

GROUPS = ("backbone", "gia", "rest")


class IVGN(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng([seed, 1])
        self.encoder = VisualEncoder(
            rng, config.backbone, config.gia, config.encoder, config.views, self.dropout_rng
        )
        self.decoder = Vkgd(rng, config.decoder, config.encoder.dim, config.vocab_size)

    def encode(self, images) -> Tensor:
        images = images if isinstance(images, Tensor) else Tensor(images)
        return self.encoder(images)

    def logits(self, images, tokens) -> Tensor:
        return teacher_forced_logits(self.encode(images), tokens, self.decoder)

    def loss(self, images, tokens, mask=None) -> Tensor:
        return teacher_forced_loss(images, tokens, self, mask)

    def param_groups(self) -> Dict[str, List[Tuple[str, Tensor]]]:
        groups = {g: [] for g in GROUPS}
        for name, p in self.named_parameters():
            groups[param_group_of(name)].append((name, p))
        return groups

    def session(self, images) -> "DecodingSession":
        return DecodingSession(self, images)


def param_group_of(name: str) -> str:
    if name.startswith("encoder.backbone.gia."):
        return "gia"
    if name.startswith("encoder.backbone."):
        return "backbone"
    return "rest"


def teacher_forced_loss(images, tokens, model: IVGN, mask=None) -> Tensor:
    """Mean per-token negative log-likelihood of ``tokens[:, 1:]`` given ``tokens[:, :-1]``.

    ``tokens`` is a BOS...EOS framed, PAD-padded ``B x T`` matrix; PAD targets are masked.
    """
    tokens = np.asarray(tokens)
    lengths = (tokens != PAD).sum(axis=1)
    if tokens.ndim != 2 or (lengths < 3).any() or (tokens[:, 0] != BOS).any():
        raise DataError("every report must be BOS-framed with at least one real token")
    targets = tokens[:, 1:]
    if mask is None:
        mask = targets != PAD
    else:
        mask = np.asarray(mask)[:, 1:]
    return cross_entropy(model.logits(images, tokens), targets, mask)


class DecodingSession:
    """Step interface used by beam search: one encoded study, k hypotheses per step."""

    bos_id = BOS
    eos_id = EOS
    banned_ids = (PAD, BOS)

    def __init__(self, model: IVGN, images):
        self.model = model
        images = np.asarray(images.data if isinstance(images, Tensor) else images)
        if images.ndim == 4:
            images = images[None]
        with no_grad():
            self.y = model.encode(images)
            self.y_proj = model.decoder.project_tokens(self.y)
        self.vocab_size = model.config.vocab_size

    def start(self) -> DecoderState:
        with no_grad():
            return self.model.decoder.initial_state(self.y)

    def step(self, prev_ids, state: DecoderState):
        k = len(prev_ids)
        y = Tensor(np.repeat(self.y.data, k, axis=0)) if self.y.shape[0] != k else self.y
        yp = Tensor(np.repeat(self.y_proj.data, k, axis=0)) if self.y_proj.shape[0] != k else self.y_proj
        with no_grad():
            logits, new_state = decoder_step(np.asarray(prev_ids), state, y, self.model.decoder, yp)
            logp = log_softmax(logits, axis=-1).data
        return logp, new_state

    @staticmethod
    def select(state: DecoderState, rows) -> DecoderState:
        return state.select(rows)


# --- persistence ---------------------------------------------------------
def save_model(path, model: IVGN, vocab: Vocabulary, extra: dict = None) -> None:
    meta = {
        "model_config": model_config_to_dict(model.config),
        "vocab": vocab.to_list(),
        "min_freq": vocab.min_freq,
        "buffers": [name for name, _ in model.named_buffers()],
    }
    if extra:
        meta.update(extra)
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> Tuple[IVGN, Vocabulary, dict]:
    arrays, meta = load_checkpoint(path)
    if "model_config" not in meta or "vocab" not in meta:
        raise CheckpointError(f"{path}: checkpoint lacks model config or vocabulary")
    config = model_config_from_dict(meta["model_config"])
    model = IVGN(config)
    try:
        model.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    model.eval()
    return model, Vocabulary.from_list(meta["vocab"], meta.get("min_freq", 1)), meta
