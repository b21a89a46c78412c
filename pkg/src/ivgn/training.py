"""Adam with per-group learning rates, step decay, and the epoch loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ivgn.autodiff import get_default_dtype, no_grad, set_default_dtype
from ivgn.config import RunConfig, TrainConfig
from ivgn.data import ImageCache, Study, Vocabulary, batch_iter, build_vocab, split_studies
from ivgn.errors import ConfigError, DataError, NumericError
from ivgn.generation import generate_report
from ivgn.metrics import MetricReport, evaluate_corpus
from ivgn.model import IVGN, save_model


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class ParamGroup:
    name: str
    params: List[tuple]  # (name, Tensor)
    lr: float
    weight_decay: float
    states: Dict[str, AdamState] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return sum(p.size for _, p in self.params)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """In-place bias-corrected Adam update with classic L2 (``grad + wd * param``)."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    g = grad + weight_decay * param if weight_decay else grad
    state.t += 1
    state.m *= b1
    state.m += (1 - b1) * g
    state.v *= b2
    state.v += (1 - b2) * g * g
    m_hat = state.m / (1 - b1**state.t)
    v_hat = state.v / (1 - b2**state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_schedule(epoch: int, config: TrainConfig) -> Dict[str, float]:
    """Initial per-group rates scaled by ``decay_factor ** floor(epoch / decay_period)``."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    scale = config.decay_factor ** (epoch // config.decay_period)
    return {
        "backbone": config.lr_backbone * scale,
        "gia": config.lr_gia * scale,
        "rest": config.lr_rest * scale,
    }


def make_groups(model: IVGN, config: TrainConfig) -> Dict[str, ParamGroup]:
    lrs = lr_schedule(0, config)
    return {
        name: ParamGroup(name, params, lrs[name], config.weight_decay)
        for name, params in model.param_groups().items()
    }


def clip_gradients(groups: Dict[str, ParamGroup], max_norm: float) -> float:
    grads = [p.grad for g in groups.values() for _, p in g.params if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def optimizer_step(groups: Dict[str, ParamGroup], config: TrainConfig) -> None:
    betas = (config.beta1, config.beta2)
    for group in groups.values():
        for name, p in group.params:
            if p.grad is None:
                continue
            state = group.states.get(name)
            if state is None:
                state = group.states[name] = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
            adam_step(p.data, p.grad, state, group.lr, betas, config.adam_eps, group.weight_decay)


def _nonfinite_groups(groups: Dict[str, ParamGroup]) -> List[str]:
    bad = []
    for group in groups.values():
        for name, p in group.params:
            if not np.all(np.isfinite(p.data)) or (p.grad is not None and not np.all(np.isfinite(p.grad))):
                bad.append(group.name)
                break
    return bad


# --- evaluation ----------------------------------------------------------
def dataset_loss(model: IVGN, studies: Sequence[Study], vocab: Vocabulary, batch_size: int,
                 cache: Optional[ImageCache] = None) -> float:
    """Token-weighted teacher-forced loss in eval mode."""
    was_training = model.training
    model.eval()
    total = count = 0.0
    with no_grad():
        for batch in batch_iter(studies, vocab, batch_size, model.config.backbone.image_side,
                                views=model.config.views, cache=cache):
            n = float((batch.tokens[:, 1:] != 0).sum())
            total += model.loss(batch.images, batch.tokens).item() * n
            count += n
    model.train(was_training)
    return total / count


def decode_studies(model: IVGN, studies: Sequence[Study], vocab: Vocabulary, beam_size: int,
                   max_len: int, alpha: float = 0.0, cache: Optional[ImageCache] = None) -> List[str]:
    was_training = model.training
    model.eval()
    cache = cache or ImageCache()
    out = []
    for s in studies:
        images = cache.study_images(s, model.config.views, model.config.backbone.image_side)
        out.append(vocab.to_text(generate_report(model, images, beam_size, max_len, alpha)))
    model.train(was_training)
    return out


def evaluate_model(model: IVGN, studies: Sequence[Study], vocab: Vocabulary, config: TrainConfig,
                   cache: Optional[ImageCache] = None) -> MetricReport:
    hyps = decode_studies(model, studies, vocab, config.beam_size, config.max_len,
                          config.length_norm_alpha, cache)
    return evaluate_corpus(hyps, [" ".join(vocab.decode(vocab.encode(s.report))) for s in studies])


# --- loop ----------------------------------------------------------------
@dataclass
class TrainResult:
    model: IVGN
    vocab: Vocabulary
    history: List[dict]
    best_epoch: int
    best_path: Optional[Path]


def train(config: RunConfig, studies: Sequence[Study], out_dir=None,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Train on the "train" split, select the best epoch by validation BLEU-4.

    Writes ``history.jsonl``, ``best.ckpt`` and ``last.ckpt`` into ``out_dir``
    when given.  Raises :class:`NumericError` on a non-finite loss or gradient.
    """
    tc = config.train
    train_set = split_studies(studies, "train")
    val_set = split_studies(studies, "val")
    if not train_set or not val_set:
        raise DataError(f"need non-empty train and val splits, got {len(train_set)} / {len(val_set)}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "history.jsonl").write_text("")

    previous_dtype = get_default_dtype()
    set_default_dtype(np.float64 if tc.dtype == "float64" else np.float32)
    try:
        vocab = build_vocab(train_set, config.data.min_freq)
        model = IVGN(config.model_config(len(vocab)), seed=tc.seed)
        groups = make_groups(model, tc)
        cache = ImageCache()
        history: List[dict] = []
        best_bleu, best_epoch, best_path = -1.0, -1, None
        side = config.backbone.image_side
        for epoch in range(tc.epochs):
            lrs = lr_schedule(epoch, tc)
            for name, group in groups.items():
                group.lr = lrs[name]
            model.train()
            losses = []
            for b_idx, batch in enumerate(batch_iter(train_set, vocab, tc.batch_size, side,
                                                     shuffle_seed=tc.seed * 100003 + epoch,
                                                     views=config.data.views, cache=cache)):
                model.zero_grad()
                loss = model.loss(batch.images, batch.tokens)
                value = loss.item()
                if math.isfinite(value):
                    loss.backward()
                bad = _nonfinite_groups(groups)
                if not math.isfinite(value) or bad:
                    raise NumericError(
                        f"non-finite training loss at epoch {epoch + 1}, batch {b_idx}",
                        epoch=epoch + 1, batch=b_idx, loss=value, groups=bad or None,
                    )
                if tc.clip_norm is not None:
                    clip_gradients(groups, tc.clip_norm)
                optimizer_step(groups, tc)
                losses.append(value)
            record = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)), "lrs": lrs}
            if (epoch + 1) % tc.val_every == 0 or epoch + 1 == tc.epochs:
                record["val_loss"] = dataset_loss(model, val_set, vocab, tc.batch_size, cache)
                report = evaluate_model(model, val_set, vocab, tc, cache)
                record["val"] = report.to_dict()
                if report.bleu4 > best_bleu:
                    best_bleu, best_epoch = report.bleu4, epoch + 1
                    if out is not None:
                        best_path = out / "best.ckpt"
                        save_model(best_path, model, vocab, {"epoch": epoch + 1,
                                                             "run_config": config.to_flat()})
            history.append(record)
            if out is not None:
                with open(out / "history.jsonl", "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
            if log is not None:
                val = record.get("val", {})
                log(f"epoch {epoch + 1:3d} loss {record['train_loss']:.4f}"
                    + (f" val_loss {record['val_loss']:.4f} val_bleu4 {val['bleu4']:.4f}" if val else ""))
        if out is not None:
            save_model(out / "last.ckpt", model, vocab, {"epoch": tc.epochs,
                                                         "run_config": config.to_flat()})
        return TrainResult(model, vocab, history, best_epoch, best_path)
    finally:
        set_default_dtype(previous_dtype)


def read_history(path) -> List[dict]:
    return [json.loads(line) for line in Path(path).read_text("utf-8").splitlines() if line.strip()]


__all__ = [
    "AdamState", "ParamGroup", "TrainResult", "adam_step", "clip_gradients", "dataset_loss",
    "decode_studies", "evaluate_model", "lr_schedule", "make_groups", "optimizer_step",
    "read_history", "train",
]
