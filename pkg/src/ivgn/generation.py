"""Greedy and beam-search decoding over any step model.

A step model exposes ``vocab_size``, ``bos_id``, ``eos_id``, ``banned_ids``
(never emitted), ``start() -> state`` for a single hypothesis,
``step(prev_ids, state) -> (log_probs k x V, new_state)`` and
``select(state, rows) -> state``.

Candidates are totally ordered by (score desc, token id asc, parent creation
index asc), which makes every decode bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, List, Tuple

import numpy as np

from ivgn.errors import ConfigError


@dataclass
class BeamHypothesis:
    tokens: Tuple[int, ...]
    logprob: float
    finished: bool
    created: int
    row: int = -1  # row of this hypothesis in the batched decoder state

    def final_score(self, alpha: float) -> float:
        if alpha == 0.0:
            return self.logprob
        return self.logprob / max(len(self.tokens), 1) ** alpha


def _masked(logp: np.ndarray, banned) -> np.ndarray:
    logp = np.array(logp, dtype=np.float64, copy=True)
    if banned:
        logp[:, list(banned)] = -np.inf
    return logp


def beam_search_hypotheses(model: Any, beam_size: int, max_len: int,
                           length_norm_alpha: float = 0.0) -> List[BeamHypothesis]:
    """Final beam, best first by length-normalized score."""
    if beam_size < 1:
        raise ConfigError(f"beam_size must be >= 1, got {beam_size}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    eos = model.eos_id
    beams = [BeamHypothesis((), 0.0, False, 0, 0)]
    state = model.start()
    created = 1
    for _ in range(max_len):
        live = [b for b in beams if not b.finished]
        if not live:
            break
        prev = np.array([b.tokens[-1] if b.tokens else model.bos_id for b in live], dtype=np.int64)
        live_state = model.select(state, [b.row for b in live])
        logp, new_state = model.step(prev, live_state)
        logp = _masked(logp, model.banned_ids)

        scores = (np.array([b.logprob for b in live])[:, None] + logp).ravel()
        vocab = logp.shape[1]
        parent = np.repeat(np.arange(len(live)), vocab)
        token = np.tile(np.arange(vocab), len(live))
        ok = np.isfinite(scores)
        cand_score = list(scores[ok])
        cand_token = list(token[ok])
        cand_order = [live[p].created for p in parent[ok]]
        cand_ref = [("new", int(p), int(t)) for p, t in zip(parent[ok], token[ok])]
        for b in beams:
            if b.finished:
                cand_score.append(b.logprob)
                cand_token.append(b.tokens[-1])
                cand_order.append(b.created)
                cand_ref.append(("old", b))
        keys = np.lexsort((np.array(cand_order), np.array(cand_token), -np.array(cand_score)))
        keep = keys[:beam_size]

        next_beams, rows = [], []
        for i in keep:
            ref = cand_ref[i]
            if ref[0] == "old":
                next_beams.append(ref[1])
                continue
            _, p, t = ref
            hyp = BeamHypothesis(live[p].tokens + (t,), float(cand_score[i]), t == eos, created,
                                 len(rows))
            created += 1
            rows.append(p)
            next_beams.append(hyp)
        state = model.select(new_state, rows) if rows else state
        beams = next_beams
    order = sorted(range(len(beams)), key=lambda i: (-beams[i].final_score(length_norm_alpha), i))
    return [beams[i] for i in order]


def strip_special(tokens, model: Any) -> List[int]:
    drop = {model.eos_id, model.bos_id, *model.banned_ids}
    return [int(t) for t in tokens if t not in drop]


def beam_search(model: Any, beam_size: int = 3, max_len: int = 60,
                length_norm_alpha: float = 0.0) -> List[int]:
    """Best report token ids, without BOS/EOS/PAD."""
    best = beam_search_hypotheses(model, beam_size, max_len, length_norm_alpha)[0]
    return strip_special(best.tokens, model)


def greedy_decode(model: Any, max_len: int = 60) -> List[int]:
    """Argmax rollout; ties go to the lowest token id."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    state = model.start()
    prev = model.bos_id
    out = []
    for _ in range(max_len):
        logp, state = model.step(np.array([prev], dtype=np.int64), state)
        logp = _masked(logp, model.banned_ids)
        prev = int(np.argmax(logp[0]))
        out.append(prev)
        if prev == model.eos_id:
            break
    return strip_special(out, model)


def sequence_logprob(model: Any, tokens) -> float:
    """Total log-probability the model assigns to emitting ``tokens`` after BOS."""
    state = model.start()
    prev = model.bos_id
    total = 0.0
    for t in tokens:
        logp, state = model.step(np.array([prev], dtype=np.int64), state)
        total += float(_masked(logp, model.banned_ids)[0, t])
        prev = t
    return total


def generate_report(model, images, beam_size: int = 3, max_len: int = 60,
                    length_norm_alpha: float = 0.0) -> List[int]:
    """Decode one study with an :class:`ivgn.model.IVGN`."""
    session = model.session(images)
    if beam_size == 1:
        return greedy_decode(session, max_len)
    return beam_search(session, beam_size, max_len, length_norm_alpha)
