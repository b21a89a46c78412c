"""Report-generation metrics: BLEU, ROUGE-L, simplified METEOR and rule-based CE."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from ivgn.metrics.bleu import bleu_n, corpus_bleu, sentence_bleu_mean
from ivgn.metrics.ce import ce_label, ce_scores, load_rules
from ivgn.metrics.meteor import corpus_meteor_simplified, meteor_simplified
from ivgn.metrics.rouge import corpus_rouge_l, rouge_l
from ivgn.metrics.text import tokenize


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    meteor_simplified: float
    ce_precision: Optional[float] = None
    ce_recall: Optional[float] = None
    ce_f1: Optional[float] = None

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v is not None and not 0.0 <= v <= 1.0 + 1e-12:
                raise ValueError(f"{k}={v} outside [0, 1]")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def evaluate_corpus(candidates: Sequence[str], references: Sequence[str], rules=None,
                    sentence_bleu: bool = False, with_ce: bool = True) -> MetricReport:
    """Score generated report strings against one reference string each.

    CE uses ``rules`` (the bundled table when None); ``with_ce=False`` skips it.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    cand = [tokenize(c) for c in candidates]
    refs = [tokenize(r) for r in references]
    if sentence_bleu:
        bleus = [sentence_bleu_mean(cand, [[r] for r in refs], n) for n in range(1, 5)]
    else:
        bleus = [corpus_bleu(cand, [[r] for r in refs], n) if cand else 0.0 for n in range(1, 5)]
    nlg = (*bleus, corpus_rouge_l(cand, refs), corpus_meteor_simplified(cand, refs))
    if not with_ce:
        return MetricReport(*nlg)
    rules = load_rules() if rules is None else rules
    p, r, f = ce_scores([ce_label(x, rules) for x in references],
                        [ce_label(x, rules) for x in candidates])
    return MetricReport(*nlg, p, r, f)


__all__ = [
    "MetricReport", "evaluate_corpus", "tokenize", "bleu_n", "corpus_bleu", "sentence_bleu_mean",
    "rouge_l", "corpus_rouge_l", "meteor_simplified", "corpus_meteor_simplified",
    "ce_label", "ce_scores", "load_rules",
]
