"""BLEU with clipped n-gram precision and a brevity penalty."""

from __future__ import annotations

import math
from collections import Counter
from typing import List, Sequence, Tuple

from ivgn.errors import ConfigError

Tokens = Sequence[str]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_counts(candidate: Tokens, references: Sequence[Tokens], n: int) -> Tuple[int, int]:
    """(clipped matches, total candidate n-grams) for one order."""
    cand = ngrams(candidate, n)
    best = Counter()
    for ref in references:
        for g, c in ngrams(ref, n).items():
            best[g] = max(best[g], c)
    return sum(min(c, best[g]) for g, c in cand.items()), sum(cand.values())


def closest_ref_length(candidate: Tokens, references: Sequence[Tokens]) -> int:
    """Reference length closest to the candidate's; ties pick the shorter."""
    c = len(candidate)
    return min((abs(len(r) - c), len(r)) for r in references)[1]


def _check(n: int) -> None:
    if not 1 <= n <= 4:
        raise ConfigError(f"BLEU order must be in 1..4, got {n}")


def _combine(matches: List[int], totals: List[int], c: int, r: int, smooth: bool) -> float:
    if c == 0:
        return 0.0
    logs = 0.0
    for k, (m, t) in enumerate(zip(matches, totals)):
        if smooth and k > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        logs += math.log(m / t)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(logs / len(matches))


def corpus_bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]], n: int,
                smooth: bool = False) -> float:
    """Corpus BLEU-n: counts and lengths are pooled over all pairs before combining."""
    _check(n)
    if len(candidates) != len(references):
        raise ConfigError("candidates and references differ in length")
    matches, totals = [0] * n, [0] * n
    c = r = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ConfigError("each candidate needs at least one reference")
        c += len(cand)
        r += closest_ref_length(cand, refs)
        for k in range(n):
            m, t = clipped_counts(cand, refs, k + 1)
            matches[k] += m
            totals[k] += t
    return _combine(matches, totals, c, r, smooth)


def bleu_n(candidate: Tokens, references: Sequence[Tokens], n: int, smooth: bool = False) -> float:
    """Sentence BLEU-n; an empty candidate scores 0."""
    return corpus_bleu([candidate], [references], n, smooth)


def sentence_bleu_mean(candidates, references, n: int, smooth: bool = False) -> float:
    if not candidates:
        return 0.0
    return sum(bleu_n(c, r, n, smooth) for c, r in zip(candidates, references)) / len(candidates)
