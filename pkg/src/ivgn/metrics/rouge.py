from __future__ import annotations

from typing import Sequence

BETA = 1.2


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str], beta: float = BETA) -> float:
    """LCS-based F-measure, weighted towards recall by ``beta``."""
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    b2 = beta * beta
    return (1 + b2) * p * r / (r + b2 * p)


def corpus_rouge_l(candidates, references, beta: float = BETA) -> float:
    """Mean sentence ROUGE-L over aligned pairs."""
    if not candidates:
        return 0.0
    return sum(rouge_l(c, r, beta) for c, r in zip(candidates, references)) / len(candidates)
