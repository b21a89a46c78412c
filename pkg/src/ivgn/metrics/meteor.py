"""A simplified METEOR: exact and suffix-stem unigram matching only.

Scores from this module are not comparable with the official METEOR scorer,
which also uses synonym and paraphrase tables.
"""

from __future__ import annotations

from collections import Counter
from typing import List, Sequence, Tuple

SUFFIXES = ("ingly", "edly", "ing", "ies", "ed", "es", "ly", "s")
ALIGN_BEAM = 64


def stem(token: str) -> str:
    for suf in SUFFIXES:
        if token.endswith(suf) and len(token) - len(suf) >= 3:
            return token[: -len(suf)]
    return token


def align(candidate: Sequence[str], reference: Sequence[str]) -> Tuple[int, int]:
    """(matches, chunks) of the best unigram alignment.

    Matches are maximized first (a stem match counts like an exact one), then
    exact matches, then chunks are minimized. The search is a beam over
    candidate positions that only keeps states able to reach the maximum.
    """
    cs = [stem(t) for t in candidate]
    rs = [stem(t) for t in reference]
    ref_count = Counter(rs)
    best_total = sum(min(c, ref_count[s]) for s, c in Counter(cs).items())
    if best_total == 0:
        return 0, 0
    # remaining candidate stems after position i, for the reachability bound
    suffix = [Counter() for _ in range(len(cs) + 1)]
    for i in range(len(cs) - 1, -1, -1):
        suffix[i] = suffix[i + 1] + Counter([cs[i]])

    # state: (chunks, -exact, used refs, last ref index or -1 if previous unmatched, matches)
    states: List[tuple] = [(0, 0, frozenset(), -1, 0)]
    for i, s in enumerate(cs):
        nxt = {}
        for chunks, nexact, used, last, m in states:
            options = [(-1, chunks, nexact)]
            for j, rj in enumerate(rs):
                if rj == s and j not in used:
                    new_chunk = 0 if (last >= 0 and j == last + 1) else 1
                    exact = candidate[i] == reference[j]
                    options.append((j, chunks + new_chunk, nexact - exact))
            for j, ch, ne in options:
                u = used | {j} if j >= 0 else used
                mm = m + (j >= 0)
                left = Counter(r for k, r in enumerate(rs) if k not in u)
                bound = sum(min(c, left[t]) for t, c in suffix[i + 1].items())
                if mm + bound < best_total:
                    continue
                key = (u, j)
                cand = (ch, ne, u, j, mm)
                if key not in nxt or (ne, ch) < (nxt[key][1], nxt[key][0]):
                    nxt[key] = cand
        states = sorted(nxt.values(), key=lambda st: (st[1], st[0], sorted(st[2]), st[3]))[:ALIGN_BEAM]
    best = min(states, key=lambda st: (st[1], st[0]))
    return best[4], best[0]


def meteor_simplified(candidate: Sequence[str], reference: Sequence[str]) -> float:
    m, chunks = align(candidate, reference)
    if m == 0:
        return 0.0
    p = m / len(candidate)
    r = m / len(reference)
    fmean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1 - penalty)


def corpus_meteor_simplified(candidates, references) -> float:
    if not candidates:
        return 0.0
    return sum(meteor_simplified(c, r) for c, r in zip(candidates, references)) / len(candidates)
