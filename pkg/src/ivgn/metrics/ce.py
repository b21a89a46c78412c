"""Rule-based clinical-efficacy labeling and category-averaged P/R/F1."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from ivgn.errors import DataError, UsageError
from ivgn.metrics.text import tokenize

POSITIVE, NEGATIVE, UNMENTIONED = "positive", "negative", "unmentioned"
NEGATION_WINDOW = 3


@dataclass(frozen=True)
class CeRule:
    category: str
    keywords: Tuple[Tuple[str, ...], ...]
    negators: Tuple[Tuple[str, ...], ...]


def parse_rules(text: str) -> List[CeRule]:
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) == 2:
            parts.append("")
        if len(parts) != 3 or not parts[0].strip() or not parts[1].strip():
            raise DataError(f"rule line {lineno}: expected category<TAB>keywords<TAB>negators")
        split = lambda s: tuple(tuple(tokenize(x)) for x in s.split(",") if tokenize(x))
        rules.append(CeRule(parts[0].strip(), split(parts[1]), split(parts[2])))
    if len({r.category for r in rules}) != len(rules):
        raise DataError("duplicate category in rule table")
    return rules


def load_rules(path=None) -> List[CeRule]:
    if path is None:
        text = resources.files("ivgn.metrics").joinpath("ce_rules.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_rules(text)


def _occurrences(tokens: List[str], phrase: Tuple[str, ...]) -> List[int]:
    n = len(phrase)
    return [i for i in range(len(tokens) - n + 1) if tuple(tokens[i : i + n]) == phrase]


def _negated(tokens: List[str], start: int, negators) -> bool:
    window = tokens[max(0, start - NEGATION_WINDOW) : start]
    return any(_occurrences(window, neg) for neg in negators)


def ce_label(text: str, rules: Sequence[CeRule] = None) -> Dict[str, str]:
    """Per-category status; one un-negated mention makes a category positive."""
    rules = load_rules() if rules is None else rules
    tokens = tokenize(text)
    out = {}
    for rule in rules:
        status = UNMENTIONED
        for kw in rule.keywords:
            for start in _occurrences(tokens, kw):
                if _negated(tokens, start, rule.negators):
                    status = NEGATIVE if status == UNMENTIONED else status
                else:
                    status = POSITIVE
        out[rule.category] = status
    return out


def ce_scores(gt: Sequence[Dict[str, str]], gen: Sequence[Dict[str, str]]) -> Tuple[float, float, float]:
    """Mean over categories of positive-vs-rest precision, recall and F1 across the report set."""
    if len(gt) != len(gen):
        raise UsageError(f"{len(gt)} reference labelings vs {len(gen)} generated")
    if not gt:
        return 0.0, 0.0, 0.0
    cats = list(gt[0])
    for a, b in zip(gt, gen):
        if list(a) != cats or list(b) != cats:
            raise UsageError("labelings disagree on category order")
    ps, rs, fs = [], [], []
    for c in cats:
        tp = sum(a[c] == POSITIVE and b[c] == POSITIVE for a, b in zip(gt, gen))
        fp = sum(a[c] != POSITIVE and b[c] == POSITIVE for a, b in zip(gt, gen))
        fn = sum(a[c] == POSITIVE and b[c] != POSITIVE for a, b in zip(gt, gen))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(2 * p * r / (p + r) if p + r else 0.0)
    n = len(cats)
    return sum(ps) / n, sum(rs) / n, sum(fs) / n
