import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivgn.errors import ConfigError, DataError, UsageError
from ivgn.metrics import (
    MetricReport,
    bleu_n,
    ce_label,
    ce_scores,
    corpus_bleu,
    evaluate_corpus,
    load_rules,
    meteor_simplified,
    rouge_l,
    tokenize,
)
from ivgn.metrics.ce import NEGATIVE, POSITIVE, UNMENTIONED, parse_rules
from ivgn.metrics.meteor import align, stem
from ivgn.metrics.rouge import lcs_length

T = str.split
words = st.lists(st.sampled_from("a b c d e".split()), min_size=0, max_size=8)


# --- independent oracles ---------------------------------------------------------
def oracle_bleu(cand, ref, n):
    """Sentence BLEU-n counting n-grams with explicit loops."""
    if not cand:
        return 0.0
    logs = 0.0
    for k in range(1, n + 1):
        grams_c = [tuple(cand[i : i + k]) for i in range(len(cand) - k + 1)]
        grams_r = [tuple(ref[i : i + k]) for i in range(len(ref) - k + 1)]
        if not grams_c:
            return 0.0
        used = Counter()
        hit = 0
        for g in grams_c:
            if used[g] < grams_r.count(g):
                used[g] += 1
                hit += 1
        if hit == 0:
            return 0.0
        logs += math.log(hit / len(grams_c))
    bp = 1.0 if len(cand) > len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * math.exp(logs / n)


def oracle_lcs(a, b):
    """Longest common subsequence by subset enumeration (tiny inputs only)."""
    for size in range(min(len(a), len(b)), 0, -1):
        subs = {tuple(a[i] for i in idx) for idx in itertools.combinations(range(len(a)), size)}
        for idx in itertools.combinations(range(len(b)), size):
            if tuple(b[i] for i in idx) in subs:
                return size
    return 0


def oracle_alignment(cand, ref):
    """(matches, chunks) by enumerating every injective stem-compatible matching."""
    cs, rs = [stem(t) for t in cand], [stem(t) for t in ref]
    best = (0, 0, 0)  # (matches, exact, -chunks)
    options = [[None] + [j for j in range(len(ref)) if rs[j] == cs[i]] for i in range(len(cand))]
    for choice in itertools.product(*options):
        used = [j for j in choice if j is not None]
        if len(used) != len(set(used)):
            continue
        m = len(used)
        if m == 0:
            continue
        exact = sum(1 for i, j in enumerate(choice) if j is not None and cand[i] == ref[j])
        chunks, prev = 0, None
        for j in choice:
            if j is None:
                prev = None
                continue
            if prev is None or j != prev + 1:
                chunks += 1
            prev = j
        best = max(best, (m, exact, -chunks))
    return best[0], -best[2]


# --- BLEU ------------------------------------------------------------------------
class TestBleu:
    def test_clipping_hand_case(self):
        assert bleu_n(T("the the the the"), [T("the cat sat")], 1) == pytest.approx(0.25, abs=1e-12)

    def test_brevity_penalty_hand_case(self):
        # cand 2 tokens, ref 4 tokens: p1 = 1, p2 = 1, BP = exp(1 - 4/2)
        got = bleu_n(T("a b"), [T("a b c d")], 2)
        assert got == pytest.approx(math.exp(-1.0), abs=1e-12)

    def test_bleu2_hand_case(self):
        # cand "a b c a", ref "a b a c": p1 = 4/4, bigrams ab,bc,ca vs ab,ba,ac -> 1/3
        got = bleu_n(T("a b c a"), [T("a b a c")], 2)
        assert got == pytest.approx(math.sqrt(1.0 * 1 / 3), abs=1e-12)

    def test_identity_and_zero_cases(self):
        s = T("there is a small left pneumothorax")
        for n in range(1, 5):
            assert bleu_n(s, [s], n) == 1.0
        assert bleu_n(T("x y z"), [T("a b c")], 1) == 0.0
        assert bleu_n([], [T("a b")], 1) == 0.0

    def test_smoothing_flag(self):
        cand, ref = T("a b x y"), T("a b c d")
        assert bleu_n(cand, [ref], 4) == 0.0
        assert bleu_n(cand, [ref], 4, smooth=True) > 0.0

    def test_order_validation(self):
        with pytest.raises(ConfigError):
            bleu_n(T("a"), [T("a")], 5)

    def test_corpus_pools_counts(self):
        # corpus p1 = (1 + 2) / (2 + 2); lengths c = r = 4, so BP = 1
        got = corpus_bleu([T("a x"), T("b c")], [[T("a y")], [T("b c")]], 1)
        assert got == pytest.approx(0.75, abs=1e-12)

    def test_multiple_references_clip_to_max(self):
        got = bleu_n(T("a a"), [T("a b"), T("a a")], 1)
        assert got == 1.0

    @settings(max_examples=150, deadline=None)
    @given(words, words, st.integers(1, 4))
    def test_matches_loop_oracle(self, cand, ref, n):
        if not ref:
            ref = ["a"]
        assert bleu_n(cand, [ref], n) == pytest.approx(oracle_bleu(cand, ref, n), abs=1e-12)

    def test_orders_can_invert_in_general(self):
        # "a b a" vs "b a b": clipped p1 = 2/3 but p2 = 1, so BLEU-2 > BLEU-1
        cand, ref = T("a b a"), [T("b a b")]
        assert bleu_n(cand, ref, 2) > bleu_n(cand, ref, 1)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sampled_from("a b c d e".split()), min_size=1, max_size=10),
           st.lists(st.sampled_from("x y z".split()), max_size=5),
           st.lists(st.sampled_from("a b c u v".split()), max_size=5))
    def test_monotone_on_shared_prefix_pairs(self, prefix, cand_tail, ref_tail):
        # tokens after the shared prefix never occur in the reference, so p_n is non-increasing
        cand, ref = prefix + cand_tail, prefix + ref_tail
        scores = [bleu_n(cand, [ref], n) for n in range(1, 5)]
        assert all(a >= b for a, b in zip(scores, scores[1:])), scores


# --- ROUGE-L ---------------------------------------------------------------------
class TestRouge:
    def test_hand_case(self):
        p, r, b2 = 1.0, 0.75, 1.2**2
        assert rouge_l(T("a c d"), T("a b c d")) == pytest.approx((1 + b2) * p * r / (r + b2 * p), abs=1e-12)
        assert rouge_l(T("a c d"), T("a b c d")) == pytest.approx(0.835616, abs=1e-6)

    def test_identity_reversal_empty(self):
        assert rouge_l(T("a b c"), T("a b c")) == 1.0
        assert lcs_length(T("a b"), T("b a")) == 1
        assert rouge_l([], []) == 0.0
        assert rouge_l([], T("a")) == 0.0

    @settings(max_examples=120, deadline=None)
    @given(words, words)
    def test_lcs_matches_enumeration(self, a, b):
        assert lcs_length(a, b) == oracle_lcs(a, b)

    @settings(max_examples=80, deadline=None)
    @given(words, words)
    def test_swap_exchanges_precision_and_recall(self, a, b):
        lcs = oracle_lcs(a, b)
        if lcs == 0:
            assert rouge_l(a, b) == rouge_l(b, a) == 0.0
            return
        b2 = 1.2**2
        p, r = lcs / len(a), lcs / len(b)
        assert rouge_l(b, a) == pytest.approx((1 + b2) * r * p / (p + b2 * r), abs=1e-12)


# --- METEOR (simplified) ---------------------------------------------------------
class TestMeteor:
    def test_single_token(self):
        assert meteor_simplified(["a"], ["a"]) == 0.5

    @pytest.mark.parametrize("k", [2, 3, 5, 10])
    def test_identical_k_tokens(self, k):
        s = [f"w{i}" for i in range(k)]
        assert meteor_simplified(s, s) == pytest.approx(1 - 0.5 / k**3, abs=1e-12)

    def test_disjoint(self):
        assert meteor_simplified(T("a b"), T("c d")) == 0.0

    def test_formula_hand_case(self):
        # cand "a b x", ref "b a": 2 matches, 2 chunks, P = 2/3, R = 1
        p, r = 2 / 3, 1.0
        expect = 10 * p * r / (r + 9 * p) * (1 - 0.5 * (2 / 2) ** 3)
        assert meteor_simplified(T("a b x"), T("b a")) == pytest.approx(expect, abs=1e-12)

    def test_stem_stage(self):
        assert stem("effusions") == "effusion"
        m, chunks = align(T("small effusions"), T("small effusion"))
        assert (m, chunks) == (2, 1)

    def test_prefers_fewer_chunks(self):
        # "a" can align to either copy; the contiguous choice gives one chunk
        assert align(T("a b"), T("a x a b")) == (2, 1)

    @settings(max_examples=120, deadline=None)
    @given(st.lists(st.sampled_from("a b c walks walk".split()), max_size=6),
           st.lists(st.sampled_from("a b c walks walk".split()), min_size=1, max_size=6))
    def test_alignment_matches_enumeration(self, cand, ref):
        got = align(cand, ref)
        m, chunks = oracle_alignment(cand, ref)
        assert got[0] == m
        if m:
            assert got[1] == chunks


# --- CE --------------------------------------------------------------------------
class TestCeLabeler:
    def test_fourteen_categories(self):
        assert len(load_rules()) == 14
        assert len(ce_label("anything")) == 14

    def test_rule_examples(self):
        assert ce_label("no pleural effusion")["pleural_effusion"] == NEGATIVE
        assert ce_label("mild cardiomegaly")["cardiomegaly"] == POSITIVE
        labels = ce_label("lungs are clear")
        assert all(v == UNMENTIONED for k, v in labels.items() if k != "no_finding")

    def test_negation_window(self):
        assert ce_label("without evidence of pneumothorax")["pneumothorax"] == NEGATIVE
        assert ce_label("free of effusion")["pleural_effusion"] == NEGATIVE
        assert ce_label("no change in the large effusion")["pleural_effusion"] == POSITIVE

    def test_positive_mention_wins(self):
        assert ce_label("no effusion on the left . right effusion")["pleural_effusion"] == POSITIVE

    def test_custom_table(self):
        rules = parse_rules("cat\tfoo,bar baz\tnever\n")
        assert ce_label("bar baz", rules) == {"cat": POSITIVE}
        assert ce_label("never bar baz", rules) == {"cat": NEGATIVE}
        with pytest.raises(DataError):
            parse_rules("only-one-field\n")


class TestCeScores:
    def test_three_report_fixture(self):
        gt = [
            "there is a right pleural effusion . mild cardiomegaly .",
            "no pneumothorax . there is basilar atelectasis .",
            "the lungs are clear . no acute cardiopulmonary abnormality .",
        ]
        gen = [
            "there is a pleural effusion .",
            "small left pneumothorax . basilar atelectasis .",
            "mild cardiomegaly with small effusion .",
        ]
        # hand tally (positive vs rest):
        #   effusion      tp 1 fp 1 fn 0 -> P 1/2 R 1 F 2/3
        #   cardiomegaly  tp 0 fp 1 fn 1 -> 0 0 0
        #   pneumothorax  tp 0 fp 1 fn 0 -> 0 0 0
        #   atelectasis   tp 1 fp 0 fn 0 -> 1 1 1
        #   no_finding    tp 0 fp 0 fn 1 -> 0 0 0 ; the other 9 categories are 0
        p, r, f = ce_scores([ce_label(x) for x in gt], [ce_label(x) for x in gen])
        assert p == pytest.approx(1.5 / 14, abs=1e-9)
        assert r == pytest.approx(2.0 / 14, abs=1e-9)
        assert f == pytest.approx((2 / 3 + 1) / 14, abs=1e-9)

    def test_perfect_when_everything_positive(self):
        rules = load_rules()
        text = " . ".join(" ".join(r.keywords[0]) for r in rules)
        labels = ce_label(text, rules)
        assert set(labels.values()) == {POSITIVE}
        assert ce_scores([labels], [labels]) == (1.0, 1.0, 1.0)

    def test_no_predictions_zero_recall(self):
        gt = [ce_label("mild cardiomegaly")]
        assert ce_scores(gt, [ce_label("")])[1] == 0.0

    def test_misaligned(self):
        with pytest.raises(UsageError):
            ce_scores([ce_label("a")], [])

    def test_sentence_swap_changes_rouge_not_ce(self):
        a = "there is a small left pneumothorax . the heart is enlarged with mild cardiomegaly ."
        b = "the heart is enlarged with mild cardiomegaly . there is a small left pneumothorax ."
        assert rouge_l(tokenize(b), tokenize(a)) < 1.0
        assert ce_label(a) == ce_label(b)
        ref = [ce_label(a)]
        assert ce_scores(ref, [ce_label(a)]) == ce_scores(ref, [ce_label(b)])


class TestCorpus:
    def test_tokenize(self):
        assert tokenize("The heart, is ENLARGED.") == ["the", "heart", "is", "enlarged"]

    def test_identity_scores_one(self):
        reps = ["there is a small left pneumothorax .", "the lungs are clear ."]
        rep = evaluate_corpus(reps, reps)
        assert rep.bleu1 == rep.bleu4 == rep.rouge_l == 1.0

    def test_empty_candidate_is_defined(self):
        rep = evaluate_corpus(["", "the lungs are clear"], ["a b c d", "the lungs are clear"])
        assert 0.0 <= rep.bleu1 <= 1.0 and 0.0 < rep.rouge_l < 1.0

    def test_ce_can_be_omitted(self):
        rep = evaluate_corpus(["a"], ["a"], with_ce=False)
        assert rep.ce_f1 is None and "ce_f1" not in rep.to_dict()

    def test_report_range_check(self):
        with pytest.raises(ValueError):
            MetricReport(1.2, 0, 0, 0, 0, 0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(words, words), min_size=1, max_size=5))
    def test_all_values_in_unit_interval(self, pairs):
        cands = [" ".join(c) for c, _ in pairs]
        refs = [" ".join(r) or "a" for _, r in pairs]
        for v in evaluate_corpus(cands, refs).to_dict().values():
            assert 0.0 <= v <= 1.0
