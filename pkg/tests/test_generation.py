import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivgn.data import BOS, EOS, PAD
from ivgn.errors import ConfigError
from ivgn.generation import (
    beam_search,
    beam_search_hypotheses,
    generate_report,
    greedy_decode,
    sequence_logprob,
)
from ivgn.model import IVGN

from conftest import tiny_model_config
from toy_models import TableModel, exhaustive_best, sequence_score

SEEDS = range(24)


def hand_model():
    """3-token vocab (EOS=0) where the greedy first step is a trap.

    Greedy picks token 1 (p=0.5) and then faces a flat distribution; the
    optimum starts with token 2 (p=0.4) and then ends almost surely.
    """
    log = np.log
    tables = {
        (): log([0.1, 0.5, 0.4]),
        (1,): log([1 / 3, 1 / 3, 1 / 3]),
        (2,): log([0.9, 0.05, 0.05]),
    }
    return TableModel(3, seed=0, tables=tables)


class TestGreedy:
    def test_forced_sequence(self):
        tables = {(): np.log([1e-9, 1 - 2e-9, 1e-9]), (1,): np.log([1e-9, 1e-9, 1 - 2e-9]),
                  (1, 2): np.log([1 - 2e-9, 1e-9, 1e-9])}
        assert greedy_decode(TableModel(3, 0, tables=tables), 5) == [1, 2]

    def test_tie_goes_to_lowest_id(self):
        tables = {(): np.log([0.2, 0.4, 0.4]), (1,): np.log([1.0, 0.0 + 1e-300, 1e-300])}
        assert greedy_decode(TableModel(3, 0, tables=tables), 3) == [1]

    def test_max_len_truncates(self):
        tables = {(): np.log([0.0 + 1e-300, 1.0, 1e-300])}
        m = TableModel(3, 0, tables=tables)
        m._cache[(1,)] = m._cache[()]
        m._cache[(1, 1)] = m._cache[()]
        assert greedy_decode(m, 3) == [1, 1, 1]

    def test_validates_max_len(self):
        with pytest.raises(ConfigError):
            greedy_decode(TableModel(3, 0), 0)


class TestBeamOracle:
    def test_greedy_is_suboptimal_on_hand_model(self):
        m = hand_model()
        assert greedy_decode(m, 3) == [1]  # 1 then EOS: 0.5 * 1/3
        assert beam_search(m, 3, 3) == [2]  # 2 then EOS: 0.4 * 0.9
        best_score, best_seq = exhaustive_best(m, 3)
        assert best_seq == (2, 0)
        assert beam_search_hypotheses(m, 3, 3)[0].logprob == best_score

    @pytest.mark.parametrize("seed", SEEDS)
    def test_full_width_matches_enumeration(self, seed):
        vocab, max_len = 3 + seed % 3, 2 + seed % 3
        m = TableModel(vocab, seed)
        best_score, best_seq = exhaustive_best(m, max_len)
        top = beam_search_hypotheses(m, vocab**max_len, max_len)[0]
        assert top.logprob == best_score
        assert top.tokens == best_seq

    @pytest.mark.parametrize("seed", SEEDS)
    def test_width_one_equals_greedy(self, seed):
        m = TableModel(5, seed)
        assert beam_search(m, 1, 4) == greedy_decode(m, 4)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_quality_monotone_in_width(self, seed):
        m = TableModel(4, seed)
        scores = [beam_search_hypotheses(m, k, 4)[0].logprob for k in (1, 2, 3, 4)]
        assert all(b >= a for a, b in zip(scores, scores[1:])), scores

    def test_rejects_bad_arguments(self):
        with pytest.raises(ConfigError):
            beam_search(TableModel(3, 0), 0, 3)
        with pytest.raises(ConfigError):
            beam_search(TableModel(3, 0), 2, 0)


class TestBeamProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 6))
    def test_termination_and_hygiene(self, seed, k, max_len):
        m = TableModel(4, seed)
        hyps = beam_search_hypotheses(m, k, max_len)
        for h in hyps:
            assert 1 <= len(h.tokens) <= max_len
            assert m.eos_id not in h.tokens[:-1]
            assert h.finished == (h.tokens[-1] == m.eos_id)
            assert h.logprob == sequence_score(m, h.tokens)
        assert m.eos_id not in beam_search(m, k, max_len)

    def test_final_beam_sorted_by_normalized_score(self):
        m = TableModel(4, 7)
        hyps = beam_search_hypotheses(m, 4, 5, length_norm_alpha=1.0)
        scores = [h.final_score(1.0) for h in hyps]
        assert scores == sorted(scores, reverse=True)

    def test_length_normalization_can_prefer_longer(self):
        # one short weak ending vs. a longer sequence of near-certain steps
        tables = {(): np.log([0.3, 0.7]), (1,): np.log([0.99, 0.01])}
        m = TableModel(2, 0, tables=tables)
        assert beam_search(m, 2, 2, length_norm_alpha=0.0) == [1]
        short = beam_search_hypotheses(m, 2, 2, 1.0)[0]
        assert short.tokens == (1, 0)  # log(0.7*0.99)/2 beats log(0.3)/1

    def test_deterministic(self):
        m = TableModel(5, 3)
        a = beam_search_hypotheses(m, 3, 4)
        b = beam_search_hypotheses(m, 3, 4)
        assert [(h.tokens, h.logprob) for h in a] == [(h.tokens, h.logprob) for h in b]


@pytest.fixture(scope="module")
def models():
    return [IVGN(tiny_model_config(vocab_size=7), seed=s).eval() for s in range(20)]


class TestOnModel:
    def test_beam_one_equals_greedy_on_random_models(self, models):
        images = np.random.default_rng(0).normal(size=(1, 3, 8, 8))
        for model in models:
            session = model.session(images)
            assert beam_search(session, 1, 6) == greedy_decode(session, 6)

    def test_reports_exclude_special_ids(self, models):
        images = np.random.default_rng(1).normal(size=(1, 3, 8, 8))
        for model in models[:5]:
            out = generate_report(model, images, beam_size=3, max_len=6)
            assert len(out) <= 6
            assert not {PAD, BOS, EOS} & set(out)

    def test_best_beam_logprob_matches_rescoring(self, models):
        images = np.random.default_rng(2).normal(size=(1, 3, 8, 8))
        session = models[0].session(images)
        top = beam_search_hypotheses(session, 3, 5)[0]
        assert sequence_logprob(session, top.tokens) == pytest.approx(top.logprob, abs=1e-12)
