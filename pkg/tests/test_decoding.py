import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmtfusion.corpus import BOS, EOS
from nmtfusion.decoding import (
    EnsembleScorer,
    Hypothesis,
    beam_search,
    default_max_len,
    ensemble_step,
    greedy_decode,
    nbest_rows,
    translate,
)
from nmtfusion.fusion import FusedTranslator, FusionConfig, log_softmax
from nmtfusion.seq2seq import TranslationModel

from .oracles import enumerate_best


class TableScorer:
    """Scores depend on the full output prefix through a seeded hash table."""

    def __init__(self, vocab_size, seed, normalized=True, bias=None):
        self.vocab_size = vocab_size
        self.seed = seed
        self.normalized = normalized
        self.bias = bias
        self.calls = 0

    def table(self, prefix):
        rng = np.random.default_rng([self.seed, len(prefix), *prefix])
        s = rng.normal(size=self.vocab_size) * 2.0
        if self.bias is not None:
            s = s + self.bias
        return log_softmax(s) if self.normalized else s

    def start(self, sources):
        return [None for _ in sources]  # None: nothing consumed yet, bos comes first

    def step(self, state, tokens):
        self.calls += 1
        new = [() if p is None else p + (int(t),) for p, t in zip(state, tokens)]
        return np.stack([self.table(p) for p in new]), new

    def select(self, state, rows):
        return [state[int(r)] for r in rows]


def _instances(n=24):
    out = []
    for seed in range(n):
        V = 3 + seed % 3
        L = 2 + seed % 3
        out.append((TableScorer(V, seed), V, L))
    return out


@pytest.mark.parametrize("idx", range(24))
def test_beam_matches_enumeration(idx):
    scorer, V, L = _instances()[idx]
    best_score, best_seq = enumerate_best(scorer.table, V, EOS, L)
    hyps = beam_search(scorer, [4], beam=V**L, max_len=L)
    assert hyps[0].tokens == best_seq
    assert abs(hyps[0].score - best_score) <= 1e-9


@pytest.mark.parametrize("idx", range(24))
def test_growing_beam_never_lowers_top_score(idx):
    scorer, V, L = _instances()[idx]
    tops = [beam_search(scorer, [4], beam=k, max_len=L)[0].score for k in range(1, V**L + 1)]
    assert all(b >= a - 1e-12 for a, b in zip(tops, tops[1:]))


@pytest.mark.parametrize("idx", range(24))
def test_hypothesis_invariants(idx):
    scorer, V, L = _instances()[idx]
    hyps = beam_search(scorer, [4], beam=4, max_len=L)
    scores = [h.score for h in hyps]
    assert scores == sorted(scores, reverse=True)
    for h in hyps:
        assert h.score == sum(h.step_scores)
        assert h.finished == (h.tokens[-1] == EOS)
        assert h.finished or len(h.tokens) == L
        assert EOS not in h.tokens[:-1]


@pytest.mark.parametrize("idx", range(24))
def test_beam_one_equals_greedy(idx):
    scorer, V, L = _instances()[idx]
    b = beam_search(scorer, [4], beam=1, max_len=L)[0]
    g = greedy_decode(scorer, [[4]], max_len=L)[0]
    assert b.tokens == g.tokens and b.score == g.score


def test_greedy_batched_equals_single():
    scorer = TableScorer(5, 3)
    srcs = [[4], [4, 5], [4, 5, 6]]
    batch = greedy_decode(scorer, srcs, max_len=6)
    for s, h in zip(srcs, batch):
        assert greedy_decode(scorer, [s], max_len=6)[0] == h


def test_deterministic_and_errors():
    scorer = TableScorer(4, 11)
    assert beam_search(scorer, [4], 3, 4) == beam_search(scorer, [4], 3, 4)
    with pytest.raises(ValueError):
        beam_search(scorer, [], 3, 4)
    with pytest.raises(ValueError):
        beam_search(scorer, [4], 0, 4)
    with pytest.raises(ValueError):
        beam_search(scorer, [4], 2, 0)
    assert default_max_len(7) == 24


def test_banned_tokens_never_emitted():
    bias = np.array([5.0, 5.0, 0.0, 0.0, 0.0])  # pad and bos look attractive
    scorer = TableScorer(5, 2, bias=bias)
    scorer.banned_tokens = (0, 1)
    for h in beam_search(scorer, [4], beam=3, max_len=4) + greedy_decode(scorer, [[4]], max_len=4):
        assert not {0, 1} & set(h.tokens)


def test_output_tokens_strip_eos_and_nbest_rows():
    h = Hypothesis((5, 6, EOS), -1.5, (-1.0, -0.25, -0.25), True)
    assert h.output_tokens == (5, 6)
    rows = nbest_rows([[h]], lambda toks: " ".join(map(str, toks)))
    assert rows == ["0\t0\t-1.500000\t5 6"]


# ensembles ------------------------------------------------------------------------------


class FixedScorer:
    def __init__(self, probs):
        self.lp = np.log(np.asarray(probs, dtype=np.float64))
        self.vocab_size = len(probs)

    def start(self, sources):
        return len(sources)

    def step(self, state, tokens):
        return np.tile(self.lp, (len(tokens), 1)), state

    def select(self, state, rows):
        return len(rows)


def test_ensemble_hand_example():
    ens = EnsembleScorer([FixedScorer([0.8, 0.2]), FixedScorer([0.2, 0.8])])
    out, _ = ensemble_step(ens, ens.start([[4]]), np.array([BOS]))
    np.testing.assert_allclose(np.exp(out), [[0.5, 0.5]], atol=1e-12)


@given(st.integers(0, 500), st.integers(1, 4))
@settings(max_examples=30)
def test_ensemble_of_copies_equals_member(seed, k):
    member = TableScorer(5, seed)
    ens = EnsembleScorer([member] * k)
    tok = np.array([BOS, BOS])
    ref, _ = member.step(member.start([[4], [5]]), tok)
    out, _ = ens.step(ens.start([[4], [5]]), tok)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_ensemble_errors():
    with pytest.raises(ValueError):
        EnsembleScorer([])
    with pytest.raises(ValueError):
        EnsembleScorer([FixedScorer([0.5, 0.5]), FixedScorer([0.2, 0.3, 0.5])])
    ens = EnsembleScorer([FixedScorer([0.5, 0.5])])
    with pytest.raises(ValueError):
        ensemble_step(ens, [], np.array([BOS]))


def test_translate_with_real_model():
    tm = TranslationModel(9, 10, 4, 6, 1, rng=np.random.default_rng(0))
    scorer = FusedTranslator(tm, FusionConfig("baseline")).scorer()
    srcs = [np.array([4, 5, 6]), np.array([7])]
    one = translate(scorer, srcs, beam=1)
    assert [r[0].tokens for r in one] == [h.tokens for h in greedy_decode(scorer, srcs)]
    six = translate(scorer, srcs, beam=6, nbest=3)
    assert all(1 <= len(r) <= 3 for r in six)
    for r, s in zip(six, srcs):
        assert all(len(h.tokens) <= default_max_len(len(s)) for h in r)
        assert all(not {0, 1} & set(h.tokens) for h in r)
    # beam 6 finds a hypothesis at least as good as greedy on this instance
    assert six[0][0].score >= one[0][0].score - 1e-12
