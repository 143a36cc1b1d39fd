import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmtfusion.evaluation import (
    REPORT_COLUMNS,
    BleuReport,
    average_entropy,
    bleu,
    bleu_from_components,
    brevity_penalty,
    precision_breakdown_compare,
    write_report,
)
from nmtfusion.fusion import LmScorer
from nmtfusion.lm import RecurrentLM, UniformLM, perplexity

from .oracles import clipped_ngram_stats

words = st.lists(st.sampled_from("a b c d e".split()), min_size=0, max_size=9)


def _report(precisions, bp):
    return BleuReport(bleu_from_components(precisions, bp), tuple(precisions), bp, 0, 0)


# BLEU ---------------------------------------------------------------------------------


def test_composition_of_reference_components():
    assert bleu_from_components([53.0, 23.7, 12.3, 6.6], 0.996) == pytest.approx(17.91, abs=0.15)
    assert bleu_from_components([54.0, 24.9, 13.4, 7.4], 1.000) == pytest.approx(19.01, abs=0.15)


def test_relative_precision_improvements():
    a = _report([53.0, 23.7, 12.3, 6.6], 0.996)
    b = _report([54.0, 24.9, 13.4, 7.4], 1.000)
    rel = precision_breakdown_compare(a, b)
    for key, want in zip(("p1", "p2", "p3", "p4"), (1.89, 5.06, 8.94, 12.12)):
        assert rel[key] == pytest.approx(want, abs=0.005)
    with pytest.raises(ValueError):
        precision_breakdown_compare(_report([0.0, 1, 1, 1], 1.0), b)


def test_identity_corpus_is_100():
    refs = ["the cat sat on the mat", "a b c d e f"]
    r = bleu(refs, refs)
    assert r.bleu == 100.0 and r.bp == 1.0


def test_brevity_penalty_values():
    assert brevity_penalty(10, 10) == 1.0
    assert brevity_penalty(12, 10) == 1.0
    assert brevity_penalty(5, 10) == pytest.approx(math.exp(-1.0))
    assert brevity_penalty(0, 10) == 0.0


def test_no_match_order_gives_zero_and_errors():
    assert bleu(["a b c"], ["d e f"]).bleu == 0.0
    assert bleu(["a b"], ["a b"]).bleu == 0.0  # no 3-grams or 4-grams
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        bleu([], [])


def test_case_insensitive():
    assert bleu(["The Cat sat on a Mat"], ["the cat sat on a mat"]).bleu == 100.0


@given(st.lists(st.tuples(words, words), min_size=1, max_size=6))
@settings(max_examples=60)
def test_counts_match_manual_oracle(pairs):
    cands = [c for c, _ in pairs]
    refs = [r for _, r in pairs]
    rep = bleu(cands, refs)
    matches, totals = clipped_ngram_stats(cands, refs)
    assert list(rep.matches) == matches and list(rep.totals) == totals
    assert rep.cand_len == sum(map(len, cands)) and rep.ref_len == sum(map(len, refs))
    assert 0.0 <= rep.bleu <= 100.0


@given(st.lists(st.tuples(words, words), min_size=1, max_size=6), st.randoms(use_true_random=False))
@settings(max_examples=40)
def test_sentence_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = bleu([c for c, _ in pairs], [r for _, r in pairs])
    b = bleu([c for c, _ in shuffled], [r for _, r in shuffled])
    assert a.bleu == pytest.approx(b.bleu, abs=1e-12)
    assert a.matches == b.matches


def test_report_formats(tmp_path):
    r = bleu(["a b c d"], ["a b c d e"])
    lines = r.tsv().splitlines()
    assert lines[0].split("\t") == list(REPORT_COLUMNS)
    assert len(lines[1].split("\t")) == len(REPORT_COLUMNS)
    assert r.text().startswith("BLEU = ")
    write_report(tmp_path / "r.tsv", r)
    assert (tmp_path / "r.tsv").read_text() == r.tsv()


# entropy -------------------------------------------------------------------------------


class ConstScorer:
    def __init__(self, row):
        self.row = np.asarray(row, dtype=np.float64)
        self.vocab_size = len(row)

    def start(self, sources):
        return None

    def step(self, state, tokens):
        return np.tile(self.row, (len(tokens), 1)), state

    def select(self, state, rows):
        return state


PAIRS = [([4, 5], [4, 5, 6]), ([5], [6])]


def test_entropy_uniform_is_log_v():
    rep = average_entropy(ConstScorer(np.zeros(8)), PAIRS)
    assert rep.entropy == pytest.approx(math.log(8), abs=1e-12)
    assert rep.perplexity == pytest.approx(8, rel=1e-12)
    assert rep.steps == 4 + 2


def test_entropy_one_hot_is_zero():
    row = np.full(8, -np.inf)
    row[2] = 0.0
    assert average_entropy(ConstScorer(row), PAIRS).entropy == 0.0


def test_entropy_of_unnormalized_scores_is_normalized_first():
    a = average_entropy(ConstScorer(np.arange(8.0)), PAIRS).entropy
    b = average_entropy(ConstScorer(np.arange(8.0) + 7.5), PAIRS).entropy
    assert a == pytest.approx(b, abs=1e-12)


def test_perplexity_agrees_with_lm_perplexity():
    lm = RecurrentLM(9, 4, 5, 1, rng=np.random.default_rng(0))
    sents = [[4, 5, 6], [7, 8], [4]]
    pairs = [([4], s) for s in sents]
    rep = average_entropy(LmScorer(lm), pairs, batch_size=2)
    assert rep.perplexity == pytest.approx(perplexity(lm, sents), abs=1e-9)
    uni = average_entropy(LmScorer(UniformLM(9)), pairs)
    assert uni.entropy == pytest.approx(math.log(9), abs=1e-12)
    with pytest.raises(ValueError):
        average_entropy(LmScorer(lm), [])
