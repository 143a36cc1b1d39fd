"""Beam search, batched greedy decoding, and model ensembling.

A scorer exposes ``start(sources) -> state``, ``step(state, tokens) ->
(scores (K, V), state)`` and ``select(state, rows) -> state``; rows of the
state are hypotheses. Step scores must be non-positive for the early-stopping
rule in :func:`beam_search` to be exact (true for every scorer here).
"""

from dataclasses import dataclass

import numpy as np

from .corpus.vocab import BOS, EOS
from .fusion import log_softmax


@dataclass
class Hypothesis:
    tokens: tuple
    score: float
    step_scores: tuple = ()
    finished: bool = False

    def __len__(self):
        return len(self.tokens)

    @property
    def output_tokens(self):
        return self.tokens[:-1] if self.finished else self.tokens


def default_max_len(source_len):
    return 2 * source_len + 10


def _banned(scorer):
    return tuple(getattr(scorer, "banned_tokens", ()))


def _rank_key(h, length_penalty):
    if not length_penalty:
        return h.score
    return h.score / (max(len(h.tokens), 1) ** length_penalty)


def beam_search(scorer, source, beam=6, max_len=None, length_penalty=0.0):
    """Best-first search keeping the ``beam`` best expansions per step.

    Hypotheses ending in eos retire to a pool. Search stops when no live
    hypothesis remains, when every live score is below the worst retired
    score, or at ``max_len`` (live hypotheses then retire unfinished).
    Returns up to ``beam`` hypotheses, best first.
    """
    if len(source) == 0:
        raise ValueError("empty source")
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len is None:
        max_len = default_max_len(len(source))
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    banned = _banned(scorer)

    state = scorer.start([source])
    live = [Hypothesis((), 0.0)]
    live_scores = np.zeros(1)
    last = np.array([BOS])
    pool = []
    for t in range(max_len):
        scores, state = scorer.step(state, last)
        total = live_scores[:, None] + scores
        if banned:
            total[:, list(banned)] = -np.inf
        V = total.shape[1]
        flat = total.ravel()
        order = np.argsort(-flat, kind="stable")[:beam]
        rows, toks, nxt = [], [], []
        for j in order:
            if not np.isfinite(flat[j]):
                continue
            row, tok = divmod(int(j), V)
            parent = live[row]
            hyp = Hypothesis(
                parent.tokens + (tok,),
                float(flat[j]),
                parent.step_scores + (float(scores[row, tok]),),
                tok == EOS,
            )
            if hyp.finished:
                pool.append(hyp)
            else:
                rows.append(row)
                toks.append(tok)
                nxt.append(hyp)
        if not nxt:
            break
        if t == max_len - 1:
            pool.extend(nxt)
            break
        live = nxt
        live_scores = np.array([h.score for h in live])
        last = np.array(toks)
        state = scorer.select(state, np.array(rows))
        if pool and not length_penalty and live_scores.max() < min(h.score for h in pool):
            break
    pool.sort(key=lambda h: -_rank_key(h, length_penalty))
    return pool[:beam]


def greedy_decode(scorer, sources, max_len=None):
    """Batched argmax decoding; one :class:`Hypothesis` per source."""
    if len(sources) == 0:
        return []
    B = len(sources)
    limits = np.array([default_max_len(len(s)) if max_len is None else max_len for s in sources])
    banned = list(_banned(scorer))
    state = scorer.start(sources)
    active = np.arange(B)
    last = np.full(B, BOS)
    tokens = [[] for _ in range(B)]
    steps = [[] for _ in range(B)]
    totals = [0.0] * B
    done = [False] * B
    for t in range(int(limits.max())):
        scores, state = scorer.step(state, last)
        masked = scores.copy() if banned else scores
        if banned:
            masked[:, banned] = -np.inf
        choice = np.argmax(masked, axis=1)
        keep = []
        for r, i in enumerate(active):
            tok = int(choice[r])
            s = float(scores[r, tok])
            tokens[i].append(tok)
            steps[i].append(s)
            totals[i] = totals[i] + s
            if tok == EOS:
                done[i] = True
            elif len(tokens[i]) < limits[i]:
                keep.append(r)
        if not keep:
            break
        keep = np.array(keep)
        active = active[keep]
        last = choice[keep]
        state = scorer.select(state, keep)
    return [Hypothesis(tuple(tokens[i]), totals[i], tuple(steps[i]), done[i]) for i in range(B)]


class EnsembleScorer:
    """Average of member log-distributions, renormalized."""

    def __init__(self, members):
        members = list(members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        sizes = {m.vocab_size for m in members}
        if len(sizes) != 1:
            raise ValueError("ensemble members disagree on vocabulary size")
        self.members = members
        self.vocab_size = sizes.pop()
        self.banned_tokens = _banned(members[0])
        self.normalized = True

    def start(self, sources):
        return [m.start(sources) for m in self.members]

    def select(self, state, idx):
        return [m.select(s, idx) for m, s in zip(self.members, state)]

    def step(self, state, tokens):
        return ensemble_step(self, state, tokens)


def ensemble_step(ensemble, states, prev):
    """Mean of member log-softmaxed scores, then log-softmax."""
    if len(ensemble.members) == 0:
        raise ValueError("ensemble has no members")
    if len(states) != len(ensemble.members):
        raise ValueError("one state per member required")
    total = None
    new_states = []
    for m, s in zip(ensemble.members, states):
        scores, s2 = m.step(s, prev)
        lp = log_softmax(np.atleast_2d(scores))
        total = lp if total is None else total + lp
        new_states.append(s2)
    return log_softmax(total / len(ensemble.members)), new_states


def translate(scorer, sources, beam=6, max_len=None, nbest=1):
    """Beam-search every source; returns a list of ranked hypothesis lists."""
    if beam == 1 and nbest == 1:
        return [[h] for h in greedy_decode(scorer, sources, max_len)]
    return [beam_search(scorer, s, beam=beam, max_len=max_len)[:nbest] for s in sources]


def nbest_rows(results, render):
    """Rows ``line, rank, score, tokens`` for an n-best TSV."""
    rows = []
    for line, hyps in enumerate(results):
        for rank, h in enumerate(hyps):
            rows.append(f"{line}\t{rank}\t{h.score:.6f}\t{render(h.output_tokens)}")
    return rows
