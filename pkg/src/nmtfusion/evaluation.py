"""Corpus BLEU with a precision breakdown, and teacher-forced entropy/perplexity."""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus.data import pad_batch
from .corpus.vocab import BOS, EOS
from .fusion import log_softmax

MAX_ORDER = 4
REPORT_COLUMNS = ("bleu", "p1", "p2", "p3", "p4", "bp", "cand_len", "ref_len")


@dataclass
class BleuReport:
    bleu: float
    precisions: tuple  # percent, orders 1..4
    bp: float
    cand_len: int
    ref_len: int
    matches: tuple = ()
    totals: tuple = ()

    def row(self):
        vals = [self.bleu, *self.precisions, self.bp]
        return [f"{v:.4f}" for v in vals] + [str(self.cand_len), str(self.ref_len)]

    def tsv(self):
        return "\t".join(REPORT_COLUMNS) + "\n" + "\t".join(self.row()) + "\n"

    def text(self):
        p = "/".join(f"{x:.1f}" for x in self.precisions)
        return (f"BLEU = {self.bleu:.2f} {p} (BP = {self.bp:.3f}, "
                f"hyp_len = {self.cand_len}, ref_len = {self.ref_len})")


@dataclass
class EntropyReport:
    entropy: float  # nats per step
    perplexity: float
    label: str = ""
    steps: int = 0


def _tokens(x):
    if isinstance(x, str):
        return x.lower().split()
    return [t.lower() if isinstance(t, str) else t for t in x]


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_from_components(precisions, bp):
    """Compose BLEU (percent) from percent precisions and a brevity penalty."""
    p = np.asarray(precisions, dtype=np.float64)
    if np.any(p <= 0):
        return 0.0
    return float(bp * np.exp(np.mean(np.log(p / 100.0))) * 100.0)


def brevity_penalty(cand_len, ref_len):
    if cand_len == 0:
        return 0.0
    return float(min(1.0, np.exp(1.0 - ref_len / cand_len)))


def bleu(candidates, references):
    """Corpus BLEU over line-aligned strings or token lists (lower-cased)."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if len(candidates) == 0:
        raise ValueError("empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c, r = _tokens(cand), _tokens(ref)
        c_len += len(c)
        r_len += len(r)
        for n in range(1, MAX_ORDER + 1):
            cc, rc = ngram_counts(c, n), ngram_counts(r, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in cc.items())
            totals[n - 1] += max(0, len(c) - n + 1)
    precisions = tuple(100.0 * m / t if t else 0.0 for m, t in zip(matches, totals))
    bp = brevity_penalty(c_len, r_len)
    score = bleu_from_components(precisions, bp) if min(matches) > 0 else 0.0
    return BleuReport(score, precisions, bp, c_len, r_len, tuple(matches), tuple(totals))


def precision_breakdown_compare(report_a, report_b):
    """Relative change (percent) from ``a`` to ``b`` per order, plus BLEU."""
    pa, pb = report_a.precisions, report_b.precisions
    if any(p == 0 for p in pa):
        raise ValueError("base report has a zero precision")
    rel = [100.0 * (b - a) / a for a, b in zip(pa, pb)]
    out = {f"p{i + 1}": r for i, r in enumerate(rel)}
    out["bleu"] = 100.0 * (report_b.bleu - report_a.bleu) / report_a.bleu if report_a.bleu else float("nan")
    return out


def average_entropy(scorer, pairs, label="", batch_size=64):
    """Mean per-step entropy and perplexity under teacher forcing.

    ``pairs`` are ``(source ids, target ids)``; targets exclude bos/eos, and
    the eos step is counted. Step scores are log-softmaxed first, so
    unnormalized scorers are measured as distributions.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty corpus")
    ent_sum = nll_sum = 0.0
    steps = 0
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i : i + batch_size]
        srcs = [np.asarray(s, dtype=np.int64) for s, _ in chunk]
        outs = [np.concatenate([t, [EOS]]).astype(np.int64) for _, t in chunk]
        out, mask = pad_batch(outs)
        state = scorer.start(srcs)
        prev = np.full(len(chunk), BOS)
        for t in range(out.shape[1]):
            scores, state = scorer.step(state, prev)
            lp = log_softmax(scores)
            p = np.exp(lp)
            ent = -(p * np.where(p > 0, lp, 0.0)).sum(axis=1)
            m = mask[:, t]
            ent_sum += float((ent * m).sum())
            tgt_lp = lp[np.arange(len(chunk)), out[:, t]]
            nll_sum -= float(np.where(m > 0, tgt_lp, 0.0).sum())
            steps += int(m.sum())
            prev = np.where(m > 0, out[:, t], EOS)
    return EntropyReport(ent_sum / steps, float(np.exp(nll_sum / steps)), label, steps)


def write_report(path, report):
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.tsv())
