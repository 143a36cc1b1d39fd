"""Synthetic low-resource translation task.

Target sentences come from a sparse order-2 Markov grammar, so a language
model trained on plenty of monolingual text predicts them well. The source
side is a deterministic word-level transduction of the target:

* every target word maps to a source word, but ``n_homonyms`` pairs of
  target words share one source word (the target context disambiguates);
* ``n_dropped`` target words have no source counterpart;
* a target word of class A followed by one of class B appear swapped in the
  source.
"""

import bisect
import os
from dataclasses import asdict, dataclass

import numpy as np

from .data import write_lines

TGT_CONSONANTS = "bdfklmnprst"
TGT_VOWELS = "aeiou"
SRC_CONSONANTS = "cghjqvwxyz"
SRC_VOWELS = "aeiouy"


@dataclass
class GrammarConfig:
    n_words: int = 40
    branching: int = 3
    concentration: float = 0.6
    eos_fraction: float = 0.35
    min_len: int = 3
    max_len: int = 16
    n_homonyms: int = 10
    n_dropped: int = 3
    n_swap_a: int = 5
    n_swap_b: int = 5
    n_dev: int = 300
    n_test: int = 300


@dataclass
class SynthTask:
    train: list  # (source, target) string pairs
    mono: list  # target-side monolingual sentences
    dev: list
    test: list
    config: dict

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        for name, pairs in (("train", self.train), ("dev", self.dev), ("test", self.test)):
            write_lines(os.path.join(directory, f"{name}.src"), [s for s, _ in pairs])
            write_lines(os.path.join(directory, f"{name}.tgt"), [t for _, t in pairs])
        write_lines(os.path.join(directory, "mono.tgt"), self.mono)


def _make_words(rng, n, consonants, vowels, taken=()):
    words = []
    seen = set(taken)
    while len(words) < n:
        n_syl = int(rng.integers(1, 4))
        w = "".join(consonants[rng.integers(len(consonants))] + vowels[rng.integers(len(vowels))] for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


class Grammar:
    """Order-2 Markov chain over target words plus the source transduction."""

    def __init__(self, seed, config):
        self.config = config
        rng = np.random.default_rng([seed, 7])
        cfg = config
        V = cfg.n_words
        self.tgt_words = _make_words(rng, V, TGT_CONSONANTS, TGT_VOWELS)
        self.eos = V
        self.bos = V + 1
        self.table = {}
        contexts = [(a, b) for a in range(V + 2) for b in range(V + 2)]
        for ctx in contexts:
            succ = list(rng.choice(V, size=cfg.branching, replace=False))
            if rng.random() < cfg.eos_fraction:
                succ.append(self.eos)
            probs = rng.dirichlet([cfg.concentration] * len(succ))
            cum = np.cumsum(probs)
            cum[-1] = 1.0
            self.table[ctx] = ([int(x) for x in succ], cum.tolist())

        perm = rng.permutation(V)
        dropped = set(int(w) for w in perm[: cfg.n_dropped])
        homonym_words = perm[cfg.n_dropped : cfg.n_dropped + 2 * cfg.n_homonyms]
        rest = [int(w) for w in perm[cfg.n_dropped + 2 * cfg.n_homonyms :]]
        n_src = cfg.n_homonyms + len(rest)
        src_words = _make_words(rng, n_src, SRC_CONSONANTS, SRC_VOWELS, taken=self.tgt_words)
        self.src_of = {}
        k = 0
        for i in range(cfg.n_homonyms):
            self.src_of[int(homonym_words[2 * i])] = src_words[k]
            self.src_of[int(homonym_words[2 * i + 1])] = src_words[k]
            k += 1
        for w in rest:
            self.src_of[w] = src_words[k]
            k += 1
        self.dropped = dropped
        content = [w for w in range(V) if w not in dropped]
        order = rng.permutation(content)
        self.class_a = set(int(w) for w in order[: cfg.n_swap_a])
        self.class_b = set(int(w) for w in order[cfg.n_swap_a : cfg.n_swap_a + cfg.n_swap_b])

    def sample(self, uniform):
        """Draw one sentence; ``uniform()`` returns floats in [0, 1)."""
        cfg = self.config
        while True:
            a, b = self.bos, self.bos
            words = []
            while len(words) <= cfg.max_len:
                succ, cum = self.table[(a, b)]
                nxt = succ[min(bisect.bisect_right(cum, uniform()), len(succ) - 1)]
                if nxt == self.eos:
                    break
                words.append(nxt)
                a, b = b, nxt
            if cfg.min_len <= len(words) <= cfg.max_len and any(w not in self.dropped for w in words):
                return words

    def transduce(self, words):
        out = []
        i = 0
        while i < len(words):
            w = words[i]
            if i + 1 < len(words) and w in self.class_a and words[i + 1] in self.class_b:
                out.append(words[i + 1])
                out.append(w)
                i += 2
            else:
                out.append(w)
                i += 1
        return [self.src_of[w] for w in out if w not in self.dropped]

    def render(self, words):
        return " ".join(self.tgt_words[w] for w in words)


class _UniformStream:
    def __init__(self, rng, block=65536):
        self.rng = rng
        self.block = block
        self.buf = []
        self.pos = 0

    def __call__(self):
        if self.pos == len(self.buf):
            self.buf = self.rng.random(self.block).tolist()
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


def synth_task_generate(seed, n_parallel, n_mono, config=None):
    """Deterministically generate train/mono/dev/test splits.

    Dev and test sentences never occur in train or mono, and dev and test
    are disjoint from each other.
    """
    config = config or GrammarConfig()
    if n_parallel <= 0 or n_mono <= 0:
        raise ValueError("sizes must be positive")
    grammar = Grammar(seed, config)
    uniform = _UniformStream(np.random.default_rng([seed, 11]))

    held_out = {}
    dev, test = [], []
    for bucket, size in ((dev, config.n_dev), (test, config.n_test)):
        while len(bucket) < size:
            words = grammar.sample(uniform)
            key = tuple(words)
            if key in held_out:
                continue
            held_out[key] = True
            bucket.append(words)

    def draw(count, stream):
        out = []
        while len(out) < count:
            words = grammar.sample(stream)
            if tuple(words) not in held_out:
                out.append(words)
        return out

    # separate streams: train sets of different sizes are prefixes of each
    # other and the monolingual corpus does not depend on n_parallel
    train = draw(n_parallel, uniform)
    mono = draw(n_mono, _UniformStream(np.random.default_rng([seed, 12])))

    def pairs(items):
        return [(" ".join(grammar.transduce(w)), grammar.render(w)) for w in items]

    return SynthTask(
        train=pairs(train),
        mono=[grammar.render(w) for w in mono],
        dev=pairs(dev),
        test=pairs(test),
        config=dict(asdict(config), seed=seed),
    )
