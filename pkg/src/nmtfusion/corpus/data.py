"""Parallel datasets, length-bucketed batching, and backtranslation mixing."""

from dataclasses import dataclass, field

import numpy as np

from .vocab import BOS, EOS, PAD


@dataclass
class ParallelDataset:
    src: list
    tgt: list
    synthetic: list = field(default=None)

    def __post_init__(self):
        self.src = [np.asarray(s, dtype=np.int64) for s in self.src]
        self.tgt = [np.asarray(t, dtype=np.int64) for t in self.tgt]
        if self.synthetic is None:
            self.synthetic = [False] * len(self.src)
        self.synthetic = [bool(x) for x in self.synthetic]
        if not (len(self.src) == len(self.tgt) == len(self.synthetic)):
            raise ValueError("source/target/provenance lengths differ")
        for s, t in zip(self.src, self.tgt):
            if len(s) == 0 or len(t) == 0:
                raise ValueError("empty sequence in parallel dataset")

    def __len__(self):
        return len(self.src)

    def check_ids(self, src_vocab_size, tgt_vocab_size):
        for s in self.src:
            if s.max() >= src_vocab_size or s.min() < 0:
                raise ValueError("source id out of range")
        for t in self.tgt:
            if t.max() >= tgt_vocab_size or t.min() < 0:
                raise ValueError("target id out of range")

    def subset(self, indices):
        return ParallelDataset(
            [self.src[i] for i in indices],
            [self.tgt[i] for i in indices],
            [self.synthetic[i] for i in indices],
        )

    @property
    def n_synthetic(self):
        return sum(self.synthetic)

    @classmethod
    def concat(cls, *parts):
        src, tgt, syn = [], [], []
        for p in parts:
            src += p.src
            tgt += p.tgt
            syn += p.synthetic
        return cls(src, tgt, syn)


def copy_target_pairs(targets):
    """Synthetic ``(source, target)`` text pairs that reuse each target as its source.

    A cheap stand-in for backtranslation with a reverse model.
    """
    return [(t, t) for t in targets]


def mix_backtranslation(real, synthetic, n, seed=0, replacement=False):
    """Real pairs plus ``n * len(real)`` synthetic pairs, shuffled.

    Without ``replacement`` the synthetic share is truncated to the pool size.
    """
    if n < 0:
        raise ValueError("mixing ratio n must be >= 0")
    if n == 0:
        return real
    rng = np.random.default_rng(seed)
    need = n * len(real)
    pool = len(synthetic)
    if pool == 0:
        chosen = np.array([], dtype=np.int64)
    elif need <= pool:
        chosen = rng.permutation(pool)[:need]
    elif replacement:
        chosen = rng.integers(0, pool, size=need)
    else:
        chosen = rng.permutation(pool)
    syn = synthetic.subset(chosen)
    syn.synthetic = [True] * len(syn)
    mixed = ParallelDataset.concat(real, syn)
    return mixed.subset(rng.permutation(len(mixed)))


def pad_batch(seqs, pad=PAD):
    """Stack variable-length id sequences into ``(ids, mask)`` arrays."""
    L = max(len(s) for s in seqs)
    ids = np.full((len(seqs), L), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), L))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def target_io(seqs):
    """Decoder inputs ``bos y`` and outputs ``y eos`` with the output mask."""
    tin = [np.concatenate([[BOS], s]) for s in seqs]
    tout = [np.concatenate([s, [EOS]]) for s in seqs]
    inp, _ = pad_batch(tin)
    out, mask = pad_batch(tout)
    return inp, out, mask


def make_batches(lengths, batch_size, rng=None):
    """Group indices into batches of similar length.

    With an ``rng`` the order is shuffled first (ties in length keep the
    shuffled order) and the batch order is shuffled too.
    """
    n = len(lengths)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    keys = np.asarray(lengths)[order]
    order = order[np.argsort(keys, kind="stable")]
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def read_lines(path):
    with open(path, encoding="utf-8", errors="strict") as f:
        return [line.rstrip("\n") for line in f]


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
