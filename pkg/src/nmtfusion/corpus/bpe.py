"""Byte pair encoding with an end-of-word marker.

Words are split into characters with ``</w>`` glued to the last one. Merges
are learned over word types weighted by frequency. Segmented output marks
non-final subwords with ``@@``.
"""

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field

EOW = "</w>"
MARKER = "@@"
CODES_HEADER = "#version: nmtfusion-bpe 1"


def word_symbols(word):
    if not word:
        return ()
    return tuple(word[:-1]) + (word[-1] + EOW,)


@dataclass
class BpeCodes:
    merges: list = field(default_factory=list)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache = {}

    def __len__(self):
        return len(self.merges)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(CODES_HEADER + "\n")
            for left, right in self.merges:
                f.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path):
        merges = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f):
                line = line.rstrip("\n")
                if lineno == 0 and line.startswith("#"):
                    continue
                if not line:
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno + 1}: expected 'left right', got {line!r}")
                merges.append((parts[0], parts[1]))
        return cls(merges)

    def segment_word(self, word):
        """Symbols of ``word`` after applying merges by rank."""
        if word in self._cache:
            return self._cache[word]
        symbols = list(word_symbols(word))
        ranks = self.ranks
        while len(symbols) > 1:
            best = None
            best_rank = None
            for pair in zip(symbols, symbols[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            symbols = _merge_symbols(symbols, best)
        result = tuple(symbols)
        self._cache[word] = result
        return result


def _merge_symbols(symbols, pair):
    left, right = pair
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _words(stream):
    if isinstance(stream, str):  # a bare string is one sentence
        stream = [stream]
    for sent in stream:
        tokens = sent.split() if isinstance(sent, str) else sent
        yield from tokens


def bpe_train(corpora, num_merges):
    """Learn ``num_merges`` merges jointly over all ``corpora``.

    Each corpus is an iterable of sentences (strings or token lists). At each
    step the most frequent adjacent pair is merged; ties go to the
    lexicographically smallest ``(left, right)``.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    counts = Counter()
    for corpus in corpora:
        counts.update(_words(corpus))
    if not counts:
        raise ValueError("cannot train BPE on an empty corpus")

    words = [list(word_symbols(w)) for w in sorted(counts)]
    freqs = [counts[w] for w in sorted(counts)]
    pair_counts = defaultdict(int)
    where = defaultdict(set)
    for idx, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freqs[idx]
            where[pair].add(idx)

    heap = [(-c, p[0], p[1]) for p, c in pair_counts.items()]
    heapq.heapify(heap)
    merges = []
    while len(merges) < num_merges and heap:
        negc, left, right = heapq.heappop(heap)
        pair = (left, right)
        if pair_counts.get(pair, 0) != -negc or negc == 0:
            continue  # stale entry
        merges.append(pair)
        touched = set()
        for idx in where.pop(pair, ()):
            syms = words[idx]
            f = freqs[idx]
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= f
                touched.add(p)
            new = _merge_symbols(syms, pair)
            words[idx] = new
            for p in zip(new, new[1:]):
                pair_counts[p] += f
                where[p].add(idx)
                touched.add(p)
        pair_counts.pop(pair, None)
        for p in touched:
            c = pair_counts.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p[0], p[1]))
            else:
                pair_counts.pop(p, None)
    return BpeCodes(merges)


def bpe_apply(codes, sentence):
    """Segment a sentence (string or token list) into marked subword tokens."""
    tokens = sentence.split() if isinstance(sentence, str) else sentence
    out = []
    for word in tokens:
        syms = codes.segment_word(word)
        last = len(syms) - 1
        for i, s in enumerate(syms):
            if i == last:
                out.append(s[: -len(EOW)] if s.endswith(EOW) else s)
            else:
                out.append(s + MARKER)
    return out


def strip_markers(tokens):
    """Undo segmentation: join ``@@``-marked subwords to their successors."""
    text = " ".join(tokens)
    text = text.replace(MARKER + " ", "")
    if text.endswith(MARKER):
        text = text[: -len(MARKER)]
    return text


def alphabet(corpora):
    """Initial symbol inventory (characters, with and without ``</w>``)."""
    symbols = set()
    for corpus in corpora:
        for w in _words(corpus):
            symbols.update(word_symbols(w))
    return symbols
