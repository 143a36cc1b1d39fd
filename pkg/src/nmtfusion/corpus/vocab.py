from collections import Counter

from .bpe import strip_markers

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")


class Vocabulary:
    """Bijection between token strings and ids; ids 0..3 are reserved."""

    def __init__(self, tokens, counts=None):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        self.counts = dict(counts or {})

    @classmethod
    def build(cls, sentences, min_count=1, max_size=None):
        """Vocabulary of tokens sorted by descending count, then token."""
        counter = Counter()
        for sent in sentences:
            counter.update(sent.split() if isinstance(sent, str) else sent)
        for r in RESERVED:
            counter.pop(r, None)
        items = sorted((t for t, c in counter.items() if c >= min_count), key=lambda t: (-counter[t], t))
        if max_size is not None:
            items = items[: max(0, max_size - len(RESERVED))]
        return cls(list(RESERVED) + items, {t: counter[t] for t in items})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token):
        return self.index.get(token, UNK)

    def encode(self, tokens):
        if isinstance(tokens, str):
            tokens = tokens.split()
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids, strip_special=True):
        """Tokens for ``ids``; stops at the first eos when ``strip_special``."""
        out = []
        for i in ids:
            i = int(i)
            if strip_special:
                if i == EOS:
                    break
                if i in (PAD, BOS):
                    continue
            out.append(self.tokens[i])
        return out

    def detokenize(self, ids):
        """Word string for ``ids`` with BPE continuation markers joined."""
        return strip_markers(self.decode(ids))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.tokens:
                f.write(f"{t}\t{self.counts.get(t, 0)}\n")

    @classmethod
    def load(cls, path):
        tokens, counts = [], {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, cnt = line.partition("\t")
                tokens.append(tok)
                counts[tok] = int(cnt or 0)
        return cls(tokens, counts)
