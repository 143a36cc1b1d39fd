"""Target-side language models sharing one incremental scoring interface.

``step(state, tokens)`` consumes one token per hypothesis and returns the
natural-log distribution over the next token. A fresh state from ``start``
encodes the empty history; feeding it ``bos`` yields ``P(y_1)``.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as N
from .corpus.data import pad_batch
from .corpus.vocab import BOS, EOS
from .numerics.layers import Embedding, Linear, LSTMCell, Module


@dataclass
class RecurrentState:
    h: list  # per layer, (K, H)
    c: list
    last: np.ndarray  # (K,) last consumed token

    def select(self, idx):
        return RecurrentState([x[idx] for x in self.h], [x[idx] for x in self.c], self.last[idx])


@dataclass
class NgramState:
    context: np.ndarray  # (K, order - 1), oldest first

    def select(self, idx):
        return NgramState(self.context[idx])


@dataclass
class UniformState:
    batch: int

    def select(self, idx):
        return UniformState(len(np.atleast_1d(idx)))


class LanguageModel(Module):
    kind = "base"

    def __init__(self, vocab_size):
        self.vocab_size = vocab_size
        self.frozen = False

    def freeze(self):
        """Stop every parameter from entering a gradient graph."""
        for p in self.parameters():
            p.requires_grad = False
        self.frozen = True
        return self

    def _check_tokens(self, tokens):
        tokens = np.atleast_1d(np.asarray(tokens, dtype=np.int64))
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise IndexError("token id out of range")
        return tokens

    def start(self, batch=1):
        raise NotImplementedError

    def step(self, state, tokens):
        raise NotImplementedError

    def sequence_logprobs(self, inputs):
        """Teacher-forced ``(B, T, V)`` log-probs for ``(B, T)`` input ids."""
        raise NotImplementedError

    def descriptor(self):
        raise NotImplementedError

    def select(self, state, idx):
        return state.select(np.asarray(idx))


class RecurrentLM(LanguageModel):
    kind = "rnn"

    def __init__(self, vocab_size, emb_dim=64, hidden=128, layers=2, rng=None):
        super().__init__(vocab_size)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.emb_dim, self.hidden, self.n_layers = emb_dim, hidden, layers
        self.embed = Embedding(vocab_size, emb_dim, rng)
        self.cells = [LSTMCell(emb_dim if i == 0 else hidden, hidden, rng) for i in range(layers)]
        self.out = Linear(hidden, vocab_size, rng)

    def descriptor(self):
        return {"kind": self.kind, "vocab_size": self.vocab_size, "emb_dim": self.emb_dim,
                "hidden": self.hidden, "layers": self.n_layers}

    def start(self, batch=1):
        z = np.zeros((batch, self.hidden))
        return RecurrentState([z] * self.n_layers, [z] * self.n_layers, np.full(batch, BOS))

    def step(self, state, tokens):
        tokens = self._check_tokens(tokens)
        with N.no_grad():
            x = self.embed(tokens)
            hs, cs = [], []
            for cell, h, c in zip(self.cells, state.h, state.c):
                h2, c2 = cell.step(x, (N.Tensor(h), N.Tensor(c)))
                hs.append(h2.data)
                cs.append(c2.data)
                x = h2
            logp = N.log_softmax(self.out(x)).data
        return logp, RecurrentState(hs, cs, tokens)

    def sequence_logprobs(self, inputs):
        x = self.embed(inputs)
        for cell in self.cells:
            x, _ = cell.run(x)
        return N.log_softmax(self.out(x))


class FeedForwardLM(LanguageModel):
    """Fixed-window n-gram LM: concatenated context embeddings, two tanh layers."""

    kind = "ffn"

    def __init__(self, vocab_size, emb_dim=64, hidden=(128, 128), order=4, rng=None):
        super().__init__(vocab_size)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.emb_dim, self.order = emb_dim, order
        self.hidden_sizes = tuple(hidden)
        self.embed = Embedding(vocab_size, emb_dim, rng)
        dims = [(order - 1) * emb_dim] + list(self.hidden_sizes)
        self.hidden_layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(self.hidden_sizes))]
        self.out = Linear(dims[-1], vocab_size, rng)

    def descriptor(self):
        return {"kind": self.kind, "vocab_size": self.vocab_size, "emb_dim": self.emb_dim,
                "hidden": list(self.hidden_sizes), "order": self.order}

    def start(self, batch=1):
        return NgramState(np.full((batch, self.order - 1), BOS, dtype=np.int64))

    def _forward(self, context):
        lead = context.shape[:-1]
        x = self.embed(context).reshape(*lead, (self.order - 1) * self.emb_dim)
        for layer in self.hidden_layers:
            x = N.tanh(layer(x))
        return N.log_softmax(self.out(x))

    def step(self, state, tokens):
        tokens = self._check_tokens(tokens)
        context = np.concatenate([state.context[:, 1:], tokens[:, None]], axis=1)
        with N.no_grad():
            logp = self._forward(context).data
        return logp, NgramState(context)

    def windows(self, inputs):
        """``(B, T, order-1)`` context ids for every teacher-forced step."""
        inputs = np.asarray(inputs, dtype=np.int64)
        B, T = inputs.shape
        k = self.order - 1
        padded = np.concatenate([np.full((B, k - 1), BOS, dtype=np.int64), inputs], axis=1)
        return np.stack([padded[:, j : j + T] for j in range(k)], axis=2)

    def sequence_logprobs(self, inputs):
        return self._forward(self.windows(inputs))


class UniformLM(LanguageModel):
    """Every token gets probability 1/V; used as a diagnostic reduction."""

    kind = "uniform"

    def descriptor(self):
        return {"kind": self.kind, "vocab_size": self.vocab_size}

    def start(self, batch=1):
        return UniformState(batch)

    def step(self, state, tokens):
        tokens = self._check_tokens(tokens)
        return np.full((len(tokens), self.vocab_size), -np.log(self.vocab_size)), UniformState(len(tokens))

    def sequence_logprobs(self, inputs):
        inputs = np.asarray(inputs)
        return N.Tensor(np.full(inputs.shape + (self.vocab_size,), -np.log(self.vocab_size)))


def build_lm(descriptor, rng=None):
    d = dict(descriptor)
    kind = d.pop("kind")
    if kind == "rnn":
        return RecurrentLM(d["vocab_size"], d["emb_dim"], d["hidden"], d["layers"], rng=rng)
    if kind == "ffn":
        return FeedForwardLM(d["vocab_size"], d["emb_dim"], tuple(d["hidden"]), d["order"], rng=rng)
    if kind == "uniform":
        return UniformLM(d["vocab_size"])
    raise ValueError(f"unknown LM kind {kind!r}")


def lm_start(model, batch=1):
    return model.start(batch)


def lm_step(model, state, token):
    """Consume ``token`` (scalar or per-hypothesis array); return (log-probs, state)."""
    scalar = np.ndim(token) == 0
    logp, new = model.step(state, np.atleast_1d(token))
    return (logp[0] if scalar else logp), new


def lm_batch(sentences):
    """Inputs ``bos y``, outputs ``y eos`` and mask for a list of id sequences."""
    tin = [np.concatenate([[BOS], s]).astype(np.int64) for s in sentences]
    tout = [np.concatenate([s, [EOS]]).astype(np.int64) for s in sentences]
    inp, _ = pad_batch(tin)
    out, mask = pad_batch(tout)
    return inp, out, mask


def lm_loss(model, sentences, smoothing=0.0):
    """Mean per-token label-smoothed loss and token count for a batch."""
    from .training import label_smoothed_nll

    inp, out, mask = lm_batch(sentences)
    logp = model.sequence_logprobs(inp)
    return label_smoothed_nll(logp, out, mask, smoothing)


def sentence_nll(model, sentences, batch_size=64):
    """Summed natural-log NLL (eos included) and token count."""
    total, count = 0.0, 0
    with N.no_grad():
        for i in range(0, len(sentences), batch_size):
            chunk = sentences[i : i + batch_size]
            inp, out, mask = lm_batch(chunk)
            logp = model.sequence_logprobs(inp).data
            picked = np.take_along_axis(logp, out[..., None], axis=2)[..., 0]
            total -= float((picked * mask).sum())
            count += int(mask.sum())
    return total, count


def perplexity(model, corpus, batch_size=64):
    """exp(mean per-token NLL) over ``corpus`` (id sequences, eos counted)."""
    corpus = [np.asarray(s, dtype=np.int64) for s in corpus]
    if not corpus:
        raise ValueError("perplexity of an empty corpus")
    total, count = sentence_nll(model, corpus, batch_size)
    return float(np.exp(total / count))
