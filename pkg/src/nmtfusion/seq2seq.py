"""Attentional LSTM encoder-decoder producing unnormalized output logits.

Encoder: a bidirectional first layer whose concatenated outputs are projected
back to the hidden size, then a right-to-left second layer. Decoder: two LSTM
layers fed the previous target embedding; dot-product attention of the top
decoder state over the encoder annotations; ``tanh(W [h; ctx])`` feature
vector; output projection to vocabulary logits.
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as N
from .corpus.data import pad_batch
from .corpus.vocab import BOS
from .numerics.layers import Embedding, Linear, LSTMCell, Module, dot_attention


@dataclass
class EncoderOutput:
    annotations: N.Tensor  # (B, S, H), top (right-to-left) layer
    mask: np.ndarray  # (B, S)
    final: tuple  # (h, c) of the top layer after reading position 0

    @property
    def lengths(self):
        return self.mask.sum(axis=1).astype(int)


@dataclass
class DecoderState:
    h: list  # per layer (K, H) arrays
    c: list
    rows: np.ndarray  # (K,) row of the encoder batch each hypothesis attends to
    last: np.ndarray  # (K,) last emitted token
    context: np.ndarray = None  # (K, H) previous attention context

    def select(self, idx):
        idx = np.asarray(idx)
        return DecoderState(
            [x[idx] for x in self.h],
            [x[idx] for x in self.c],
            self.rows[idx],
            self.last[idx],
            None if self.context is None else self.context[idx],
        )


class TranslationModel(Module):
    def __init__(self, src_vocab_size, tgt_vocab_size, emb_dim=64, hidden=128, dec_layers=2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.src_vocab_size, self.tgt_vocab_size = src_vocab_size, tgt_vocab_size
        self.emb_dim, self.hidden, self.dec_layers = emb_dim, hidden, dec_layers
        H = hidden
        self.src_embed = Embedding(src_vocab_size, emb_dim, rng)
        self.tgt_embed = Embedding(tgt_vocab_size, emb_dim, rng)
        self.enc_fwd = LSTMCell(emb_dim, H, rng)
        self.enc_bwd = LSTMCell(emb_dim, H, rng)
        self.enc_proj = Linear(2 * H, H, rng)
        self.enc_top = LSTMCell(H, H, rng)
        self.dec_init = Linear(2 * H, 2 * dec_layers * H, rng)
        self.dec_cells = [LSTMCell(emb_dim if i == 0 else H, H, rng) for i in range(dec_layers)]
        self.att_combine = Linear(2 * H, H, rng)
        self.out = Linear(H, tgt_vocab_size, rng)

    def descriptor(self):
        return {
            "kind": "seq2seq",
            "src_vocab_size": self.src_vocab_size,
            "tgt_vocab_size": self.tgt_vocab_size,
            "emb_dim": self.emb_dim,
            "hidden": self.hidden,
            "dec_layers": self.dec_layers,
        }

    @classmethod
    def from_descriptor(cls, d, rng=None):
        return cls(d["src_vocab_size"], d["tgt_vocab_size"], d["emb_dim"], d["hidden"], d["dec_layers"], rng=rng)

    # encoder -----------------------------------------------------------------

    def encode(self, src, mask=None):
        """Encode a ``(B, S)`` id batch (or a single id sequence)."""
        src = np.asarray(src, dtype=np.int64)
        if src.ndim == 1:
            src = src[None, :]
        if src.shape[1] == 0:
            raise ValueError("cannot encode an empty source")
        if mask is None:
            mask = np.ones(src.shape)
        x = self.src_embed(src)
        fwd, _ = self.enc_fwd.run(x, mask=mask)
        bwd, _ = self.enc_bwd.run(x, mask=mask, reverse=True)
        both = N.concat([fwd, bwd], axis=-1)
        mid = self.enc_proj(both)
        top, final = self.enc_top.run(mid, mask=mask, reverse=True)
        return EncoderOutput(top, mask, final)

    def encode_batch(self, sources):
        ids, mask = pad_batch([np.asarray(s, dtype=np.int64) for s in sources])
        return self.encode(ids, mask)

    def initial_state(self, enc):
        """Per-layer ``(h, c)`` tensors from the encoder's final state."""
        h, c = enc.final
        z = self.dec_init(N.concat([h, c], axis=-1))
        H, L = self.hidden, self.dec_layers
        states = []
        for layer in range(L):
            hl = N.tanh(z[:, 2 * layer * H : (2 * layer + 1) * H])
            cl = z[:, (2 * layer + 1) * H : (2 * layer + 2) * H]
            states.append((hl, cl))
        return states

    # teacher-forced decoder ------------------------------------------------------

    def decode_features(self, enc, tgt_in):
        """``(B, T, H)`` attentional features for decoder inputs ``tgt_in``."""
        x = self.tgt_embed(tgt_in)
        for cell, state in zip(self.dec_cells, self.initial_state(enc)):
            x, _ = cell.run(x, state=state)
        ctx, _ = dot_attention(x, enc.annotations, enc.annotations, enc.mask)
        return N.tanh(self.att_combine(N.concat([x, ctx], axis=-1)))

    def forward(self, src, src_mask, tgt_in):
        """Teacher-forced ``(B, T, V)`` logits."""
        enc = self.encode(src, src_mask)
        return self.out(self.decode_features(enc, tgt_in))

    # incremental decoder ---------------------------------------------------------

    def start_state(self, enc):
        with N.no_grad():
            init = self.initial_state(enc)
        B = enc.mask.shape[0]
        return DecoderState(
            [h.data for h, _ in init], [c.data for _, c in init], np.arange(B), np.full(B, BOS)
        )

    def step_features(self, state, prev, enc):
        """One decoder step for every hypothesis; returns ``(features, state')``."""
        prev = np.atleast_1d(np.asarray(prev, dtype=np.int64))
        if prev.size and (prev.min() < 0 or prev.max() >= self.tgt_vocab_size):
            raise IndexError("token id out of range")
        with N.no_grad():
            x = self.tgt_embed(prev)
            hs, cs = [], []
            for cell, h, c in zip(self.dec_cells, state.h, state.c):
                h2, c2 = cell.step(x, (N.Tensor(h), N.Tensor(c)))
                hs.append(h2.data)
                cs.append(c2.data)
                x = h2
            ann = enc.annotations.data[state.rows]
            ctx, _ = dot_attention(x.reshape(x.shape[0], 1, -1), ann, ann, enc.mask[state.rows])
            ctx = ctx.reshape(x.shape[0], -1)
            feat = N.tanh(self.att_combine(N.concat([x, ctx], axis=-1)))
        return feat.data, DecoderState(hs, cs, state.rows, prev, ctx.data)

    def decoder_step(self, state, prev, enc):
        """Raw logits ``(K, V)`` for the next token, and the new state."""
        feat, new = self.step_features(state, prev, enc)
        with N.no_grad():
            logits = self.out(N.Tensor(feat)).data
        return logits, new
