"""Combining translation-model logits with fixed language-model log-probs.

The combination functions accept numpy arrays (returning arrays) or tensors
(returning tensors, so they can sit inside a training graph). All
log-probabilities are natural-log.

Strategies:

``baseline``  log softmax(S)
``shallow``   log softmax(S) + lam * log P_LM   (decode-time only)
``prenorm``   log softmax(S + log P_LM)
``postnorm``  log softmax(S) + log P_LM, renormalized by default
``cold``      gated LM features feeding a new output layer
"""

from dataclasses import dataclass, field

import numpy as np

from . import numerics as N
from .corpus.vocab import BOS, PAD
from .numerics.layers import Linear, Module

STRATEGIES = ("baseline", "shallow", "cold", "prenorm", "postnorm")
LAMBDA_GRID = tuple(round(0.05 * i, 2) for i in range(11))


@dataclass
class FusionConfig:
    strategy: str = "baseline"
    lam: float = 0.0
    postnorm_renormalize: bool = True
    lm_paths: list = field(default_factory=list)
    mixture_mode: bool = False

    def validate(self, n_lms=None):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown fusion strategy {self.strategy!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        n = len(self.lm_paths) if n_lms is None else n_lms
        if self.strategy == "cold" and n != 1:
            raise ValueError("cold fusion needs exactly one LM")
        if self.strategy in ("prenorm", "postnorm") and n not in (1, 2):
            raise ValueError(f"{self.strategy} needs one or two LMs")
        if self.strategy == "shallow" and n not in (0, 1):
            raise ValueError("shallow fusion takes one LM")
        if self.mixture_mode and self.strategy != "postnorm":
            raise ValueError("mixture_mode applies to postnorm only")
        return self

    @property
    def uses_lm_in_training(self):
        return self.strategy in ("cold", "prenorm", "postnorm")

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "lam": self.lam,
            "postnorm_renormalize": self.postnorm_renormalize,
            "lm_paths": list(self.lm_paths),
            "mixture_mode": self.mixture_mode,
        }


def _wrap(*xs):
    arrays = not any(isinstance(x, N.Tensor) for x in xs)
    return arrays, [N.as_tensor(x) for x in xs]


def _unwrap(arrays, t):
    return t.data if arrays else t


def _check_lengths(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def log_softmax(x):
    if isinstance(x, N.Tensor):
        return N.log_softmax(x)
    # plain arrays may carry -inf (banned or impossible tokens)
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def combine_prenorm(S, lm_logp):
    """``log softmax(S + log P_LM)``."""
    arrays, (s, l) = _wrap(S, lm_logp)
    _check_lengths(s, l)
    return _unwrap(arrays, N.log_softmax(s + l))


def combine_postnorm(S, lm_logp, renormalize=True):
    """``log softmax(S) + log P_LM``, optionally renormalized.

    The literal (unnormalized) form sums to at most one in probability space.
    """
    arrays, (s, l) = _wrap(S, lm_logp)
    _check_lengths(s, l)
    out = N.log_softmax(s) + l
    if renormalize:
        out = N.log_softmax(out)
    return _unwrap(arrays, out)


def combine_mixture(S, lm_logp, weight=0.5):
    """``log(w softmax(S) + (1 - w) P_LM)``: probability-space interpolation."""
    arrays, (s, l) = _wrap(S, lm_logp)
    _check_lengths(s, l)
    out = N.logaddexp(N.log_softmax(s) + np.log(weight), l + np.log(1.0 - weight))
    return _unwrap(arrays, out)


def shallow_fusion_score(tm_logp, lm_logp, lam):
    """Decoding score ``log P_TM + lam * log P_LM`` (not normalized)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    arrays, (t, l) = _wrap(tm_logp, lm_logp)
    _check_lengths(t, l)
    if lam == 0:
        return _unwrap(arrays, t)
    return _unwrap(arrays, t + l * lam)


def sum_lm_logprobs(lm_logp_list):
    if len(lm_logp_list) == 0:
        raise ValueError("need at least one LM")
    arrays, ts = _wrap(*lm_logp_list)
    total = ts[0]
    for t in ts[1:]:
        _check_lengths(total, t)
        total = total + t
    return _unwrap(arrays, total)


def combine_multi_lm(S, lm_logp_list, strategy="postnorm", renormalize=True):
    """PreNorm/PostNorm with the summed LM log-probs of one or two LMs."""
    if len(lm_logp_list) == 0:
        raise ValueError("combine_multi_lm needs at least one LM")
    total = sum_lm_logprobs(lm_logp_list)
    if strategy == "prenorm":
        return combine_prenorm(S, total)
    if strategy == "postnorm":
        return combine_postnorm(S, total, renormalize)
    raise ValueError(f"multi-LM combination supports prenorm/postnorm, not {strategy!r}")


class ColdFusion(Module):
    """Gated LM features joined to the decoder feature before the output layer.

    ``lm_feat = W_lm lm + b``; ``gate = sigmoid(W_g [s; lm_feat] + b_g)``;
    output ``log softmax(W_o [s; gate * lm_feat] + b_o)``.
    """

    def __init__(self, feature_dim, vocab_size, lm_feature_dim=None, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        F = lm_feature_dim or feature_dim
        self.feature_dim, self.vocab_size, self.lm_feature_dim = feature_dim, vocab_size, F
        self.lm_proj = Linear(vocab_size, F, rng)
        self.gate = Linear(feature_dim + F, F, rng)
        self.out = Linear(feature_dim + F, vocab_size, rng)

    def descriptor(self):
        return {"feature_dim": self.feature_dim, "vocab_size": self.vocab_size, "lm_feature_dim": self.lm_feature_dim}

    def __call__(self, features, lm_logits, gate_override=None):
        features, lm_logits = N.as_tensor(features), N.as_tensor(lm_logits)
        if features.shape[-1] != self.feature_dim or lm_logits.shape[-1] != self.vocab_size:
            raise ValueError(
                f"cold fusion shape mismatch: features {features.shape}, lm {lm_logits.shape}"
            )
        lm_feat = self.lm_proj(lm_logits)
        if gate_override is None:
            g = N.sigmoid(self.gate(N.concat([features, lm_feat], axis=-1)))
        else:
            g = N.Tensor(np.full(lm_feat.shape, float(gate_override)))
        joined = N.concat([features, g * lm_feat], axis=-1)
        return N.log_softmax(self.out(joined))


def cold_fusion_step(features, lm_logits, params, gate_override=None):
    arrays, (f, l) = _wrap(features, lm_logits)
    return _unwrap(arrays, params(f, l, gate_override=gate_override))


class FusedTranslator:
    """A translation model plus the fixed LM(s) and fusion strategy it trains under."""

    def __init__(self, tm, config, lms=(), cold=None, rng=None):
        self.tm = tm
        self.config = config
        self.lms = list(lms)
        config.validate(len(self.lms))
        for lm in self.lms:
            lm.freeze()
        if config.strategy == "cold" and cold is None:
            cold = ColdFusion(tm.hidden, tm.tgt_vocab_size, rng=rng if rng is not None else np.random.default_rng(0))
        self.cold = cold if config.strategy == "cold" else None
        if self.lms and any(lm.vocab_size != tm.tgt_vocab_size for lm in self.lms):
            raise ValueError("LM and TM target vocabularies differ")

    def named_parameters(self):
        params = dict(self.tm.named_parameters())
        if self.cold is not None:
            params.update({"cold." + k: v for k, v in self.cold.named_parameters().items()})
        return params

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state):
        tm_state = {k: v for k, v in state.items() if not k.startswith("cold.")}
        self.tm.load_state_dict(tm_state)
        if self.cold is not None:
            self.cold.load_state_dict({k[5:]: v for k, v in state.items() if k.startswith("cold.")})

    def lm_logprobs(self, tgt_in):
        """Summed teacher-forced LM log-probs, outside any gradient graph."""
        with N.no_grad():
            total = None
            for lm in self.lms:
                lp = lm.sequence_logprobs(tgt_in).data
                total = lp if total is None else total + lp
        return total

    def train_logprobs(self, src, src_mask, tgt_in):
        """``(B, T, V)`` log-scores the training loss is computed from."""
        enc = self.tm.encode(src, src_mask)
        feats = self.tm.decode_features(enc, tgt_in)
        strategy = self.config.strategy
        if strategy in ("baseline", "shallow") or not self.lms:
            return N.log_softmax(self.tm.out(feats))
        lm = self.lm_logprobs(tgt_in)
        if strategy == "cold":
            return self.cold(feats, lm)
        S = self.tm.out(feats)
        if strategy == "prenorm":
            return combine_prenorm(S, N.Tensor(lm))
        if self.config.mixture_mode:
            return combine_mixture(S, N.Tensor(lm))
        return combine_postnorm(S, N.Tensor(lm), self.config.postnorm_renormalize)

    def scorer(self, strategy=None, lam=None, use_lms=True):
        """Incremental decoding scorer; ``strategy``/``lam`` override the config."""
        return FusionScorer(
            self,
            strategy or self.config.strategy,
            self.config.lam if lam is None else lam,
            use_lms=use_lms,
        )

    def tm_only_scorer(self):
        """The translation model's own softmax(S), ignoring any LM."""
        return FusionScorer(self, "baseline", 0.0, use_lms=False)


@dataclass
class FusionState:
    dec: object
    lm_states: list
    enc: object

    def select(self, idx):
        return FusionState(self.dec.select(idx), [s.select(np.asarray(idx)) for s in self.lm_states], self.enc)


class FusionScorer:
    """Per-step scores over the target vocabulary for beam search.

    ``start(sources)`` encodes one or more source sentences; each row of the
    returned state is one hypothesis.
    """

    def __init__(self, fused, strategy, lam=0.0, use_lms=True):
        self.fused = fused
        self.tm = fused.tm
        self.strategy = strategy
        self.lam = lam
        self.lms = fused.lms if use_lms else []
        self.vocab_size = fused.tm.tgt_vocab_size
        self.banned_tokens = (PAD, BOS)
        if strategy == "shallow" and lam > 0 and not self.lms:
            raise ValueError("shallow fusion with lambda > 0 needs an LM")
        if strategy in ("prenorm", "postnorm", "cold") and not self.lms:
            raise ValueError(f"{strategy} decoding needs its LM(s)")

    @property
    def normalized(self):
        """Whether step scores are log-distributions."""
        if self.strategy == "shallow":
            return self.lam == 0
        if self.strategy == "postnorm":
            cfg = self.fused.config
            return cfg.postnorm_renormalize or cfg.mixture_mode
        return True

    def start(self, sources):
        if len(sources) == 0 or any(len(s) == 0 for s in sources):
            raise ValueError("empty source")
        with N.no_grad():
            enc = self.tm.encode_batch(sources)
        dec = self.tm.start_state(enc)
        return FusionState(dec, [lm.start(len(sources)) for lm in self.lms], enc)

    def select(self, state, idx):
        return state.select(idx)

    def step(self, state, tokens):
        tokens = np.atleast_1d(np.asarray(tokens, dtype=np.int64))
        feat, dec = self.tm.step_features(state.dec, tokens, state.enc)
        lm_total, lm_states = None, []
        for lm, s in zip(self.lms, state.lm_states):
            lp, s2 = lm.step(s, tokens)
            lm_states.append(s2)
            lm_total = lp if lm_total is None else lm_total + lp
        new = FusionState(dec, lm_states, state.enc)
        strategy = self.strategy
        with N.no_grad():
            if strategy == "cold":
                return self.fused.cold(feat, lm_total).data, new
            S = self.tm.out(N.Tensor(feat)).data
        if strategy == "baseline" or lm_total is None:
            return log_softmax(S), new
        if strategy == "shallow":
            return shallow_fusion_score(log_softmax(S), lm_total, self.lam), new
        if strategy == "prenorm":
            return combine_prenorm(S, lm_total), new
        cfg = self.fused.config
        if cfg.mixture_mode:
            return combine_mixture(S, lm_total), new
        return combine_postnorm(S, lm_total, cfg.postnorm_renormalize), new


class LmScorer:
    """Wrap a language model as a source-ignoring scorer."""

    def __init__(self, lm):
        self.lm = lm
        self.vocab_size = lm.vocab_size
        self.normalized = True
        self.banned_tokens = (PAD, BOS)

    def start(self, sources):
        return self.lm.start(len(sources))

    def select(self, state, idx):
        return state.select(np.asarray(idx))

    def step(self, state, tokens):
        return self.lm.step(state, tokens)


__all__ = [
    "STRATEGIES",
    "LAMBDA_GRID",
    "FusionConfig",
    "ColdFusion",
    "FusedTranslator",
    "FusionScorer",
    "LmScorer",
    "combine_prenorm",
    "combine_postnorm",
    "combine_mixture",
    "combine_multi_lm",
    "shallow_fusion_score",
    "cold_fusion_step",
    "log_softmax",
]
