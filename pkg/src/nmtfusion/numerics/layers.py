"""Neural layers built on :mod:`nmtfusion.numerics.tensor`."""

from collections import OrderedDict
from contextlib import contextmanager

import numpy as np

from . import tensor as T
from .tensor import Tensor

INIT_SCALE = 0.1
FORGET_BIAS = 1.0
# Weight matrices use uniform(-0.1, 0.1) at this fan-in and a range scaled by
# sqrt(reference / fan_in) elsewhere, so narrow desk-scale layers start with the
# pre-activation variance of a wide network. None gives plain uniform(-0.1, 0.1).
_init = {"reference_fan_in": 1000}


def init_range(fan_in=None):
    ref = _init["reference_fan_in"]
    if fan_in is None or ref is None:
        return INIT_SCALE
    return INIT_SCALE * float(np.sqrt(ref / fan_in))


@contextmanager
def init_reference(fan_in):
    """Temporarily change the reference fan-in (None: unscaled init)."""
    old = _init["reference_fan_in"]
    _init["reference_fan_in"] = fan_in
    try:
        yield
    finally:
        _init["reference_fan_in"] = old


def uniform_param(rng, shape, name=None, fan_in=None):
    a = init_range(fan_in)
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name=None):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class Module:
    """Parameter container.

    Parameters are the tensors stored as attributes, plus those of child
    modules (attributes or lists of modules), named by dotted attribute path
    in insertion order. Frozen parameters (``requires_grad=False``) are still
    listed so they round-trip through checkpoints.
    """

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for key, value in vars(self).items():
            if isinstance(value, Tensor):
                out[prefix + key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(prefix + key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def trainable_parameters(self):
        return OrderedDict((k, p) for k, p in self.named_parameters().items() if p.requires_grad)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state, strict=True):
        params = self.named_parameters()
        if strict and set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.weight = uniform_param(rng, (n_in, n_out), fan_in=n_in)
        self.bias = zeros_param((n_out,)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class Embedding(Module):
    def __init__(self, vocab_size, dim, rng):
        self.weight = uniform_param(rng, (vocab_size, dim))

    @property
    def vocab_size(self):
        return self.weight.shape[0]

    def __call__(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError(f"token id out of range for vocabulary of size {self.vocab_size}")
        return T.embedding(self.weight, ids)


class LSTMCell(Module):
    """Standard LSTM cell, gate order ``[i, f, g, o]``, forget bias 1."""

    def __init__(self, n_in, hidden, rng):
        self.hidden = hidden
        self.w_ih = uniform_param(rng, (n_in, 4 * hidden), fan_in=n_in)
        self.w_hh = uniform_param(rng, (hidden, 4 * hidden), fan_in=hidden)
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = FORGET_BIAS
        self.bias = Tensor(b, requires_grad=True)

    def zero_state(self, batch):
        z = Tensor(np.zeros((batch, self.hidden)))
        return z, z

    def step(self, x, state, mask=None, x_projected=False):
        """One step. ``x`` is the raw input, or ``x @ w_ih + bias`` if ``x_projected``."""
        h, c = state
        xp = x if x_projected else T.matmul(x, self.w_ih) + self.bias
        gates = xp + T.matmul(h, self.w_hh)
        hc = T.lstm_cell(gates, c, h, mask)
        H = self.hidden
        return hc[:, :H], hc[:, H:]

    def run(self, xs, mask=None, reverse=False, state=None):
        """Run over a ``(B, L, n_in)`` sequence as one fused graph node.

        Returns ``(outputs, final_state)`` with outputs a ``(B, L, H)`` tensor
        in time order. ``mask`` is ``(B, L)``; padded steps carry the state
        through.
        """
        B, L = xs.shape[0], xs.shape[1]
        proj = T.matmul(xs, self.w_ih) + self.bias
        h0, c0 = self.zero_state(B) if state is None else state
        hc = T.lstm_sequence(proj, self.w_hh, h0, c0, mask=mask, reverse=reverse)
        H = self.hidden
        last = 0 if reverse else L - 1
        return hc[:, :, :H], (hc[:, last, :H], hc[:, last, H:])


def lstm_step(state, x, cell, mask=None):
    """``(h, c), input -> (h', c')`` for one LSTM cell."""
    h, c = state
    if x.shape[-1] != cell.w_ih.shape[0] or h.shape[-1] != cell.hidden:
        raise ValueError(
            f"lstm_step shape mismatch: input {x.shape}, h {h.shape}, cell in={cell.w_ih.shape[0]} H={cell.hidden}"
        )
    return cell.step(x, (h, c), mask=mask)


def dot_attention(query, keys, values, mask=None):
    """Dot-product attention.

    ``query`` is ``(B, Tq, D)``, ``keys``/``values`` ``(B, S, D)``; ``mask``
    ``(B, S)`` marks valid source positions. Returns ``(context, weights)``.
    """
    query, keys, values = T.as_tensor(query), T.as_tensor(keys), T.as_tensor(values)
    if keys.shape[1] == 0:
        raise ValueError("dot_attention needs at least one key")
    if query.shape[-1] != keys.shape[-1]:
        raise ValueError(f"query dim {query.shape[-1]} != key dim {keys.shape[-1]}")
    if keys.shape[:2] != values.shape[:2]:
        raise ValueError("keys and values are not aligned")
    scores = T.matmul(query, T.swap_last(keys))
    if mask is not None:
        bias = (1.0 - np.asarray(mask, dtype=np.float64))[:, None, :] * -1e9
        scores = scores + bias
    weights = T.softmax(scores)
    return T.matmul(weights, values), weights


def attend(query, keys, values):
    """Single-query attention over lists of vectors, ``(D,)`` each."""
    if len(keys) == 0:
        raise ValueError("dot_attention needs at least one key")
    if len(keys) != len(values):
        raise ValueError("keys and values are not aligned")
    K = T.stack([T.as_tensor(k) for k in keys], axis=0)
    V = T.stack([T.as_tensor(v) for v in values], axis=0)
    q = T.as_tensor(query).reshape(1, 1, -1)
    ctx, w = dot_attention(q, K.reshape(1, *K.shape), V.reshape(1, *V.shape))
    return ctx.reshape(-1), w.reshape(-1)
