"""Dense float64 tensors with tape-free reverse-mode autodiff.

Every op that touches a tensor with ``requires_grad`` records its parents and
a backward closure. :meth:`Tensor.backward` collects the reachable graph and
runs the closures in reverse creation order, which is a valid reverse
topological order because a node is always created after its inputs.
"""

import contextlib
import itertools

import numpy as np

from . import kernels

_grad_enabled = True
_check_finite = True
_ids = itertools.count()


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op):
        super().__init__(f"non-finite value produced by op '{op}'")
        self.op = op


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


def set_check_finite(flag):
    """Toggle the per-op NaN/Inf check. Returns the previous setting."""
    global _check_finite
    prev = _check_finite
    _check_finite = bool(flag)
    return prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward", "_id")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._id = next(_ids)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return mul(tsum(self, axis=axis), 1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _reachable(self)
        pending = {self._id: np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = pending.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(parent._id)
                pending[parent._id] = pg if prev is None else prev + pg


def _reachable(root):
    seen = {root._id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node._parents:
            if p.requires_grad and p._id not in seen:
                seen[p._id] = p
                stack.append(p)
    return sorted(seen.values(), key=lambda n: n._id, reverse=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward, op):
    if _check_finite and not np.isfinite(data).all():
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out._id = next(_ids)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), backward, "mul")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    x = as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _result(out, (x,), lambda g: (g / xd,), "log")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x):
    x = as_tensor(x)
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def logaddexp(a, b):
    """Elementwise log(exp(a) + exp(b))."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.logaddexp(a.data, b.data)
    wa = np.exp(a.data - out)
    wb = np.exp(b.data - out)
    sa, sb = a.shape, b.shape
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * wa, sa), _unbroadcast(g * wb, sb)),
        "logaddexp",
    )


# reductions and shape --------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(out, (x,), backward, "sum")


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(x):
    """Swap the last two axes."""
    x = as_tensor(x)
    return _result(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "swap_last")


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x, idx):
    x = as_tensor(x)
    shape = x.shape
    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    out = x.data[idx]
    return _result(np.array(out) if not basic else out, (x,), backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
        "concat",
    )


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward, "stack")


def embedding(weight, ids):
    """Row lookup ``weight[ids]`` for an integer array ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = weight.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _result(weight.data[ids], (weight,), backward, "embedding")


# linear algebra ---------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                k = ad.shape[-1]
                gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), backward, "matmul")


# normalisation -----------------------------------------------------------------

def log_softmax(x):
    """Log-softmax over the last axis."""
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise ValueError("log_softmax of an empty vector")
    shape = x.shape
    flat = x.data.reshape(-1, shape[-1])
    out = kernels.log_softmax_forward(flat)

    def backward(g):
        return (kernels.log_softmax_backward(g.reshape(-1, shape[-1]), out).reshape(shape),)

    return _result(out.reshape(shape), (x,), backward, "log_softmax")


def softmax(x):
    """Softmax over the last axis, computed with max subtraction."""
    x = as_tensor(x)
    if x.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


# recurrent cell -----------------------------------------------------------------

def lstm_cell(gates, c_prev, h_prev, mask=None):
    """Fused LSTM pointwise update.

    ``gates`` is the ``(B, 4H)`` pre-activation. Returns a ``(B, 2H)`` tensor
    holding ``[h, c]``; rows with ``mask == 0`` carry the previous state.
    """
    gates, c_prev, h_prev = as_tensor(gates), as_tensor(c_prev), as_tensor(h_prev)
    B, H = c_prev.shape
    if gates.shape != (B, 4 * H) or h_prev.shape != (B, H):
        raise ValueError(
            f"lstm_cell shape mismatch: gates {gates.shape}, c {c_prev.shape}, h {h_prev.shape}"
        )
    m = np.ones(B) if mask is None else np.asarray(mask, dtype=np.float64)
    h, c, acts, tc = kernels.lstm_forward(gates.data, c_prev.data, h_prev.data, m)
    cpd = c_prev.data

    def backward(g):
        dgates, dc_prev, dh_prev = kernels.lstm_backward(g[:, :H], g[:, H:], acts, tc, cpd, m)
        return dgates, dc_prev, dh_prev

    return _result(np.concatenate([h, c], axis=1), (gates, c_prev, h_prev), backward, "lstm_cell")


def lstm_sequence(proj, w_hh, h0, c0, mask=None, reverse=False):
    """A whole LSTM layer as one graph node.

    ``proj`` is the ``(B, L, 4H)`` input projection (bias included), ``w_hh``
    the ``(H, 4H)`` recurrent weight. Returns ``(B, L, 2H)`` holding ``[h, c]``
    after each step, in time order. Masked steps carry the state, so the final
    state sits at the last processed position. The recurrent weight gradient
    is one matmul over all steps instead of one per step.
    """
    proj, w_hh, h0, c0 = as_tensor(proj), as_tensor(w_hh), as_tensor(h0), as_tensor(c0)
    B, L, G = proj.shape
    H = w_hh.shape[0]
    if G != 4 * H or w_hh.shape != (H, 4 * H) or h0.shape != (B, H) or c0.shape != (B, H):
        raise ValueError(
            f"lstm_sequence shape mismatch: proj {proj.shape}, w_hh {w_hh.shape}, h0 {h0.shape}, c0 {c0.shape}"
        )
    m = np.ones((B, L)) if mask is None else np.asarray(mask, dtype=np.float64)
    # time-major buffers keep every per-step slice contiguous
    P = np.ascontiguousarray(proj.data.transpose(1, 0, 2))
    mT = np.ascontiguousarray(m.T)
    W = w_hh.data
    steps = list(range(L - 1, -1, -1)) if reverse else list(range(L))
    out = np.empty((L, B, 2 * H))
    acts = np.empty((L, B, 4 * H))
    tcs = np.empty((L, B, H))
    h_prev = np.empty((L, B, H))
    c_prev = np.empty((L, B, H))
    h, c = h0.data, c0.data
    for t in steps:
        h_prev[t] = h
        c_prev[t] = c
        h, c, acts[t], tcs[t] = kernels.lstm_forward(P[t] + h @ W, c, h, mT[t])
        out[t, :, :H] = h
        out[t, :, H:] = c

    def backward(g):
        gT = g.transpose(1, 0, 2)
        dP = np.empty((L, B, 4 * H))
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        for t in reversed(steps):
            dg, dc, dh_carry = kernels.lstm_backward(
                gT[t, :, :H] + dh, gT[t, :, H:] + dc, acts[t], tcs[t], c_prev[t], mT[t]
            )
            dP[t] = dg
            dh = dh_carry + dg @ W.T
        dW = h_prev.reshape(-1, H).T @ dP.reshape(-1, 4 * H)
        return dP.transpose(1, 0, 2), dW, dh, dc

    return _result(out.transpose(1, 0, 2), (proj, w_hh, h0, c0), backward, "lstm_sequence")
