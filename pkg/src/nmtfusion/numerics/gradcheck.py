"""Central finite-difference gradient checking."""

import numpy as np

from .tensor import no_grad


def relative_error(analytic, numeric, floor=1e-6):
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(loss_fn, param, h=1e-5, coords=None):
    """Central differences of ``loss_fn()`` w.r.t. entries of ``param.data``.

    Only ``coords`` (flat indices) are perturbed when given. Returns a flat
    array aligned with ``coords``.
    """
    flat_idx = np.arange(param.data.size) if coords is None else np.asarray(coords)
    out = np.empty(len(flat_idx))
    base = param.data
    with no_grad():
        for k, i in enumerate(flat_idx):
            plus = base.copy()
            plus.flat[i] += h
            param.data = plus
            fp = float(loss_fn().data)
            minus = base.copy()
            minus.flat[i] -= h
            param.data = minus
            fm = float(loss_fn().data)
            out[k] = (fp - fm) / (2.0 * h)
    param.data = base
    return out


def check_gradients(loss_fn, params, h=1e-5, max_coords=None, rng=None):
    """Compare autodiff gradients with central differences.

    ``params`` maps names to leaf tensors. Returns ``{name: relative error}``.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for name, p in params.items()}
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name, p in params.items():
        coords = None
        if max_coords is not None and p.data.size > max_coords:
            coords = np.sort(rng.choice(p.data.size, size=max_coords, replace=False))
        num = numeric_grad(loss_fn, p, h=h, coords=coords)
        ana = analytic[name].reshape(-1) if coords is None else analytic[name].reshape(-1)[coords]
        errors[name] = relative_error(ana, num)
    return errors
