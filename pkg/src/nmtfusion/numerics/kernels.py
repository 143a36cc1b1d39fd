"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback. Setting ``NMTFUSION_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("NMTFUSION_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[no-redef]
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "numpy") or the active one."""
    if name is None:
        name = BACKEND
    if name == "numpy":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def lstm_forward(gates, c_prev, h_prev, mask):
    if _compiled is None:
        return _kernels_py.lstm_forward(gates, c_prev, h_prev, mask)
    return _compiled.lstm_forward(_c(gates), _c(c_prev), _c(h_prev), _c(mask))


def lstm_backward(dh, dc, acts, tanh_c, c_prev, mask):
    if _compiled is None:
        return _kernels_py.lstm_backward(dh, dc, acts, tanh_c, c_prev, mask)
    return _compiled.lstm_backward(_c(dh), _c(dc), _c(acts), _c(tanh_c), _c(c_prev), _c(mask))


def log_softmax_forward(x):
    if _compiled is None:
        return _kernels_py.log_softmax_forward(x)
    return _compiled.log_softmax_forward(_c(x))


def log_softmax_backward(g, out):
    if _compiled is None:
        return _kernels_py.log_softmax_backward(g, out)
    return _compiled.log_softmax_backward(_c(g), _c(out))
