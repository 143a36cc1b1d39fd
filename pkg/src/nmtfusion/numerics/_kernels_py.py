"""Pure numpy implementations of the fused kernels.

Gate layout for the LSTM kernels is ``[input, forget, candidate, output]``
along the last axis of the ``(B, 4H)`` pre-activation matrix.
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(gates, c_prev, h_prev, mask):
    """Fused LSTM pointwise step.

    Returns ``(h, c, acts, tanh_c)`` where ``acts`` holds the activated gates
    needed by :func:`lstm_backward`. Rows with ``mask == 0`` copy the previous
    state through unchanged.
    """
    H = c_prev.shape[1]
    acts = np.empty_like(gates)
    acts[:, : 2 * H] = _sigmoid(gates[:, : 2 * H])
    acts[:, 2 * H : 3 * H] = np.tanh(gates[:, 2 * H : 3 * H])
    acts[:, 3 * H :] = _sigmoid(gates[:, 3 * H :])
    i = acts[:, :H]
    f = acts[:, H : 2 * H]
    g = acts[:, 2 * H : 3 * H]
    o = acts[:, 3 * H :]
    c_new = f * c_prev + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    m = mask[:, None]
    c = m * c_new + (1.0 - m) * c_prev
    h = m * h_new + (1.0 - m) * h_prev
    return h, c, acts, tanh_c


def lstm_backward(dh, dc, acts, tanh_c, c_prev, mask):
    """Backward of :func:`lstm_forward`.

    Returns ``(dgates, dc_prev, dh_prev)``.
    """
    H = c_prev.shape[1]
    m = mask[:, None]
    i = acts[:, :H]
    f = acts[:, H : 2 * H]
    g = acts[:, 2 * H : 3 * H]
    o = acts[:, 3 * H :]
    dh_new = m * dh
    dc_new = m * dc + dh_new * o * (1.0 - tanh_c * tanh_c)
    dgates = np.empty_like(acts)
    dgates[:, :H] = dc_new * g * i * (1.0 - i)
    dgates[:, H : 2 * H] = dc_new * c_prev * f * (1.0 - f)
    dgates[:, 2 * H : 3 * H] = dc_new * i * (1.0 - g * g)
    dgates[:, 3 * H :] = dh_new * tanh_c * o * (1.0 - o)
    dc_prev = dc_new * f + (1.0 - m) * dc
    dh_prev = (1.0 - m) * dh
    return dgates, dc_prev, dh_prev


def log_softmax_forward(x):
    """Row-wise log-softmax of a 2-D array with max subtraction."""
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_backward(g, out):
    return g - np.exp(out) * g.sum(axis=1, keepdims=True)
