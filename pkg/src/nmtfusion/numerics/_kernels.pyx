# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the fused kernels in ``_kernels_py``.

Same signatures and gate layout; all arrays are C-contiguous float64.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, log

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    # branch-free so the loops vectorize; exp overflow gives 1/inf = 0
    return 1.0 / (1.0 + exp(-x))


cdef inline double _tanh(double x) nogil:
    return 1.0 - 2.0 / (exp(2.0 * x) + 1.0)


def lstm_forward(double[:, ::1] gates, double[:, ::1] c_prev,
                 double[:, ::1] h_prev, double[::1] mask):
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    h_arr = np.empty((B, H), dtype=np.float64)
    c_arr = np.empty((B, H), dtype=np.float64)
    acts_arr = np.empty((B, 4 * H), dtype=np.float64)
    tc_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] acts = acts_arr
    cdef double[:, ::1] tc = tc_arr
    cdef Py_ssize_t b, j
    cdef double i_g, f_g, g_g, o_g, cn, t, m
    with nogil:
        for b in range(B):
            m = mask[b]
            for j in range(H):
                i_g = _sigmoid(gates[b, j])
                f_g = _sigmoid(gates[b, H + j])
                g_g = _tanh(gates[b, 2 * H + j])
                o_g = _sigmoid(gates[b, 3 * H + j])
                acts[b, j] = i_g
                acts[b, H + j] = f_g
                acts[b, 2 * H + j] = g_g
                acts[b, 3 * H + j] = o_g
                cn = f_g * c_prev[b, j] + i_g * g_g
                t = _tanh(cn)
                tc[b, j] = t
                c[b, j] = m * cn + (1.0 - m) * c_prev[b, j]
                h[b, j] = m * (o_g * t) + (1.0 - m) * h_prev[b, j]
    return h_arr, c_arr, acts_arr, tc_arr


def lstm_backward(double[:, ::1] dh, double[:, ::1] dc, double[:, ::1] acts,
                  double[:, ::1] tanh_c, double[:, ::1] c_prev, double[::1] mask):
    cdef Py_ssize_t B = c_prev.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    dgates_arr = np.empty((B, 4 * H), dtype=np.float64)
    dcp_arr = np.empty((B, H), dtype=np.float64)
    dhp_arr = np.empty((B, H), dtype=np.float64)
    cdef double[:, ::1] dgates = dgates_arr
    cdef double[:, ::1] dcp = dcp_arr
    cdef double[:, ::1] dhp = dhp_arr
    cdef Py_ssize_t b, j
    cdef double i_g, f_g, g_g, o_g, t, m, dhn, dcn
    with nogil:
        for b in range(B):
            m = mask[b]
            for j in range(H):
                i_g = acts[b, j]
                f_g = acts[b, H + j]
                g_g = acts[b, 2 * H + j]
                o_g = acts[b, 3 * H + j]
                t = tanh_c[b, j]
                dhn = m * dh[b, j]
                dcn = m * dc[b, j] + dhn * o_g * (1.0 - t * t)
                dgates[b, j] = dcn * g_g * i_g * (1.0 - i_g)
                dgates[b, H + j] = dcn * c_prev[b, j] * f_g * (1.0 - f_g)
                dgates[b, 2 * H + j] = dcn * i_g * (1.0 - g_g * g_g)
                dgates[b, 3 * H + j] = dhn * t * o_g * (1.0 - o_g)
                dcp[b, j] = dcn * f_g + (1.0 - m) * dc[b, j]
                dhp[b, j] = (1.0 - m) * dh[b, j]
    return dgates_arr, dcp_arr, dhp_arr


def log_softmax_forward(double[:, ::1] x):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t V = x.shape[1]
    out_arr = np.empty((N, V), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, v
    cdef double mx, s, lse
    with nogil:
        for n in range(N):
            mx = x[n, 0]
            for v in range(1, V):
                if x[n, v] > mx:
                    mx = x[n, v]
            s = 0.0
            for v in range(V):
                s = s + exp(x[n, v] - mx)
            lse = log(s)
            for v in range(V):
                out[n, v] = (x[n, v] - mx) - lse
    return out_arr


def log_softmax_backward(double[:, ::1] g, double[:, ::1] out):
    cdef Py_ssize_t N = g.shape[0]
    cdef Py_ssize_t V = g.shape[1]
    dx_arr = np.empty((N, V), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef Py_ssize_t n, v
    cdef double s
    with nogil:
        for n in range(N):
            s = 0.0
            for v in range(V):
                s = s + g[n, v]
            for v in range(V):
                dx[n, v] = g[n, v] - exp(out[n, v]) * s
    return dx_arr
