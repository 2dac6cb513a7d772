# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence. Same contract as ``taskattn._lstm_py``."""

import numpy as np
from libc.math cimport exp, tanh


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) nogil:
    # four partial sums let the compiler keep several multiply-adds in flight
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t k = 0
    while k + 4 <= n:
        s0 += a[k] * b[k]
        s1 += a[k + 1] * b[k + 1]
        s2 += a[k + 2] * b[k + 2]
        s3 += a[k + 3] * b[k + 3]
        k += 4
    while k < n:
        s0 += a[k] * b[k]
        k += 1
    return (s0 + s1) + (s2 + s3)


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def sigmoid(x):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    cdef double[::1] src = arr.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t k, n = src.shape[0]
    with nogil:
        for k in range(n):
            dst[k] = _sigmoid(src[k])
    return out


def lstm_forward(X, W, U, b):
    cdef Py_ssize_t T = X.shape[0]
    cdef Py_ssize_t H = U.shape[1]
    pre_arr = np.ascontiguousarray(X @ W.T + b)
    hs_arr = np.zeros((T, H))
    cs_arr = np.zeros((T, H))
    gates_arr = np.empty((T, 4 * H))
    cdef double[:, ::1] pre = pre_arr
    cdef double[:, ::1] Um = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[:, ::1] hs = hs_arr
    cdef double[:, ::1] cs = cs_arr
    cdef double[:, ::1] gates = gates_arr
    cdef double[::1] z = np.empty(4 * H)
    cdef Py_ssize_t t, r, k
    cdef double c_prev
    with nogil:
        for t in range(T):
            for r in range(4 * H):
                z[r] = pre[t, r]
                if t > 0:
                    z[r] += _dot(&Um[r, 0], &hs[t - 1, 0], H)
            for k in range(H):
                gates[t, k] = _sigmoid(z[k])
                gates[t, H + k] = _sigmoid(z[H + k])
                gates[t, 2 * H + k] = _sigmoid(z[2 * H + k])
                gates[t, 3 * H + k] = tanh(z[3 * H + k])
                c_prev = cs[t - 1, k] if t > 0 else 0.0
                cs[t, k] = gates[t, H + k] * c_prev + gates[t, k] * gates[t, 3 * H + k]
                hs[t, k] = gates[t, 2 * H + k] * tanh(cs[t, k])
    return hs_arr, gates_arr, cs_arr


def lstm_backward(dH, X, W, U, hs, gates, cs):
    cdef Py_ssize_t T = X.shape[0]
    cdef Py_ssize_t H = U.shape[1]
    dpre_arr = np.empty((T, 4 * H))
    cdef double[:, ::1] dpre = dpre_arr
    cdef double[:, ::1] dHm = np.ascontiguousarray(dH, dtype=np.float64)
    # rows of U^T are contiguous, which the dh recurrence reads
    cdef double[:, ::1] UT = np.ascontiguousarray(U.T, dtype=np.float64)
    cdef double[:, ::1] gm = np.ascontiguousarray(gates, dtype=np.float64)
    cdef double[:, ::1] cm = np.ascontiguousarray(cs, dtype=np.float64)
    cdef double[::1] dh_next = np.zeros(H)
    cdef double[::1] dc_next = np.zeros(H)
    cdef Py_ssize_t t, r, k
    cdef double i, f, o, g, tc, c_prev, dh, dc
    with nogil:
        for t in range(T - 1, -1, -1):
            for k in range(H):
                i = gm[t, k]
                f = gm[t, H + k]
                o = gm[t, 2 * H + k]
                g = gm[t, 3 * H + k]
                tc = tanh(cm[t, k])
                c_prev = cm[t - 1, k] if t > 0 else 0.0
                dh = dHm[t, k] + dh_next[k]
                dc = dc_next[k] + dh * o * (1.0 - tc * tc)
                dpre[t, k] = dc * g * i * (1.0 - i)
                dpre[t, H + k] = dc * c_prev * f * (1.0 - f)
                dpre[t, 2 * H + k] = dh * tc * o * (1.0 - o)
                dpre[t, 3 * H + k] = dc * i * (1.0 - g * g)
                dc_next[k] = dc * f
            for k in range(H):
                dh_next[k] = _dot(&UT[k, 0], &dpre[t, 0], 4 * H)
    dW = dpre_arr.T @ X
    db = dpre_arr.sum(axis=0)
    dU = dpre_arr[1:].T @ hs[:-1] if T > 1 else np.zeros_like(U)
    dX = dpre_arr @ W
    return dX, dW, dU, db
