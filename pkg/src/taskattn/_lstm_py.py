"""Pure numpy LSTM recurrence; the fallback when the compiled core is absent."""

import numpy as np


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(X, W, U, b):
    T = X.shape[0]
    H = U.shape[1]
    pre = X @ W.T + b
    hs = np.zeros((T, H))
    cs = np.zeros((T, H))
    gates = np.empty((T, 4 * H))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        z = pre[t] + U @ h
        ifo = sigmoid(z[:3 * H])
        g = np.tanh(z[3 * H:])
        i, f, o = ifo[:H], ifo[H:2 * H], ifo[2 * H:]
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t, :3 * H] = ifo
        gates[t, 3 * H:] = g
        cs[t] = c
        hs[t] = h
    return hs, gates, cs


def lstm_backward(dH, X, W, U, hs, gates, cs):
    T = X.shape[0]
    H = U.shape[1]
    dpre = np.empty((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H:2 * H]
        o = gates[t, 2 * H:3 * H]
        g = gates[t, 3 * H:]
        tc = np.tanh(cs[t])
        c_prev = cs[t - 1] if t > 0 else np.zeros(H)
        dh = dH[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dpre[t]
        dz[:H] = dc * g * i * (1.0 - i)
        dz[H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = U.T @ dz
    dW = dpre.T @ X
    db = dpre.sum(axis=0)
    dU = dpre[1:].T @ hs[:-1] if T > 1 else np.zeros_like(U)
    dX = dpre @ W
    return dX, dW, dU, db
