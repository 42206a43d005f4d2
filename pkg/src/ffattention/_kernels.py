"""Fused per-time-step loops over (B, T, D) for the hidden layer and pooling.

Reductions over time run in ascending t and over the batch in ascending b.
All kernels release the GIL so batch chunks can run on threads.
"""
import math
import numpy as np
from numba import njit
SLOPE = 0.01

@njit(cache=True, nogil=True)
def pool_forward(X, W_xh, b_xh, w_hc, b_hc, attention, H, E, Alpha, C):
    B, T, _ = X.shape
    D = W_xh.shape[0]
    w0 = W_xh[:, 0].copy()
    w1 = W_xh[:, 1].copy()
    for b in range(B):
        for t in range(T):
            x0 = X[b, t, 0]
            x1 = X[b, t, 1]
            row = H[b, t]
            for d in range(D):
                z = x0 * w0[d] + x1 * w1[d] + b_xh[d]
                row[d] = max(z, SLOPE * z)
            if attention:
                acc = 0.0
                for d in range(D):
                    acc += w_hc[d] * row[d]
                E[b, t] = math.tanh(acc + b_hc)
            else:
                E[b, t] = 0.0
        if attention:
            top = E[b, 0]
            for t in range(1, T):
                if E[b, t] > top:
                    top = E[b, t]
            total = 0.0
            for t in range(T):
                Alpha[b, t] = math.exp(E[b, t] - top)
                total += Alpha[b, t]
            for t in range(T):
                Alpha[b, t] /= total
        else:
            for t in range(T):
                Alpha[b, t] = 1.0 / T
        c = C[b]
        c[:] = 0.0
        if attention:
            for t in range(T):
                a = Alpha[b, t]
                row = H[b, t]
                for d in range(D):
                    c[d] += a * row[d]
        else:
            for t in range(T):
                row = H[b, t]
                for d in range(D):
                    c[d] += row[d]
            for d in range(D):
                c[d] /= T


@njit(cache=True, nogil=True)
def pool_backward(X, H, E, Alpha, dC, w_hc, attention, gW_xh, gb_xh, gw_hc):
    """Accumulate grads of W_xh, b_xh, w_hc into the given arrays; return grad of b_hc."""
    B, T, _ = X.shape
    D = H.shape[2]
    dAlpha = np.empty(T)
    g0 = np.zeros(D)
    g1 = np.zeros(D)
    gb_hc = 0.0
    for b in range(B):
        dc = dC[b]
        weighted = 0.0
        if attention:
            for t in range(T):
                row = H[b, t]
                acc = 0.0
                for d in range(D):
                    acc += row[d] * dc[d]
                dAlpha[t] = acc
                weighted += Alpha[b, t] * acc
        for t in range(T):
            a = Alpha[b, t]
            row = H[b, t]
            dz_e = 0.0
            if attention:
                e = E[b, t]
                dz_e = a * (dAlpha[t] - weighted) * (1.0 - e * e)
                gb_hc += dz_e
                for d in range(D):
                    gw_hc[d] += dz_e * row[d]
            x0 = X[b, t, 0]
            x1 = X[b, t, 1]
            for d in range(D):
                dh = a * dc[d] + dz_e * w_hc[d]
                dh = dh if row[d] >= 0.0 else SLOPE * dh
                g0[d] += dh * x0
                g1[d] += dh * x1
                gb_xh[d] += dh
    gW_xh[:, 0] += g0
    gW_xh[:, 1] += g1
    return gb_hc
