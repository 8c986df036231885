"""Compiled per-pixel spline kernels for the KAN hot path.

Loops run in a fixed order, so results are deterministic.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def local_basis(x, knots, k):
    """Span start, non-zero basis values and their derivatives for a (N, D) input."""
    n, d = x.shape
    n_basis = knots.shape[0] - k - 1
    first = np.empty((n, d), np.int64)
    vals = np.zeros((n, d, k + 1))
    ders = np.zeros((n, d, k + 1))
    left = np.empty(k + 1)
    right = np.empty(k + 1)
    cur = np.empty(k + 1)
    low = np.empty(k + 1)
    lo_edge = knots[0]
    hi_edge = knots[knots.shape[0] - 1]
    for i in range(n):
        for j in range(d):
            xv = x[i, j]
            outside = xv < lo_edge or xv > hi_edge
            if xv < lo_edge:
                xv = lo_edge
            elif xv > hi_edge:
                xv = hi_edge
            span = k
            while span < n_basis - 1 and knots[span + 1] <= xv:
                span += 1
            cur[0] = 1.0
            for q in range(k + 1):
                low[q] = 0.0
            for jj in range(1, k + 1):
                if jj == k:
                    for q in range(k):
                        low[q] = cur[q]
                left[jj] = xv - knots[span + 1 - jj]
                right[jj] = knots[span + jj] - xv
                saved = 0.0
                for r in range(jj):
                    den = right[r + 1] + left[jj - r]
                    temp = cur[r] / den if den > 0 else 0.0
                    cur[r] = saved + right[r + 1] * temp
                    saved = left[jj - r] * temp
                cur[jj] = saved
            if k == 0:
                low[0] = 0.0
            f = span - k
            first[i, j] = f
            for r in range(k + 1):
                vals[i, j, r] = cur[r]
                if outside or k == 0:
                    continue
                a = f + r
                dv = 0.0
                if r >= 1:
                    den = knots[a + k] - knots[a]
                    if den > 0:
                        dv += k * low[r - 1] / den
                if r <= k - 1:
                    den = knots[a + k + 1] - knots[a + 1]
                    if den > 0:
                        dv -= k * low[r] / den
                ders[i, j, r] = dv
    return first, vals, ders


@njit(cache=True)
def forward(x, first, vals, coeffs, bypass, bias):
    n, d = x.shape
    m = vals.shape[2]
    out = np.empty((n, 3))
    for i in range(n):
        for q in range(3):
            acc = bias[q]
            for j in range(d):
                acc += bypass[q, j] * x[i, j]
                f = first[i, j]
                for r in range(m):
                    acc += coeffs[q, j, f + r] * vals[i, j, r]
            out[i, q] = acc
    return out


@njit(cache=True)
def backward(x, first, vals, ders, g, coeffs, bypass):
    n, d = x.shape
    m = vals.shape[2]
    d_coeffs = np.zeros(coeffs.shape)
    d_bypass = np.zeros(bypass.shape)
    d_bias = np.zeros(3)
    d_x = np.zeros((n, d))
    for i in range(n):
        for q in range(3):
            gq = g[i, q]
            if gq == 0.0:
                continue
            d_bias[q] += gq
            for j in range(d):
                d_bypass[q, j] += gq * x[i, j]
                acc = bypass[q, j]
                f = first[i, j]
                for r in range(m):
                    d_coeffs[q, j, f + r] += gq * vals[i, j, r]
                    acc += coeffs[q, j, f + r] * ders[i, j, r]
                d_x[i, j] += gq * acc
    return d_coeffs, d_bypass, d_bias, d_x
