"""Numba jit kernel implementations.

Each function mirrors its twin in ``numpy_impl`` exactly (same
signatures, same tie-breaking), only the execution strategy differs:
fused explicit loops instead of im2col buffers.  Loops keep the channel
axis innermost so the compiler can vectorize over contiguous memory.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def conv3d_fwd(xp, w, stride_t, stride_s):
    kt, kh, kw, ci, co = w.shape
    b, tp, hp, wp, _ = xp.shape
    to = (tp - kt) // stride_t + 1
    ho = (hp - kh) // stride_s + 1
    wo = (wp - kw) // stride_s + 1
    out = np.zeros((b, to, ho, wo, co), dtype=xp.dtype)
    for n in range(b):
        for ot in range(to):
            t0 = ot * stride_t
            for oh in range(ho):
                h0 = oh * stride_s
                for ow in range(wo):
                    w0 = ow * stride_s
                    acc = out[n, ot, oh, ow]
                    for dt in range(kt):
                        for dh in range(kh):
                            for dw in range(kw):
                                xv = xp[n, t0 + dt, h0 + dh, w0 + dw]
                                wk = w[dt, dh, dw]
                                for c in range(ci):
                                    v = xv[c]
                                    for o in range(co):
                                        acc[o] += v * wk[c, o]
    return out


@numba.njit(cache=True)
def conv3d_bwd(xp, w, gout, stride_t, stride_s):
    kt, kh, kw, ci, co = w.shape
    b, to, ho, wo, _ = gout.shape
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for n in range(b):
        for ot in range(to):
            t0 = ot * stride_t
            for oh in range(ho):
                h0 = oh * stride_s
                for ow in range(wo):
                    w0 = ow * stride_s
                    g = gout[n, ot, oh, ow]
                    for dt in range(kt):
                        for dh in range(kh):
                            for dw in range(kw):
                                xv = xp[n, t0 + dt, h0 + dh, w0 + dw]
                                gx = gxp[n, t0 + dt, h0 + dh, w0 + dw]
                                wk = w[dt, dh, dw]
                                gk = gw[dt, dh, dw]
                                for c in range(ci):
                                    v = xv[c]
                                    acc = 0.0
                                    for o in range(co):
                                        go = g[o]
                                        acc += go * wk[c, o]
                                        gk[c, o] += v * go
                                    gx[c] += acc
    return gxp, gw


@numba.njit(cache=True)
def pool_max_fwd(x2):
    rows, window = x2.shape
    vals = np.empty(rows, dtype=x2.dtype)
    idx = np.empty(rows, dtype=np.int64)
    for r in range(rows):
        best = x2[r, 0]
        at = 0
        for c in range(1, window):
            v = x2[r, c]
            if v > best:
                best = v
                at = c
        vals[r] = best
        idx[r] = at
    return vals, idx


@numba.njit(cache=True)
def pool_max_bwd(gout, idx, window):
    rows = gout.shape[0]
    gx = np.zeros((rows, window), dtype=gout.dtype)
    for r in range(rows):
        gx[r, idx[r]] = gout[r]
    return gx
