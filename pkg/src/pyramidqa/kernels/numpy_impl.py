"""Pure numpy kernel implementations.

Convolution is expressed as im2col followed by one BLAS matmul; pooling
reduces a pre-blocked ``(rows, window)`` matrix with ``argmax`` so ties
resolve to the first flat index, matching the numba twin.
"""

from __future__ import annotations

import numpy as np


def _out_extent(padded: int, kernel: int, stride: int) -> int:
    return (padded - kernel) // stride + 1


def _im2col(xp: np.ndarray, kshape, stride_t: int, stride_s: int) -> np.ndarray:
    kt, kh, kw = kshape
    b, tp, hp, wp, ci = xp.shape
    to = _out_extent(tp, kt, stride_t)
    ho = _out_extent(hp, kh, stride_s)
    wo = _out_extent(wp, kw, stride_s)
    cols = np.empty((b, to, ho, wo, kt, kh, kw, ci), dtype=xp.dtype)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                cols[:, :, :, :, dt, dh, dw, :] = xp[
                    :,
                    dt : dt + to * stride_t : stride_t,
                    dh : dh + ho * stride_s : stride_s,
                    dw : dw + wo * stride_s : stride_s,
                    :,
                ]
    return cols


def conv3d_fwd(xp, w, stride_t, stride_s):
    """Convolve a padded input ``xp`` (B,T,H,W,Ci) with ``w`` (kt,kh,kw,Ci,Co)."""
    kt, kh, kw, ci, co = w.shape
    cols = _im2col(xp, (kt, kh, kw), stride_t, stride_s)
    b, to, ho, wo = cols.shape[:4]
    flat = cols.reshape(b * to * ho * wo, kt * kh * kw * ci)
    out = flat @ w.reshape(kt * kh * kw * ci, co)
    return out.reshape(b, to, ho, wo, co)


def conv3d_bwd(xp, w, gout, stride_t, stride_s):
    """Gradients w.r.t. the padded input and the kernel."""
    kt, kh, kw, ci, co = w.shape
    b, to, ho, wo, _ = gout.shape
    cols = _im2col(xp, (kt, kh, kw), stride_t, stride_s)
    k = kt * kh * kw * ci
    gmat = gout.reshape(b * to * ho * wo, co)
    gw = (cols.reshape(-1, k).T @ gmat).reshape(w.shape)
    gcols = (gmat @ w.reshape(k, co).T).reshape(b, to, ho, wo, kt, kh, kw, ci)
    gxp = np.zeros_like(xp)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                gxp[
                    :,
                    dt : dt + to * stride_t : stride_t,
                    dh : dh + ho * stride_s : stride_s,
                    dw : dw + wo * stride_s : stride_s,
                    :,
                ] += gcols[:, :, :, :, dt, dh, dw, :]
    return gxp, gw


def pool_max_fwd(x2):
    """Row-wise max of a (rows, window) matrix; ties keep the first index."""
    idx = np.argmax(x2, axis=1)
    vals = x2[np.arange(x2.shape[0]), idx]
    return vals, idx.astype(np.int64)


def pool_max_bwd(gout, idx, window):
    """Scatter row gradients back to the argmax positions."""
    rows = gout.shape[0]
    gx = np.zeros((rows, window), dtype=gout.dtype)
    gx[np.arange(rows), idx] = gout
    return gx
