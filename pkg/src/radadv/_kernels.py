"""Numba-compiled inner loops for convolution, pooling, and matmul.

Every kernel parallelizes over units that own disjoint output slices and
accumulates in a fixed order, so results are bitwise identical regardless
of thread count or how samples are batched together.  That row-stability
is what lets the attack driver drop finished samples from a batch without
perturbing the survivors.

Importing this module is optional: :mod:`radadv.ops` falls back to pure
numpy when numba is unavailable or ``RADADV_DISABLE_NUMBA`` is set.
"""

from __future__ import annotations

import numpy as np
import numba
from numba import njit, prange

# The OpenMP layer tolerates concurrent entry from multiple Python
# threads, which the chunked attack driver relies on.
numba.config.THREADING_LAYER = "omp"

_OPTS = dict(parallel=True, fastmath=False, cache=True, nogil=True)


@njit(**_OPTS)
def conv_fwd(xp, w, bias, st, sh, sw, out):
    B, Cin, Tp, Hp, Wp = xp.shape
    Cout, Cg, kt, kh, kw = w.shape
    To, Ho, Wo = out.shape[2], out.shape[3], out.shape[4]
    og = Cout // (Cin // Cg)
    for bo in prange(B * Cout):
        b = bo // Cout
        o = bo % Cout
        c0 = (o // og) * Cg
        for t in range(To):
            for y in range(Ho):
                orow = out[b, o, t, y]
                for z in range(Wo):
                    orow[z] = bias[o]
                for c in range(Cg):
                    for i in range(kt):
                        for j in range(kh):
                            xrow = xp[b, c0 + c, t * st + i, y * sh + j]
                            for k in range(kw):
                                wv = w[o, c, i, j, k]
                                if sw == 1:
                                    for z in range(Wo):
                                        orow[z] += wv * xrow[z + k]
                                else:
                                    for z in range(Wo):
                                        orow[z] += wv * xrow[z * sw + k]


@njit(**_OPTS)
def conv_bwd_input(g, w, st, sh, sw, dxp):
    """Gradient w.r.t. the padded input (gather form, any stride)."""
    B, Cout, To, Ho, Wo = g.shape
    Cg, kt, kh, kw = w.shape[1], w.shape[2], w.shape[3], w.shape[4]
    Cin, Tp, Hp, Wp = dxp.shape[1], dxp.shape[2], dxp.shape[3], dxp.shape[4]
    og = Cout // (Cin // Cg)
    for bc in prange(B * Cin):
        b = bc // Cin
        c = bc % Cin
        o0 = (c // Cg) * og
        cg = c % Cg
        for tz in range(Tp):
            for yz in range(Hp):
                drow = dxp[b, c, tz, yz]
                for zz in range(Wp):
                    drow[zz] = 0.0
                for i in range(kt):
                    tq = tz - i
                    if tq < 0 or tq % st != 0:
                        continue
                    t = tq // st
                    if t >= To:
                        continue
                    for j in range(kh):
                        yq = yz - j
                        if yq < 0 or yq % sh != 0:
                            continue
                        y = yq // sh
                        if y >= Ho:
                            continue
                        for oo in range(og):
                            grow = g[b, o0 + oo, t, y]
                            for k in range(kw):
                                wv = w[o0 + oo, cg, i, j, k]
                                if sw == 1:
                                    lo = k
                                    hi = min(Wp, Wo + k)
                                    for zz in range(lo, hi):
                                        drow[zz] += wv * grow[zz - k]
                                else:
                                    for z in range(Wo):
                                        drow[z * sw + k] += wv * grow[z]


@njit(**_OPTS)
def conv_bwd_weight(g, xp, st, sh, sw, dw):
    B, Cout, To, Ho, Wo = g.shape
    Cg, kt, kh, kw = dw.shape[1], dw.shape[2], dw.shape[3], dw.shape[4]
    Cin = xp.shape[1]
    og = Cout // (Cin // Cg)
    for oc in prange(Cout * Cg):
        o = oc // Cg
        c = oc % Cg
        cabs = (o // og) * Cg + c
        for i in range(kt):
            for j in range(kh):
                for k in range(kw):
                    acc = dw[o, c, i, j, k] * 0
                    for b in range(B):
                        for t in range(To):
                            for y in range(Ho):
                                grow = g[b, o, t, y]
                                xrow = xp[b, cabs, t * st + i, y * sh + j]
                                if sw == 1:
                                    for z in range(Wo):
                                        acc += grow[z] * xrow[z + k]
                                    continue
                                for z in range(Wo):
                                    acc += grow[z] * xrow[z * sw + k]
                    dw[o, c, i, j, k] = acc


@njit(**_OPTS)
def matmul_t(x, w, bias, out):
    """out[m] = w @ x[m] + bias, one row per thread, fixed k order."""
    M, K = x.shape
    N = w.shape[0]
    for m in prange(M):
        xrow = x[m]
        for n in range(N):
            wrow = w[n]
            acc = bias[n] + wrow[0] * xrow[0]
            for k in range(1, K):
                acc += wrow[k] * xrow[k]
            out[m, n] = acc


@njit(**_OPTS)
def matmul_plain(a, b, out):
    """out = a @ b with a fixed accumulation order per output element."""
    M, K = a.shape
    N = b.shape[1]
    for m in prange(M):
        arow = a[m]
        for n in range(N):
            acc = arow[0] * b[0, n]
            for k in range(1, K):
                acc += arow[k] * b[k, n]
            out[m, n] = acc


@njit(**_OPTS)
def maxpool_fwd(x, wt, wh, ww, st, sh, sw, out, idx):
    """Max per window; ``idx`` records the first (lowest flat index) argmax."""
    B, C, Ti, Hi, Wi = x.shape
    To, Ho, Wo = out.shape[2], out.shape[3], out.shape[4]
    for bc in prange(B * C):
        b = bc // C
        c = bc % C
        for t in range(To):
            for y in range(Ho):
                for z in range(Wo):
                    best = x[b, c, t * st, y * sh, z * sw]
                    bidx = 0
                    fl = 0
                    for i in range(wt):
                        for j in range(wh):
                            for k in range(ww):
                                v = x[b, c, t * st + i, y * sh + j, z * sw + k]
                                if v > best:
                                    best = v
                                    bidx = fl
                                fl += 1
                    out[b, c, t, y, z] = best
                    idx[b, c, t, y, z] = bidx


@njit(**_OPTS)
def maxpool_bwd(g, idx, wt, wh, ww, st, sh, sw, dx):
    B, C, To, Ho, Wo = g.shape
    for bc in prange(B * C):
        b = bc // C
        c = bc % C
        plane = dx[b, c]
        for t in range(plane.shape[0]):
            for y in range(plane.shape[1]):
                for z in range(plane.shape[2]):
                    plane[t, y, z] = 0.0
        for t in range(To):
            for y in range(Ho):
                for z in range(Wo):
                    fl = idx[b, c, t, y, z]
                    i = fl // (wh * ww)
                    j = (fl // ww) % wh
                    k = fl % ww
                    plane[t * st + i, y * sh + j, z * sw + k] += g[b, c, t, y, z]


def transpose_weight(w: np.ndarray, groups: int) -> np.ndarray:
    """Weight for the transposed convolution: flip spatially, swap in/out.

    Maps (Cout, Cg, kt, kh, kw) with ``groups`` channel groups onto
    (Cin, og, kt, kh, kw) so that running ``conv_fwd`` with the incoming
    gradient (padded by kernel-1) yields the input gradient.
    """
    cout, cg, kt, kh, kw = w.shape
    og = cout // groups
    flipped = w[:, :, ::-1, ::-1, ::-1].reshape(groups, og, cg, kt, kh, kw)
    swapped = flipped.transpose(0, 2, 1, 3, 4, 5)
    return np.ascontiguousarray(swapped.reshape(cg * groups, og, kt, kh, kw))


def warmup(dtype=np.float32) -> None:
    """Force-compile all kernels for one dtype."""
    one = np.ones((1, 1, 3, 3, 3), dtype=dtype)
    w = np.ones((1, 1, 1, 1, 1), dtype=dtype)
    b = np.zeros(1, dtype=dtype)
    out = np.zeros((1, 1, 3, 3, 3), dtype=dtype)
    conv_fwd(one, w, b, 1, 1, 1, out)
    conv_bwd_input(out, w, 1, 1, 1, one.copy())
    conv_bwd_weight(out, one, 1, 1, 1, w.copy())
    m = np.ones((2, 2), dtype=dtype)
    matmul_t(m, m, b.repeat(2).astype(dtype), m.copy())
    matmul_plain(m, m, m.copy())
    idx = np.zeros((1, 1, 2, 2, 2), dtype=np.int64)
    mp = np.zeros((1, 1, 2, 2, 2), dtype=dtype)
    maxpool_fwd(one, 2, 2, 2, 1, 1, 1, mp, idx)
    maxpool_bwd(mp, idx, 2, 2, 2, 1, 1, 1, one.copy())
