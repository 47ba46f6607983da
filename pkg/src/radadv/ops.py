"""Differentiable layer primitives.

Each function computes a forward value with numpy and registers a backward
rule on the active tape.  Layer ops accept a single sample or a batch
(leading axis); the returned rank matches the input.  Convolution and
pooling are vectorized via sliding windows plus matrix products, which is
where effectively all compute time goes.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, record

try:
    if os.environ.get("RADADV_DISABLE_NUMBA"):
        raise ImportError("numba disabled by RADADV_DISABLE_NUMBA")
    from . import _kernels
except ImportError:  # pragma: no cover - exercised via RADADV_DISABLE_NUMBA
    _kernels = None


def kernels_enabled() -> bool:
    return _kernels is not None


class ShapeError(ValueError):
    pass


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ShapeError(f"expected a triple, got {v!r}")
    return t


# ---------------------------------------------------------------------------
# convolution / pooling


def conv3d(x, weight, bias, stride=(1, 1, 1), padding=(0, 0, 0), groups: int = 1) -> Tensor:
    """3-D convolution (cross-correlation) with optional channel groups.

    ``x`` is (Cin, T, H, W) or (B, Cin, T, H, W); ``weight`` is
    (Cout, Cin//groups, kt, kh, kw); ``bias`` is (Cout,).  Output extent per
    spatial axis is floor((in + 2*pad - k) / stride) + 1.

    Channel-light convolutions run through compiled direct loops,
    channel-heavy ones through grouped im2col matrix products; both give
    results for one sample that do not depend on what else is in the
    batch.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    stride, padding = _triple(stride), _triple(padding)
    batched = x.data.ndim == 5
    if x.data.ndim not in (4, 5):
        raise ShapeError(f"conv3d input must be 4-D or 5-D, got shape {x.shape}")
    xd = x.data if batched else x.data[None]
    B, cin = xd.shape[:2]
    cout, cg, kt, kh, kw = weight.shape
    if groups < 1 or cin % groups != 0:
        raise ShapeError(f"groups={groups} does not divide input channels {cin}")
    if cout % groups != 0:
        raise ShapeError(f"groups={groups} does not divide output channels {cout}")
    if cg != cin // groups:
        raise ShapeError(f"weight expects {cg * groups} input channels, input has {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
    pt, ph, pw = padding
    st, sh, sw = stride
    tp, hp, wp = (xd.shape[2] + 2 * pt, xd.shape[3] + 2 * ph, xd.shape[4] + 2 * pw)
    if kt > tp or kh > hp or kw > wp:
        raise ShapeError(f"kernel {(kt, kh, kw)} exceeds padded input {(tp, hp, wp)}")

    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    to, ho, wo = ((tp - kt) // st + 1, (hp - kh) // sh + 1, (wp - kw) // sw + 1)
    og = cout // groups
    kvol = kt * kh * kw
    npos = B * to * ho * wo
    wd, bd = weight.data, bias.data

    # direct loops win while the per-position reduction is small; im2col
    # GEMM wins once it is channel-heavy
    def direct_ok(red):
        return _kernels is not None and red <= 64

    state = {"cols": None, "w2": None}

    def im2col():
        if state["cols"] is None:
            win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
            wing = win.reshape(B, groups, cg, to, ho, wo, kvol)
            state["cols"] = np.ascontiguousarray(
                wing.transpose(1, 0, 3, 4, 5, 2, 6)).reshape(groups, npos, cg * kvol)
        return state["cols"]

    def weight2():
        if state["w2"] is None:
            state["w2"] = np.ascontiguousarray(wd.reshape(groups, og, cg * kvol).transpose(0, 2, 1))
        return state["w2"]

    if direct_ok(cg * kvol):
        out = np.empty((B, cout, to, ho, wo), dtype=xp.dtype)
        _kernels.conv_fwd(xp, wd, bd, st, sh, sw, out)
    else:
        prod = np.matmul(im2col(), weight2())                     # (g, npos, og)
        out = prod.reshape(groups, B, to, ho, wo, og).transpose(1, 0, 5, 2, 3, 4)
        out = np.ascontiguousarray(out).reshape(B, cout, to, ho, wo)
        out += bd[None, :, None, None, None]

    def _col2im(dcols):
        # dcols: (g, npos, cg*kvol) -> gradient w.r.t. the padded input.
        # Accumulate channel-last so every += hits unit-stride memory.
        dmoved = np.zeros((B,) + xp.shape[2:] + (cin,), dtype=dcols.dtype)
        parts = dcols.reshape(groups, B, to, ho, wo, cg, kvol)
        parts = np.ascontiguousarray(parts.transpose(6, 1, 2, 3, 4, 0, 5))
        parts = parts.reshape(kvol, B, to, ho, wo, cin)
        idx = 0
        for i in range(kt):
            for j in range(kh):
                for k in range(kw):
                    dmoved[:, i:i + to * st:st, j:j + ho * sh:sh, k:k + wo * sw:sw, :] += parts[idx]
                    idx += 1
        dpad = np.moveaxis(dmoved, 4, 1)
        return dpad[:, :, pt:pt + xd.shape[2], ph:ph + xd.shape[3], pw:pw + xd.shape[4]]

    def _bwd_input(g5):
        if (st, sh, sw) == (1, 1, 1) and direct_ok(og * kvol):
            dxp = np.empty_like(xp)
            wt = _kernels.transpose_weight(wd, groups)
            gp = np.pad(g5, ((0, 0), (0, 0), (kt - 1, kt - 1),
                             (kh - 1, kh - 1), (kw - 1, kw - 1)))
            _kernels.conv_fwd(gp, wt, np.zeros(cin, dtype=g5.dtype), 1, 1, 1, dxp)
            return np.ascontiguousarray(
                dxp[:, :, pt:pt + xd.shape[2], ph:ph + xd.shape[3], pw:pw + xd.shape[4]])
        if (st, sh, sw) != (1, 1, 1) and direct_ok(og * kvol):
            dxp = np.empty_like(xp)
            _kernels.conv_bwd_input(g5, wd, st, sh, sw, dxp)
            return np.ascontiguousarray(
                dxp[:, :, pt:pt + xd.shape[2], ph:ph + xd.shape[3], pw:pw + xd.shape[4]])
        gg = g5.reshape(B, groups, og, to, ho, wo).transpose(1, 0, 3, 4, 5, 2)
        gg = np.ascontiguousarray(gg).reshape(groups, npos, og)
        return np.ascontiguousarray(_col2im(np.matmul(gg, weight2().transpose(0, 2, 1))))

    def bwd(g, needs):
        g5 = np.ascontiguousarray(g if batched else g[None])
        dx = dw = db = None
        if needs[2]:
            db = g5.sum(axis=(0, 2, 3, 4))
        if needs[1]:
            if direct_ok(cg * kvol):
                dw = np.zeros_like(wd)
                _kernels.conv_bwd_weight(g5, xp, st, sh, sw, dw)
            else:
                gg = g5.reshape(B, groups, og, to, ho, wo).transpose(1, 0, 3, 4, 5, 2)
                gg = np.ascontiguousarray(gg).reshape(groups, npos, og)
                dw = np.matmul(im2col().transpose(0, 2, 1), gg)   # (g, cg*kvol, og)
                dw = np.ascontiguousarray(dw.transpose(0, 2, 1)).reshape(cout, cg, kt, kh, kw)
        if needs[0]:
            dx = _bwd_input(g5)
            if not batched:
                dx = dx[0]
        return dx, dw, db

    return record("conv3d", (x, weight, bias), out if batched else out[0], bwd)


def pool3d(x, kind: str, window, stride=None) -> Tensor:
    """Max or average pooling over (T, H, W) windows.

    Max pooling routes each window's gradient to its first (lowest flat
    index) maximum cell; average pooling distributes it uniformly.
    """
    if kind not in ("max", "avg"):
        raise ValueError(f"unknown pooling kind {kind!r}")
    x = _as_tensor(x)
    window = _triple(window)
    stride = window if stride is None else _triple(stride)
    batched = x.data.ndim == 5
    if x.data.ndim not in (4, 5):
        raise ShapeError(f"pool3d input must be 4-D or 5-D, got shape {x.shape}")
    xd = x.data if batched else x.data[None]
    wt, wh, ww = window
    st, sh, sw = stride
    if wt > xd.shape[2] or wh > xd.shape[3] or ww > xd.shape[4]:
        raise ShapeError(f"pool window {window} larger than input {xd.shape[2:]}")

    if _kernels is not None and kind == "max":
        return _maxpool_kernel(x, xd, window, stride, batched)

    win = sliding_window_view(xd, window, axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]
    B, C, to, ho, wo = win.shape[:5]
    flat = win.reshape(B, C, to, ho, wo, wt * wh * ww)

    if kind == "max":
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    else:
        out = flat.mean(axis=-1)

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        g5 = g if batched else g[None]
        dx = np.zeros_like(xd)
        if kind == "max":
            it, rem = np.divmod(idx, wh * ww)
            ih, iw = np.divmod(rem, ww)
            tin, hin, win_ = xd.shape[2], xd.shape[3], xd.shape[4]
            tt = np.arange(to)[:, None, None] * st + it
            hh = np.arange(ho)[None, :, None] * sh + ih
            kk = np.arange(wo)[None, None, :] * sw + iw
            bc = (np.arange(B * C).reshape(B, C) * (tin * hin * win_))[:, :, None, None, None]
            flat = bc + (tt * hin + hh) * win_ + kk
            acc = np.bincount(flat.ravel(), weights=g5.ravel(), minlength=dx.size)
            dx = acc.reshape(xd.shape).astype(xd.dtype)
        else:
            share = g5 / (wt * wh * ww)
            for i in range(wt):
                for j in range(wh):
                    for k in range(ww):
                        dx[:, :, i:i + to * st:st, j:j + ho * sh:sh, k:k + wo * sw:sw] += share
        return (dx if batched else dx[0],)

    return record(f"pool3d[{kind}]", (x,), out if batched else out[0], bwd)


def _maxpool_kernel(x, xd, window, stride, batched) -> Tensor:
    wt, wh, ww = window
    st, sh, sw = stride
    B, C = xd.shape[:2]
    to = (xd.shape[2] - wt) // st + 1
    ho = (xd.shape[3] - wh) // sh + 1
    wo = (xd.shape[4] - ww) // sw + 1
    xc = np.ascontiguousarray(xd)
    out = np.empty((B, C, to, ho, wo), dtype=xd.dtype)
    idx = np.empty((B, C, to, ho, wo), dtype=np.int64)
    _kernels.maxpool_fwd(xc, wt, wh, ww, st, sh, sw, out, idx)

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        g5 = np.ascontiguousarray(g if batched else g[None])
        dx = np.empty_like(xc)
        _kernels.maxpool_bwd(g5, idx, wt, wh, ww, st, sh, sw, dx)
        return (dx if batched else dx[0],)

    return record("pool3d[max]", (x,), out if batched else out[0], bwd)


# ---------------------------------------------------------------------------
# elementwise activations


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def activation(x, kind: str) -> Tensor:
    """Elementwise relu / elu (unit scale) / sigmoid / tanh."""
    x = _as_tensor(x)
    v = x.data
    if kind == "relu":
        out = np.maximum(v, 0)
        dlocal = (v > 0).astype(v.dtype)
    elif kind == "elu":
        neg = v <= 0
        out = v.copy()
        out[neg] = np.expm1(v[neg])
        dlocal = np.ones_like(v)
        dlocal[neg] = out[neg] + 1.0
    elif kind == "sigmoid":
        out = _stable_sigmoid(v)
        dlocal = out * (1.0 - out)
    elif kind == "tanh":
        out = np.tanh(v)
        dlocal = 1.0 - out * out
    else:
        raise ValueError(f"unknown activation kind {kind!r}")

    def bwd(g, needs):
        return (g * dlocal if needs[0] else None,)

    return record(f"activation[{kind}]", (x,), out, bwd)


def relu(x) -> Tensor:
    return activation(x, "relu")


def elu(x) -> Tensor:
    return activation(x, "elu")


def sigmoid(x) -> Tensor:
    return activation(x, "sigmoid")


def tanh(x) -> Tensor:
    return activation(x, "tanh")


# ---------------------------------------------------------------------------
# linear / normalization / recurrent


def linear(x, weight, bias) -> Tensor:
    """Affine map ``weight @ x + bias`` for (n,) or (B, n) inputs."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    m, n = weight.shape
    batched = x.data.ndim == 2
    if x.data.ndim not in (1, 2) or x.shape[-1] != n:
        raise ShapeError(f"linear input shape {x.shape} does not match weight {weight.shape}")
    if bias.shape != (m,):
        raise ShapeError(f"linear bias shape {bias.shape} does not match {m} outputs")
    x2 = np.ascontiguousarray(x.data if batched else x.data[None])
    wd, bd = weight.data, bias.data

    if _kernels is not None:
        out = np.empty((x2.shape[0], m), dtype=x2.dtype)
        _kernels.matmul_t(x2, wd, bd, out)
    else:
        out = x2 @ wd.T + bd

    def bwd(g, needs):
        g2 = np.ascontiguousarray(g if batched else g[None])
        dx = dw = db = None
        if needs[0]:
            if _kernels is not None:
                dx = np.empty((g2.shape[0], n), dtype=g2.dtype)
                _kernels.matmul_plain(g2, wd, dx)
            else:
                dx = g2 @ wd
            if not batched:
                dx = dx[0]
        if needs[1]:
            gt = np.ascontiguousarray(g2.T)
            if _kernels is not None:
                dw = np.empty((m, n), dtype=g2.dtype)
                _kernels.matmul_plain(gt, x2, dw)
            else:
                dw = gt @ x2
        if needs[2]:
            db = g2.sum(axis=0)
        return dx, dw, db

    return record("linear", (x, weight, bias), out if batched else out[0], bwd)


class BatchNormState:
    """Running statistics for one batchnorm layer."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batchnorm(x, gamma, beta, state: BatchNormState, mode: str = "infer",
              epsilon: float = 1e-5) -> Tensor:
    """Channel normalization over a (B, C, ...) tensor.

    Train mode normalizes with biased batch statistics and folds them into
    the running estimates; infer mode normalizes with the running
    estimates only.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    xd = x.data
    if xd.ndim < 2:
        raise ShapeError("batchnorm input must have a batch and a channel axis")
    C = xd.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"gamma/beta must have {C} channels, got {gamma.shape}/{beta.shape}")
    axes = (0,) + tuple(range(2, xd.ndim))
    shape = (1, C) + (1,) * (xd.ndim - 2)

    if mode == "train":
        if xd.shape[0] == 0:
            raise ValueError("batchnorm train mode requires a non-empty batch")
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var).astype(state.running_var.dtype)
    else:
        mean = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)

    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = (xd - mean.reshape(shape)) * inv.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)
    nred = xd.size // C

    def bwd(g, needs):
        dx = dgamma = dbeta = None
        if needs[1]:
            dgamma = (g * xhat).sum(axis=axes)
        if needs[2]:
            dbeta = g.sum(axis=axes)
        if needs[0]:
            gs = gamma.data.reshape(shape)
            if mode == "train":
                dxhat = g * gs
                t1 = dxhat.sum(axis=axes, keepdims=True)
                t2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                dx = inv.reshape(shape) * (dxhat - t1 / nred - xhat * t2 / nred)
            else:
                dx = g * gs * inv.reshape(shape)
        return dx, dgamma, dbeta

    return record(f"batchnorm[{mode}]", (x, gamma, beta), out, bwd)


def lstm_step(x, h, c, w_ih, w_hh, b_ih, b_hh) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; returns (h', c').

    Gates are packed along the first weight axis in (input, forget, cell,
    output) order: i, f, o pass through sigmoid, the cell candidate
    through tanh, then ``c' = f*c + i*g`` and ``h' = o*tanh(c')``.
    """
    x, h, c = _as_tensor(x), _as_tensor(h), _as_tensor(c)
    m = h.shape[-1]
    if c.shape != h.shape:
        raise ShapeError(f"hidden/cell state shapes differ: {h.shape} vs {c.shape}")
    w_ih, w_hh = _as_tensor(w_ih), _as_tensor(w_hh)
    if w_ih.shape[0] != 4 * m or w_hh.shape != (4 * m, m):
        raise ShapeError("LSTM weight shapes do not match the state size")
    z = add(linear(x, w_ih, b_ih), linear(h, w_hh, b_hh))
    ax = z.data.ndim - 1
    i = sigmoid(slice_axis(z, ax, 0, m))
    f = sigmoid(slice_axis(z, ax, m, 2 * m))
    g = tanh(slice_axis(z, ax, 2 * m, 3 * m))
    o = sigmoid(slice_axis(z, ax, 3 * m, 4 * m))
    c2 = add(mul(f, c), mul(i, g))
    h2 = mul(o, tanh(c2))
    return h2, c2


# ---------------------------------------------------------------------------
# loss


def cross_entropy(logits, target, reduction: str = "mean") -> Tensor:
    """Negative log-softmax loss, stable via max-subtracted log-sum-exp.

    1-D logits take an int class; (B, M) logits take a class per row and
    reduce by ``mean`` or ``sum``.
    """
    logits = _as_tensor(logits)
    ld = logits.data
    if not np.isfinite(ld).all():
        raise ValueError("cross_entropy requires finite logits")
    batched = ld.ndim == 2
    if ld.ndim not in (1, 2):
        raise ShapeError(f"logits must be 1-D or 2-D, got shape {logits.shape}")
    M = ld.shape[-1]
    if batched:
        cls = np.asarray(target, dtype=np.int64)
        if cls.shape != (ld.shape[0],):
            raise ShapeError("need one class index per logits row")
    else:
        cls = np.asarray([int(target)], dtype=np.int64)
        ld = ld[None]
    if (cls < 0).any() or (cls >= M).any():
        raise IndexError(f"class index out of range for {M} classes")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")

    mx = ld.max(axis=1, keepdims=True)
    ex = np.exp(ld - mx)
    lse = np.log(ex.sum(axis=1)) + mx[:, 0]
    rows = np.arange(ld.shape[0])
    losses = lse - ld[rows, cls]
    scale = 1.0 / ld.shape[0] if (batched and reduction == "mean") else 1.0
    out = np.asarray(losses.sum() * scale, dtype=ld.dtype)

    softmax = ex / ex.sum(axis=1, keepdims=True)

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        dl = softmax.copy()
        dl[rows, cls] -= 1.0
        dl *= g * scale
        return (dl if batched else dl[0],)

    return record("cross_entropy", (logits,), out, bwd)


# ---------------------------------------------------------------------------
# structural / arithmetic helpers used to assemble models and attack seeds


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} operands differ in shape: {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")

    def bwd(g, needs):
        return (g if needs[0] else None, g if needs[1] else None)

    return record("add", (a, b), a.data + b.data, bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")

    def bwd(g, needs):
        return (g if needs[0] else None, -g if needs[1] else None)

    return record("sub", (a, b), a.data - b.data, bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")

    def bwd(g, needs):
        return (g * b.data if needs[0] else None, g * a.data if needs[1] else None)

    return record("mul", (a, b), a.data * b.data, bwd)


def scale_by(x, const) -> Tensor:
    """Elementwise product with a constant (no gradient to the constant)."""
    x = _as_tensor(x)
    cd = np.asarray(const, dtype=x.dtype)

    def bwd(g, needs):
        return (g * cd if needs[0] else None,)

    return record("scale_by", (x,), x.data * cd, bwd)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)

    def bwd(g, needs):
        return (g.reshape(x.shape) if needs[0] else None,)

    return record("reshape", (x,), x.data.reshape(shape), bwd)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        dx = np.zeros_like(x.data)
        dx[idx] = g
        return (dx,)

    return record("slice_axis", (x,), x.data[idx].copy(), bwd)


def mean_axes(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(sorted(axes))
    n = 1
    for ax in axes:
        n *= x.shape[ax]
    out = x.data.mean(axis=axes)

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, x.shape) / n,)

    return record("mean_axes", (x,), out, bwd)


def sum_all(x) -> Tensor:
    x = _as_tensor(x)

    def bwd(g, needs):
        return (np.broadcast_to(g, x.shape).astype(x.dtype) if needs[0] else None,)

    return record("sum_all", (x,), np.asarray(x.data.sum(), dtype=x.dtype), bwd)


def gather_rows(x, indices) -> Tensor:
    """Pick one column per row of a (B, M) tensor -> (B,)."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def bwd(g, needs):
        if not needs[0]:
            return (None,)
        dx = np.zeros_like(x.data)
        dx[rows, idx] = g
        return (dx,)

    return record("gather_rows", (x,), x.data[rows, idx].copy(), bwd)


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; only meaningful during training."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def bwd(g, needs):
        return (g * keep if needs[0] else None,)

    return record("dropout", (x,), x.data * keep, bwd)
