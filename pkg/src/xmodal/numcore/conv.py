"""3-d convolution, forward and backward.

Two layouts share one math core:

  conv3d     input [N,C,T,H,W], the public contract used in tests and docs
  conv3d_cl  input [N,T,H,W,C], channels last, used inside the encoders

Channels-last turns every kernel offset into one GEMM over contiguous
channel vectors, which is several times faster here than gathering patches
in the channels-first layout. conv3d is the same computation behind a pair
of differentiable transposes, and a test pins both paths to each other at
1e-5.

Weights use the [F,C,kt,kh,kw] contract in both entry points. For small
fan-in (the stem convolution has C=3, where per-offset GEMMs degenerate)
the core switches to explicit patch extraction.

The backward pass re-pads the saved input instead of caching the padded
copy; for strides > 1 the input gradient scatter-adds through strided views
of the padded buffer, which keeps backward at the same GEMM cost as forward.
"""

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor, make_result, transpose

# below this fan-in the per-offset GEMM is bandwidth-bound; use im2col
_IM2COL_MAX_FANIN = 8


def _out_extent(size, pad, k, stride):
    return (size + 2 * pad - k) // stride + 1


def _check_conv_args(xshape, wshape, stride, padding):
    n, t, h, w, c = xshape
    f, wc, kt, kh, kw = wshape
    if wc != c:
        raise DimensionError(f"conv3d: input has {c} channels, kernel expects {wc}")
    if any(s < 1 for s in stride):
        raise ContractError(f"conv3d: stride components must be >= 1, got {stride}")
    if any(p < 0 for p in padding):
        raise ContractError(f"conv3d: padding components must be >= 0, got {padding}")
    to = _out_extent(t, padding[0], kt, stride[0])
    ho = _out_extent(h, padding[1], kh, stride[1])
    wo = _out_extent(w, padding[2], kw, stride[2])
    if to < 1 or ho < 1 or wo < 1:
        raise DimensionError(
            f"conv3d: kernel {kt}x{kh}x{kw} does not fit input {t}x{h}x{w} with padding {padding}"
        )
    return to, ho, wo


def _pad_cl(x, padding):
    pt, ph, pw = padding
    if pt == 0 and ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))


def _fwd_shift(x, wt, stride, padding, out_thw):
    # wt: [kt,kh,kw,C,F]; one GEMM per kernel offset, accumulated
    n = x.shape[0]
    kt, kh, kw, _, f = wt.shape
    st, sh, sw = stride
    to, ho, wo = out_thw
    xp = _pad_cl(x, padding)
    out = np.zeros((n, to, ho, wo, f), dtype=x.dtype)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                sl = xp[:, dt : dt + st * to : st, dh : dh + sh * ho : sh, dw : dw + sw * wo : sw, :]
                np.add(out, sl @ wt[dt, dh, dw], out=out)
    return out


def _dw_shift(x, g, kshape, stride, padding):
    # g: [N,To,Ho,Wo,F] -> dwt [kt,kh,kw,C,F]
    kt, kh, kw = kshape
    st, sh, sw = stride
    to, ho, wo = g.shape[1:4]
    c = x.shape[-1]
    xp = _pad_cl(x, padding)
    gm = g.reshape(-1, g.shape[-1])
    dwt = np.empty((kt, kh, kw, c, g.shape[-1]), dtype=x.dtype)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                sl = xp[:, dt : dt + st * to : st, dh : dh + sh * ho : sh, dw : dw + sw * wo : sw, :]
                dwt[dt, dh, dw] = sl.reshape(-1, c).T @ gm
    return dwt


def _dx_shift(g, wt, stride, padding, xshape):
    # scatter each offset's GEMM back through a strided view of the padded buffer
    n, t, h, w, c = xshape
    kt, kh, kw = wt.shape[:3]
    st, sh, sw = stride
    pt, ph, pw = padding
    to, ho, wo = g.shape[1:4]
    dxp = np.zeros((n, t + 2 * pt, h + 2 * ph, w + 2 * pw, c), dtype=g.dtype)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                dxp[:, dt : dt + st * to : st, dh : dh + sh * ho : sh, dw : dw + sw * wo : sw, :] += (
                    g @ wt[dt, dh, dw].T
                )
    if pt == 0 and ph == 0 and pw == 0:
        return dxp
    return np.ascontiguousarray(dxp[:, pt : pt + t, ph : ph + h, pw : pw + w, :])


def _im2col(x, kshape, stride, padding, out_thw):
    # patches laid out as (kt,kh,kw,C) per output position, matching the
    # flattened weight layout in _fwd_col
    kt, kh, kw = kshape
    st, sh, sw = stride
    to, ho, wo = out_thw
    xp = _pad_cl(x, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    # win: [N, T*, H*, W*, C, kt, kh, kw]
    win = win[:, ::st, ::sh, ::sw][:, :to, :ho, :wo]
    cols = win.transpose(0, 1, 2, 3, 5, 6, 7, 4).reshape(-1, kt * kh * kw * x.shape[-1])
    return np.ascontiguousarray(cols)


def _fwd_col(x, wt, stride, padding, out_thw):
    kt, kh, kw, c, f = wt.shape
    cols = _im2col(x, (kt, kh, kw), stride, padding, out_thw)
    out = cols @ wt.reshape(-1, f)
    return out.reshape((x.shape[0],) + out_thw + (f,))


def _dw_col(x, g, kshape, stride, padding):
    kt, kh, kw = kshape
    c = x.shape[-1]
    f = g.shape[-1]
    cols = _im2col(x, kshape, stride, padding, g.shape[1:4])
    dwt = cols.T @ g.reshape(-1, f)
    return dwt.reshape(kt, kh, kw, c, f)


def conv3d_cl(x: Tensor, weight: Tensor, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """Channels-last convolution: x [N,T,H,W,C], weight [F,C,kt,kh,kw].

    Returns [N,T',H',W',F] with the floor((size+2p-k)/s)+1 extent rule.
    Differentiable with respect to both x and weight. No bias term.
    """
    if x.data.ndim != 5 or weight.data.ndim != 5:
        raise DimensionError(
            f"conv3d: need 5-d input and kernel, got {x.data.ndim}-d and {weight.data.ndim}-d"
        )
    if x.data.dtype != weight.data.dtype:
        raise ContractError(f"conv3d: mixed dtypes {x.data.dtype} and {weight.data.dtype}")
    stride = tuple(int(s) for s in stride)
    padding = tuple(int(p) for p in padding)
    out_thw = _check_conv_args(x.shape, weight.shape, stride, padding)
    kshape = weight.shape[2:]
    wt = np.ascontiguousarray(weight.data.transpose(2, 3, 4, 1, 0))  # [kt,kh,kw,C,F]
    use_col = x.shape[-1] < _IM2COL_MAX_FANIN and kshape != (1, 1, 1)
    if use_col:
        out = _fwd_col(x.data, wt, stride, padding, out_thw)
    else:
        out = _fwd_shift(x.data, wt, stride, padding, out_thw)

    xd = x.data
    xshape = x.shape

    def vjp_x(g):
        return _dx_shift(g, wt, stride, padding, xshape)

    def vjp_w(g):
        if use_col:
            dwt = _dw_col(xd, g, kshape, stride, padding)
        else:
            dwt = _dw_shift(xd, g, kshape, stride, padding)
        return np.ascontiguousarray(dwt.transpose(4, 3, 0, 1, 2))  # back to [F,C,kt,kh,kw]

    return make_result("conv3d", out, [(x, vjp_x), (weight, vjp_w)])


def conv3d(x: Tensor, weight: Tensor, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """Convolution on [N,C,T,H,W] input, weight [F,C,kt,kh,kw], no bias.

    Output is [N,F,T',H',W']. Same math as conv3d_cl behind a pair of
    differentiable layout transposes.
    """
    if x.data.ndim != 5:
        raise DimensionError(f"conv3d: need a 5-d input, got {x.data.ndim}-d")
    x_cl = transpose(x, (0, 2, 3, 4, 1))
    out_cl = conv3d_cl(x_cl, weight, stride, padding)
    return transpose(out_cl, (0, 4, 1, 2, 3))
