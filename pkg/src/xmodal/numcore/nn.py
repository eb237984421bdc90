"""Network layers on top of the tensor engine.

batchnorm and global_avg_pool take a channel-axis argument so the encoders
can run channels-last while the public examples use [N,C,T,H,W].
"""

import numpy as np

from ..errors import ContractError, DegenerateInputError, DimensionError
from .tensor import Tensor, make_result


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: x [N,D] @ weight [D,E] + bias [E] -> [N,E]."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(
            f"linear: need [N,D], [D,E], [E], got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise DimensionError(
            f"linear: inner dimensions disagree: {x.shape} @ {weight.shape} + {bias.shape}"
        )
    xd, wd = x.data, weight.data
    out = xd @ wd + bias.data
    return make_result(
        "linear",
        out,
        [
            (x, lambda g: g @ wd.T),
            (weight, lambda g: xd.T @ g),
            (bias, lambda g: g.sum(axis=0, dtype=np.float64).astype(g.dtype)),
        ],
    )


def softmax(x: Tensor) -> Tensor:
    """Row softmax of [N,n] with max subtraction for stability."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax: need [N,n], got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True, dtype=np.float64).astype(x.data.dtype)

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True, dtype=np.float64).astype(g.dtype)
        return (g - dot) * y

    return make_result("softmax", y, [(x, vjp)])


def global_avg_pool(x: Tensor, channel_axis=1) -> Tensor:
    """Mean over (T,H,W) of a 5-d tensor -> [N,C].

    channel_axis 1 expects [N,C,T,H,W]; channel_axis -1 expects [N,T,H,W,C].
    """
    if x.data.ndim != 5:
        raise DimensionError(f"global_avg_pool: need a 5-d tensor, got shape {x.shape}")
    if channel_axis not in (1, -1, 4):
        raise ContractError(f"global_avg_pool: channel_axis must be 1 or -1, got {channel_axis}")
    red = (2, 3, 4) if channel_axis == 1 else (1, 2, 3)
    m = 1
    for ax in red:
        m *= x.shape[ax]
    data = x.data.mean(axis=red, dtype=np.float64).astype(x.data.dtype)
    xshape, xdt = x.shape, x.data.dtype

    def vjp(g):
        gexp = np.expand_dims(g, red)
        return np.broadcast_to(gexp / m, xshape).astype(xdt)

    return make_result("global_avg_pool", data, [(x, vjp)])


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, channel_axis=1, eps=1e-5) -> Tensor:
    """Train-mode batch normalization with per-channel affine.

    Statistics come from the current batch over every axis except
    channel_axis and are part of the differentiated function. gamma and
    beta are 1-d with one entry per channel.
    """
    nd = x.data.ndim
    axis = channel_axis % nd
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batchnorm: gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}"
        )
    red = tuple(i for i in range(nd) if i != axis)
    m = x.data.size // c
    if m < 2:
        raise ContractError("batchnorm: needs at least 2 values per channel")
    bshape = tuple(c if i == axis else 1 for i in range(nd))

    xd = x.data
    mean = xd.mean(axis=red, keepdims=True, dtype=np.float64)
    var = np.square(xd - mean).mean(axis=red, keepdims=True, dtype=np.float64)
    invstd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    mean = mean.astype(xd.dtype)
    gb = gamma.data.reshape(bshape)
    xhat = (xd - mean) * invstd
    out = xhat * gb + beta.data.reshape(bshape)

    def vjp_x(g):
        # d/dx of gamma*(x-mean)*invstd with mean/var depending on x
        gxh = g * gb
        s1 = gxh.sum(axis=red, keepdims=True, dtype=np.float64).astype(g.dtype)
        xh = (xd - mean) * invstd  # recomputed; cheaper than caching a copy
        s2 = (gxh * xh).sum(axis=red, keepdims=True, dtype=np.float64).astype(g.dtype)
        return (invstd / m) * (m * gxh - s1 - xh * s2)

    def vjp_gamma(g):
        xh = (xd - mean) * invstd
        return (g * xh).sum(axis=red, dtype=np.float64).astype(g.dtype)

    def vjp_beta(g):
        return g.sum(axis=red, dtype=np.float64).astype(g.dtype)

    return make_result("batchnorm", out, [(x, vjp_x), (gamma, vjp_gamma), (beta, vjp_beta)])


def batchnorm_inference(x: Tensor, gamma: Tensor, beta: Tensor, mean, var, channel_axis=1, eps=1e-5) -> Tensor:
    """Normalization against fixed per-channel statistics.

    mean and var are plain arrays treated as constants, so the output of
    one sample never depends on its batch companions. Gradients flow to
    x, gamma, and beta only.
    """
    nd = x.data.ndim
    axis = channel_axis % nd
    c = x.shape[axis]
    mean = np.asarray(mean)
    var = np.asarray(var)
    for name, arr in (("gamma", gamma.data), ("beta", beta.data), ("mean", mean), ("var", var)):
        if arr.shape != (c,):
            raise DimensionError(f"batchnorm_inference: {name} must have shape ({c},), got {arr.shape}")
    bshape = tuple(c if i == axis else 1 for i in range(nd))
    xd = x.data
    invstd = (1.0 / np.sqrt(var.astype(np.float64) + eps)).astype(xd.dtype).reshape(bshape)
    xhat = (xd - mean.astype(xd.dtype).reshape(bshape)) * invstd
    gb = gamma.data.reshape(bshape)
    out = xhat * gb + beta.data.reshape(bshape)
    red = tuple(i for i in range(nd) if i != axis)

    def vjp_x(g):
        return g * gb * invstd

    def vjp_gamma(g):
        return (g * xhat).sum(axis=red, dtype=np.float64).astype(g.dtype)

    def vjp_beta(g):
        return g.sum(axis=red, dtype=np.float64).astype(g.dtype)

    return make_result("batchnorm_inference", out, [(x, vjp_x), (gamma, vjp_gamma), (beta, vjp_beta)])


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """cos(a, b) of two 1-d tensors, as a 0-d tensor in [-1, 1].

    Zero-norm input raises DegenerateInputError rather than returning NaN.
    """
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cosine_similarity: need equal 1-d shapes, got {a.shape} and {b.shape}")
    ad = a.data.astype(np.float64)
    bd = b.data.astype(np.float64)
    na = np.sqrt(ad @ ad)
    nb = np.sqrt(bd @ bd)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine_similarity: zero-norm argument")
    cos = float(ad @ bd / (na * nb))
    cos = min(1.0, max(-1.0, cos))
    dt = a.data.dtype
    out = np.asarray(cos, dtype=dt)

    def vjp_a(g):
        gs = float(g.reshape(()))
        return (gs * (bd / (na * nb) - cos * ad / (na * na))).astype(dt)

    def vjp_b(g):
        gs = float(g.reshape(()))
        return (gs * (ad / (na * nb) - cos * bd / (nb * nb))).astype(dt)

    return make_result("cosine_similarity", out, [(a, vjp_a), (b, vjp_b)])
