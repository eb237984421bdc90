"""Dense optical flow by quadratic polynomial expansion.

Each frame is locally approximated as f(x) ~ x'Ax + b'x + c with
coefficients from a Gaussian-weighted least squares fit, computed with
separable correlations. For a displacement d between frames the expansions
relate by A d = db, with A the average of the two frames' quadratic terms
and db built from the difference of the linear terms plus the prior
displacement's contribution. A box blur aggregates the per-pixel normal
equations over the window before the 2x2 solve, and the whole estimate runs
coarse to fine over an image pyramid with warping between iterations.

Flow convention: prev(y, x) corresponds to next(y + flow_y, x + flow_x),
so content moving right has positive flow_x.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ContractError, DimensionError
from ..numcore import Tensor


@dataclass(frozen=True)
class FarnebackParams:
    pyramid_scale: float = 0.5
    levels: int = 3
    window: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1

    def __post_init__(self):
        if not (0.0 < self.pyramid_scale < 1.0):
            raise ContractError(f"pyramid_scale must be in (0,1), got {self.pyramid_scale}")
        if self.levels < 1:
            raise ContractError(f"levels must be >= 1, got {self.levels}")
        if self.window < 1 or self.window % 2 == 0:
            raise ContractError(f"window must be odd and positive, got {self.window}")
        if self.iterations < 1:
            raise ContractError(f"iterations must be >= 1, got {self.iterations}")
        if self.poly_n < 1 or self.poly_n % 2 == 0:
            raise ContractError(f"poly_n must be odd and positive, got {self.poly_n}")
        if self.poly_sigma <= 0.0:
            raise ContractError(f"poly_sigma must be positive, got {self.poly_sigma}")


def _poly_expansion_kernels(n, sigma):
    """Gaussian applicability kernels and the inverse-Gram factors.

    Returns (g, xg, xxg, ig11, ig03, ig33, ig55) where the ig values are the
    entries of the inverted Gram matrix of the basis (1, x, y, x^2, y^2, xy)
    under the separable Gaussian weight.
    """
    x = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    xg = x * g
    xxg = x * x * g
    m2 = float((x * x * g).sum())
    m4 = float((x ** 4 * g).sum())
    gram = np.array(
        [
            [1.0, 0.0, 0.0, m2, m2, 0.0],
            [0.0, m2, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, m2, 0.0, 0.0, 0.0],
            [m2, 0.0, 0.0, m4, m2 * m2, 0.0],
            [m2, 0.0, 0.0, m2 * m2, m4, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, m2 * m2],
        ]
    )
    inv = np.linalg.inv(gram)
    return g, xg, xxg, inv[1, 1], inv[0, 3], inv[3, 3], inv[5, 5]


def _poly_expansion(img, n, sigma):
    """Per-pixel quadratic coefficients, stacked as (bx, by, axx, ayy, axy)."""
    g, xg, xxg, ig11, ig03, ig33, ig55 = _poly_expansion_kernels(n, sigma)

    def corr(a, k, axis):
        return ndimage.correlate1d(a, k, axis=axis, mode="nearest")

    # horizontal pass collects x-moments, vertical pass collects y-moments
    t0 = corr(img, g, 1)
    t1 = corr(img, xg, 1)
    t2 = corr(img, xxg, 1)
    b_c = corr(t0, g, 0)
    b_y = corr(t0, xg, 0)
    b_x = corr(t1, g, 0)
    b_yy = corr(t0, xxg, 0)
    b_xx = corr(t2, g, 0)
    b_xy = corr(t1, xg, 0)
    return np.stack(
        [
            b_x * ig11,
            b_y * ig11,
            b_c * ig03 + b_xx * ig33,
            b_c * ig03 + b_yy * ig33,
            b_xy * ig55,
        ],
        axis=-1,
    )


def _sample_bilinear(field, ys, xs):
    """Clamped bilinear sampling of an [H,W,K] field at float coordinates."""
    h, w = field.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    top = field[y0, x0] * (1 - wx) + field[y0, x1] * wx
    bot = field[y1, x0] * (1 - wx) + field[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _update_flow(r0, r1, flow, window, iterations):
    """Iterate: build per-pixel normal equations, box-blur, solve 2x2."""
    h, w = r0.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(iterations):
        r1w = _sample_bilinear(r1, yy + flow[..., 1], xx + flow[..., 0])
        a11 = (r0[..., 2] + r1w[..., 2]) * 0.5
        a22 = (r0[..., 3] + r1w[..., 3]) * 0.5
        a12 = (r0[..., 4] + r1w[..., 4]) * 0.25
        db1 = (r0[..., 0] - r1w[..., 0]) * 0.5 + a11 * flow[..., 0] + a12 * flow[..., 1]
        db2 = (r0[..., 1] - r1w[..., 1]) * 0.5 + a12 * flow[..., 0] + a22 * flow[..., 1]
        # normal equations of the overdetermined per-window system
        m11 = a11 * a11 + a12 * a12
        m12 = (a11 + a22) * a12
        m22 = a22 * a22 + a12 * a12
        h1 = a11 * db1 + a12 * db2
        h2 = a12 * db1 + a22 * db2
        blur = lambda f: ndimage.uniform_filter(f, size=window, mode="nearest")
        m11, m12, m22, h1, h2 = blur(m11), blur(m12), blur(m22), blur(h1), blur(h2)
        det = m11 * m22 - m12 * m12
        safe = np.abs(det) > 1e-12
        inv_det = np.where(safe, 1.0 / np.where(safe, det, 1.0), 0.0)
        fx = (m22 * h1 - m12 * h2) * inv_det
        fy = (m11 * h2 - m12 * h1) * inv_det
        flow = np.stack([fx, fy], axis=-1)
    return flow


def _resize_2d(img, h_out, w_out):
    """Corner-aligned bilinear resize of one 2-d array."""
    h, w = img.shape
    ys = np.linspace(0.0, h - 1.0, h_out) if h_out > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, w_out) if w_out > 1 else np.zeros(1)
    return _sample_bilinear(img[..., None], ys[:, None] * np.ones_like(xs)[None, :], np.ones_like(ys)[:, None] * xs[None, :])[..., 0]


def farneback_flow(prev, nxt, params: FarnebackParams = FarnebackParams()) -> Tensor:
    """Flow from prev to next: Tensor[2,H,W] with channels (dx, dy) in pixels."""
    pd = prev.data if isinstance(prev, Tensor) else np.asarray(prev)
    nd = nxt.data if isinstance(nxt, Tensor) else np.asarray(nxt)
    if pd.shape != nd.shape or pd.ndim != 2:
        raise DimensionError(f"farneback_flow: need equal 2-d frames, got {pd.shape} and {nd.shape}")
    if min(pd.shape) < params.poly_n:
        raise ContractError(
            f"farneback_flow: frames {pd.shape} smaller than poly_n {params.poly_n}"
        )
    pd = pd.astype(np.float64)
    nd = nd.astype(np.float64)
    h, w = pd.shape

    # finest level that still fits the polynomial window
    scales = []
    for k in range(params.levels):
        s = params.pyramid_scale ** k
        if round(h * s) >= params.poly_n and round(w * s) >= params.poly_n:
            scales.append(s)
    if not scales:
        scales = [1.0]

    flow = None
    for s in reversed(scales):  # coarse to fine
        hk, wk = max(int(round(h * s)), params.poly_n), max(int(round(w * s)), params.poly_n)
        sigma_pre = (1.0 / s - 1.0) * 0.5
        if sigma_pre > 0.01:
            p_k = _resize_2d(ndimage.gaussian_filter(pd, sigma_pre, mode="nearest"), hk, wk)
            n_k = _resize_2d(ndimage.gaussian_filter(nd, sigma_pre, mode="nearest"), hk, wk)
        else:
            p_k, n_k = pd, nd
        if flow is None:
            flow = np.zeros((hk, wk, 2))
        else:
            prev_h, prev_w = flow.shape[:2]
            up = np.stack(
                [_resize_2d(flow[..., 0], hk, wk), _resize_2d(flow[..., 1], hk, wk)], axis=-1
            )
            # displacement values rescale with the grid
            up[..., 0] *= (wk - 1) / max(prev_w - 1, 1)
            up[..., 1] *= (hk - 1) / max(prev_h - 1, 1)
            flow = up
        r0 = _poly_expansion(p_k, params.poly_n, params.poly_sigma)
        r1 = _poly_expansion(n_k, params.poly_n, params.poly_sigma)
        flow = _update_flow(r0, r1, flow, params.window, params.iterations)

    out = np.stack([flow[..., 0], flow[..., 1]]).astype(np.float32)
    if not np.isfinite(out).all():
        raise ContractError("farneback_flow: non-finite flow values")
    return Tensor(out)
