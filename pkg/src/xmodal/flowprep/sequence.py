"""Frame sequences and their spatial/temporal resampling."""

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError
from ..numcore import Tensor, load_mxt


@dataclass(frozen=True)
class FrameSequence:
    """Video frames as Tensor[T,C,H,W] in [0,1], C grayscale (1) or color (3)."""

    frames: Tensor
    frame_rate: float = None

    def __post_init__(self):
        d = self.frames.data
        if d.ndim != 4:
            raise DimensionError(f"FrameSequence: need [T,C,H,W], got shape {tuple(d.shape)}")
        t, c = d.shape[:2]
        if c not in (1, 3):
            raise DimensionError(f"FrameSequence: channels must be 1 or 3, got {c}")
        if t < 2:
            raise ContractError(f"FrameSequence: need at least 2 frames, got {t}")
        if not np.isfinite(d).all():
            raise ContractError("FrameSequence: non-finite pixel values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ContractError(
                f"FrameSequence: pixel values must be in [0,1], got [{d.min():.4g}, {d.max():.4g}]"
            )

    @property
    def shape(self):
        return self.frames.shape


def _axis_positions(n_in, n_out):
    # corner-aligned: first and last samples land on the input corners
    if n_out == 1:
        return np.zeros(1)
    return np.linspace(0.0, n_in - 1.0, n_out)


def resize_bilinear(seq: FrameSequence, h: int, w: int) -> FrameSequence:
    """Corner-aligned bilinear resize of every frame to h by w."""
    if h < 1 or w < 1:
        raise ContractError(f"resize_bilinear: target size must be >= 1, got {h}x{w}")
    d = seq.frames.data
    t, c, h_in, w_in = d.shape
    if (h, w) == (h_in, w_in):
        return FrameSequence(Tensor(d.copy()), seq.frame_rate)
    ys = _axis_positions(h_in, h)
    xs = _axis_positions(w_in, w)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h_in - 1)
    x1 = np.minimum(x0 + 1, w_in - 1)
    wy = (ys - y0).astype(np.float64)[:, None]
    wx = (xs - x0).astype(np.float64)[None, :]
    d64 = d.astype(np.float64)
    top = d64[:, :, y0][:, :, :, x0] * (1 - wy) * (1 - wx) + d64[:, :, y0][:, :, :, x1] * (1 - wy) * wx
    bot = d64[:, :, y1][:, :, :, x0] * wy * (1 - wx) + d64[:, :, y1][:, :, :, x1] * wy * wx
    out = np.clip(top + bot, 0.0, 1.0).astype(np.float32)
    return FrameSequence(Tensor(out), seq.frame_rate)


def resample_time(seq: FrameSequence, t_out: int) -> FrameSequence:
    """Uniform temporal resampling; each output frame blends its two
    bracketing input frames linearly. Identity when t_out equals T."""
    if t_out < 2:
        raise ContractError(f"resample_time: t_out must be >= 2, got {t_out}")
    d = seq.frames.data
    t_in = d.shape[0]
    if t_in < 2:
        raise ContractError(f"resample_time: need at least 2 input frames, got {t_in}")
    pos = _axis_positions(t_in, t_out)
    k0 = np.floor(pos).astype(np.intp)
    k1 = np.minimum(k0 + 1, t_in - 1)
    w = (pos - k0).astype(np.float64).reshape(-1, 1, 1, 1)
    out = d[k0].astype(np.float64) * (1 - w) + d[k1].astype(np.float64) * w
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    return FrameSequence(Tensor(out), seq.frame_rate)


def _pixels_to_unit(arr):
    arr = arr.astype(np.float32)
    if arr.size and arr.max() > 1.5:  # 8-bit range
        arr = arr / 255.0
    return np.clip(arr, 0.0, 1.0)


def load_frame_source(path) -> FrameSequence:
    """Read a clip from a directory of PNG frames (lexicographic order) or
    from a single MXT1 tensor of shape [T,C,H,W] or [T,H,W]."""
    import os

    if os.path.isdir(path):
        from PIL import Image

        names = sorted(n for n in os.listdir(path) if n.lower().endswith(".png"))
        if len(names) < 2:
            raise ContractError(f"{path}: need at least 2 PNG frames, found {len(names)}")
        frames = []
        for name in names:
            with Image.open(os.path.join(path, name)) as im:
                mode = "L" if im.mode in ("L", "I;16", "1") else "RGB"
                arr = np.asarray(im.convert(mode), dtype=np.float32)
            if arr.ndim == 2:
                arr = arr[None]
            else:
                arr = arr.transpose(2, 0, 1)
            frames.append(arr)
        stack = np.stack(frames)
    else:
        stack = load_mxt(path)
        if stack.ndim == 3:
            stack = stack[:, None]
        if stack.ndim != 4:
            raise DimensionError(f"{path}: expected [T,C,H,W] or [T,H,W], got shape {stack.shape}")
    return FrameSequence(Tensor(_pixels_to_unit(stack)))
