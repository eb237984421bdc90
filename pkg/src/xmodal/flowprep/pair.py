"""Split a preprocessed sequence into the two encoder input streams."""

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from ..numcore import Tensor
from .farneback import FarnebackParams, farneback_flow
from .sequence import FrameSequence

# luminance weights for the flow stream's grayscale conversion
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class ClipPair:
    """Standardized appearance and motion streams of one clip.

    rgb: Tensor[3,T,H,W]; flow: Tensor[2,T,H,W]. Both per-channel
    standardized over (T,H,W); constant channels map to zeros. Dataset
    samples also carry identity and label metadata; preprocessing alone
    leaves those unset.
    """

    rgb: Tensor
    flow: Tensor
    sample_id: str = None
    subject_id: str = None
    class_id: int = None
    au_string: str = None

    def __post_init__(self):
        if self.rgb.data.ndim != 4 or self.flow.data.ndim != 4:
            raise DimensionError(
                f"ClipPair: need [C,T,H,W] streams, got {self.rgb.shape} and {self.flow.shape}"
            )
        if self.rgb.shape[1:] != self.flow.shape[1:]:
            raise DimensionError(
                f"ClipPair: stream geometries differ: {self.rgb.shape} vs {self.flow.shape}"
            )


def to_grayscale(frames: np.ndarray) -> np.ndarray:
    """[T,C,H,W] in [0,1] -> [T,H,W] luminance."""
    if frames.shape[1] == 1:
        return frames[:, 0].astype(np.float64)
    return np.einsum("tchw,c->thw", frames.astype(np.float64), _LUMA)


def standardize_per_channel(clip: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per leading channel; constant channels -> 0."""
    out = np.empty_like(clip, dtype=np.float32)
    for c in range(clip.shape[0]):
        ch = clip[c].astype(np.float64)
        mu = ch.mean()
        sd = ch.std()
        if sd < 1e-8:
            out[c] = 0.0
        else:
            out[c] = ((ch - mu) / sd).astype(np.float32)
    return out


def clip_to_pair(seq: FrameSequence, params: FarnebackParams = FarnebackParams()) -> ClipPair:
    """Build the (RGB, flow) training pair from a preprocessed sequence.

    Grayscale input is replicated to three channels for the appearance
    stream. T frames yield T-1 flow fields; the last field is replicated
    once so both streams share temporal length T.
    """
    d = seq.frames.data
    t = d.shape[0]
    rgb = d.transpose(1, 0, 2, 3)
    if rgb.shape[0] == 1:
        rgb = np.repeat(rgb, 3, axis=0)
    gray = to_grayscale(d)
    fields = [
        farneback_flow(gray[i], gray[i + 1], params).data for i in range(t - 1)
    ]
    fields.append(fields[-1].copy())
    flow = np.stack(fields, axis=1)  # [2,T,H,W]
    return ClipPair(
        rgb=Tensor(standardize_per_channel(rgb)),
        flow=Tensor(standardize_per_channel(flow)),
    )
