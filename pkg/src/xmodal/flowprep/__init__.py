"""Preprocessing: resize, temporal resampling, optical flow, stream split."""

from .farneback import FarnebackParams, farneback_flow
from .pair import ClipPair, clip_to_pair, standardize_per_channel, to_grayscale
from .sequence import FrameSequence, load_frame_source, resample_time, resize_bilinear

__all__ = [
    "ClipPair",
    "FarnebackParams",
    "FrameSequence",
    "clip_to_pair",
    "farneback_flow",
    "load_frame_source",
    "resample_time",
    "resize_bilinear",
    "standardize_per_channel",
    "to_grayscale",
]
