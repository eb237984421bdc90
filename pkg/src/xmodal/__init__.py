"""Micro-expression recognition with attribute-text embedding.

Dual-stream 3D residual video encoders (appearance + optical flow) trained
jointly with a facial-action-unit description encoder through a cross-modal
contrastive objective, plus the synthetic data, preprocessing, training,
and evaluation tooling around them.
"""

__version__ = "0.1.0"
