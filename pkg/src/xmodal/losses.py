"""Training objectives: cross-modal contrastive loss, classification
cross-entropies, and their weighted total.

The contrastive term scores a video feature against its own attribute
feature (positive) and k attribute features of other samples (negatives)
through d(a, b) = exp(cos(a, b)), so each pair distance lives in
[e^-1, e] and the per-anchor loss in [ln(1 + k e^-2), ln(1 + k e^2)].
The batch loss is the mean over anchors. No temperature parameter: the
bare exponential of cosine is used literally.
"""

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ContractError, DimensionError
from .numcore import Tensor


@dataclass(frozen=True)
class LossWeights:
    """alpha balances classification (1-alpha) against contrast (alpha)."""

    alpha: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")


@dataclass(frozen=True)
class PairBatch:
    """Positive video/attribute pairs plus k attribute negatives each.

    positives: list of (z_m, z_a, sample_id); negatives: per-positive list
    of (z_a, sample_id) drawn from other samples. k must be identical
    across positives and no negative may share its anchor's sample id.
    """

    positives: tuple
    negatives: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.negatives) != len(self.positives):
            raise ContractError(
                f"PairBatch: {len(self.positives)} positives but {len(self.negatives)} negative lists"
            )
        ks = {len(group) for group in self.negatives}
        if len(ks) > 1:
            raise ContractError(f"PairBatch: negatives per positive must match, got sizes {sorted(ks)}")
        for (_, _, sid), group in zip(self.positives, self.negatives):
            for _, neg_sid in group:
                if neg_sid == sid:
                    raise ContractError(f"PairBatch: negative shares sample id {sid!r} with its anchor")

    @property
    def k(self):
        return len(self.negatives[0]) if self.negatives else 0


def pair_distance(z_m: Tensor, z_a: Tensor) -> Tensor:
    """exp(cos(z_m, z_a)), a 0-d tensor in [e^-1, e]."""
    return nc.exp(nc.cosine_similarity(z_m, z_a))


def contrastive_loss(batch: PairBatch) -> Tensor:
    """Mean over anchors of -log(d(pos) / (d(pos) + sum of d(negatives))).

    With k = 0 the ratio is 1 and the loss is exactly zero.
    """
    if not batch.positives:
        raise ContractError("contrastive_loss: empty batch")
    total = None
    for (z_m, z_a, _), group in zip(batch.positives, batch.negatives):
        d_pos = pair_distance(z_m, z_a)
        denom = d_pos
        for z_neg, _ in group:
            denom = nc.add(denom, pair_distance(z_m, z_neg))
        term = nc.sub(nc.log(denom), nc.log(d_pos))
        total = term if total is None else nc.add(total, term)
    return nc.scale(total, 1.0 / len(batch.positives))


def _check_distribution(p):
    if p.min() < -1e-6:
        raise ContractError(f"cross_entropy: negative probability {p.min():.3g}")
    if abs(float(p.sum(dtype=np.float64)) / (p.size // p.shape[-1] if p.ndim > 1 else 1) - 1.0) > 1e-3:
        raise ContractError("cross_entropy: probabilities do not sum to 1")


def _floor(p: Tensor, floor=1e-12):
    # max(p, floor) built from relu keeps exact passthrough above the floor
    return nc.add_const(nc.relu(nc.add_const(p, -floor)), floor)


def cross_entropy(pred: Tensor, true_class: int) -> Tensor:
    """-log pred[true_class] with a 1e-12 probability floor."""
    if pred.data.ndim != 1:
        raise DimensionError(f"cross_entropy: need a 1-d distribution, got shape {pred.shape}")
    n = pred.shape[0]
    if not (0 <= true_class < n):
        raise ContractError(f"cross_entropy: class {true_class} outside [0,{n})")
    _check_distribution(pred.data)
    picked = nc.take_per_row(nc.reshape(pred, (1, -1)), np.array([true_class]))
    return nc.scale(nc.sum_axis(nc.log(_floor(picked)), 0), -1.0)


def cross_entropy_batch(pred: Tensor, classes) -> Tensor:
    """Mean cross-entropy of [N,n] probability rows against class ids."""
    classes = np.asarray(classes)
    if pred.data.ndim != 2 or classes.ndim != 1 or classes.shape[0] != pred.shape[0]:
        raise DimensionError(
            f"cross_entropy_batch: need [N,n] and length-N ids, got {pred.shape} and {classes.shape}"
        )
    n = pred.shape[1]
    if classes.size and (classes.min() < 0 or classes.max() >= n):
        raise ContractError(f"cross_entropy_batch: class id outside [0,{n})")
    _check_distribution(pred.data)
    picked = nc.take_per_row(pred, classes)
    return nc.scale(nc.mean(nc.log(_floor(picked)), 0), -1.0)


def total_loss(l_theta, l_phi, l_contrast, w: LossWeights):
    """(1 - alpha) * (l_theta + l_phi) + alpha * l_contrast.

    Accepts scalars or 0-d tensors; tensor inputs keep differentiability.
    The endpoints are exact: alpha 0 returns the classification sum,
    alpha 1 returns the contrastive term.
    """
    a = w.alpha
    if isinstance(l_theta, Tensor) or isinstance(l_phi, Tensor) or isinstance(l_contrast, Tensor):
        cls = nc.add(_as0d(l_theta), _as0d(l_phi))
        return nc.add(nc.scale(cls, 1.0 - a), nc.scale(_as0d(l_contrast), a))
    return (1.0 - a) * (l_theta + l_phi) + a * l_contrast


def _as0d(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))
