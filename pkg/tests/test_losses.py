"""Objectives: pair distance, contrastive loss, cross-entropy, total."""

import math

import numpy as np
import pytest

from xmodal import numcore as nc
from xmodal.errors import ConfigError, ContractError, DegenerateInputError
from xmodal.losses import (
    LossWeights,
    PairBatch,
    contrastive_loss,
    cross_entropy,
    cross_entropy_batch,
    pair_distance,
    total_loss,
)
from xmodal.numcore import Tensor

from oracles import check_grads


def vec(*vals):
    return Tensor(np.array(vals, dtype=np.float32))


def rand_vec(rng, d=8):
    return Tensor(rng.standard_normal(d).astype(np.float32))


class TestPairDistance:
    def test_identical_gives_e(self):
        u = vec(1.0, -2.0, 0.5)
        assert pair_distance(u, u).item() == pytest.approx(math.e, abs=1e-6)

    def test_orthogonal_gives_one(self):
        assert pair_distance(vec(1.0, 0.0), vec(0.0, 1.0)).item() == pytest.approx(1.0, abs=1e-6)

    def test_opposite_gives_inverse_e(self):
        u = vec(0.3, -0.7, 2.0)
        m = vec(-0.3, 0.7, -2.0)
        assert pair_distance(u, m).item() == pytest.approx(math.exp(-1.0), abs=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b = rand_vec(rng), rand_vec(rng)
            base = pair_distance(a, b).item()
            scaled = pair_distance(Tensor(a.data * 37.5), Tensor(b.data * 0.002)).item()
            assert abs(base - scaled) < 1e-6

    def test_zero_norm_rejected(self):
        with pytest.raises(DegenerateInputError):
            pair_distance(vec(0.0, 0.0), vec(1.0, 0.0))

    def test_range(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            d = pair_distance(rand_vec(rng), rand_vec(rng)).item()
            assert math.exp(-1.0) - 1e-6 <= d <= math.e + 1e-6


def batch_of(positive_pairs, negative_groups):
    positives = tuple((zm, za, f"s{i}") for i, (zm, za) in enumerate(positive_pairs))
    negatives = tuple(
        tuple((z, f"n{i}_{j}") for j, z in enumerate(group)) for i, group in enumerate(negative_groups)
    )
    return PairBatch(positives=positives, negatives=negatives)


class TestContrastiveLoss:
    def test_zero_negatives_gives_zero(self):
        rng = np.random.default_rng(2)
        b = batch_of([(rand_vec(rng), rand_vec(rng)) for _ in range(3)], [[], [], []])
        assert b.k == 0
        assert contrastive_loss(b).item() == 0.0

    def test_symmetric_distances_give_log4(self):
        # anchor equidistant from positive and all 3 negatives
        zm = vec(1.0, 0.0, 0.0, 0.0)
        za = vec(0.0, 1.0, 0.0, 0.0)
        negs = [vec(0.0, 0.0, 1.0, 0.0), vec(0.0, 0.0, 0.0, 1.0), vec(0.0, -1.0, 0.0, 0.0)]
        # cosine 0 everywhere, so every distance is 1
        b = batch_of([(zm, za)], [negs])
        assert contrastive_loss(b).item() == pytest.approx(math.log(4.0), abs=1e-6)

    def test_best_positive_worst_negatives(self):
        # positive at distance e, both negatives at e^-1:
        # -ln(e / (e + 2/e)) = ln(1 + 2 e^-2) = 0.2395447662 (not 0.238106)
        zm = vec(1.0, 0.0)
        za = vec(2.0, 0.0)
        negs = [vec(-1.0, 0.0), vec(-3.0, 0.0)]
        b = batch_of([(zm, za)], [negs])
        want = math.log(1.0 + 2.0 * math.exp(-2.0))
        assert want == pytest.approx(0.2395447662, abs=1e-9)
        assert contrastive_loss(b).item() == pytest.approx(want, abs=1e-6)

    def test_batch_mean_over_anchors(self):
        zm = vec(1.0, 0.0)
        za = vec(2.0, 0.0)
        neg = vec(-1.0, 0.0)
        one = batch_of([(zm, za)], [[neg]])
        two = batch_of([(zm, za), (zm, za)], [[neg], [neg]])
        assert contrastive_loss(two).item() == pytest.approx(contrastive_loss(one).item(), abs=1e-7)

    def test_bound_property(self):
        rng = np.random.default_rng(3)
        for k in (1, 2, 5):
            for _ in range(10):
                b = batch_of(
                    [(rand_vec(rng), rand_vec(rng))],
                    [[rand_vec(rng) for _ in range(k)]],
                )
                val = contrastive_loss(b).item()
                lo = math.log(1.0 + k * math.exp(-2.0))
                hi = math.log(1.0 + k * math.exp(2.0))
                assert lo - 1e-6 <= val <= hi + 1e-6

    def test_monotone_in_positive_similarity(self):
        # rotate the positive toward the anchor; loss must strictly drop
        rng = np.random.default_rng(4)
        zm = vec(1.0, 0.0)
        negs = [rand_vec(rng, 2) for _ in range(3)]
        last = None
        for ang in (1.4, 1.0, 0.6, 0.2, 0.0):
            za = vec(math.cos(ang), math.sin(ang))
            val = contrastive_loss(batch_of([(zm, za)], [negs])).item()
            if last is not None:
                assert val < last
            last = val

    def test_mismatched_negative_counts_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ContractError):
            batch_of(
                [(rand_vec(rng), rand_vec(rng)), (rand_vec(rng), rand_vec(rng))],
                [[rand_vec(rng)], []],
            )

    def test_negative_sharing_anchor_id_rejected(self):
        rng = np.random.default_rng(6)
        zm, za, zn = rand_vec(rng), rand_vec(rng), rand_vec(rng)
        with pytest.raises(ContractError):
            PairBatch(positives=((zm, za, "s0"),), negatives=(((zn, "s0"),),))

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(7)
        arrays = [rng.standard_normal(8) for _ in range(4)]

        def f(ts):
            zm, za, n1, n2 = ts
            b = PairBatch(
                positives=((zm, za, "a"),),
                negatives=(((n1, "b"), (n2, "c")),),
            )
            return contrastive_loss(b)

        check_grads(f, arrays, per_array=8, rel_tol=1e-4)


class TestCrossEntropy:
    def test_one_hot_exact_zero(self):
        p = vec(0.0, 1.0, 0.0)
        assert cross_entropy(p, 1).item() == 0.0

    def test_uniform_five(self):
        p = Tensor(np.full(5, 0.2, np.float32))
        assert cross_entropy(p, 3).item() == pytest.approx(math.log(5.0), abs=1e-6)

    def test_derived_value(self):
        p = vec(0.7, 0.2, 0.1)
        assert cross_entropy(p, 0).item() == pytest.approx(0.35667494, abs=1e-6)

    def test_floor_keeps_finite(self):
        p = vec(0.0, 1.0)
        val = cross_entropy(p, 0).item()
        assert math.isfinite(val)
        assert val == pytest.approx(-math.log(1e-12), rel=1e-3)

    def test_invalid_class_rejected(self):
        with pytest.raises(ContractError):
            cross_entropy(vec(0.5, 0.5), 2)

    def test_not_a_distribution_rejected(self):
        with pytest.raises(ContractError):
            cross_entropy(vec(0.9, 0.9), 0)

    def test_batch_is_mean(self):
        p = Tensor(np.array([[0.7, 0.3], [0.2, 0.8]], np.float32))
        want = (-math.log(0.7) - math.log(0.8)) / 2.0
        assert cross_entropy_batch(p, [0, 1]).item() == pytest.approx(want, abs=1e-6)

    def test_grads_through_softmax(self):
        rng = np.random.default_rng(8)

        def f(ts):
            (logits,) = ts
            return cross_entropy_batch(nc.softmax(logits), np.array([2, 0, 1]))

        check_grads(f, [rng.standard_normal((3, 4))])


class TestTotalLoss:
    def test_alpha_zero_is_classification_sum_exactly(self):
        assert total_loss(1.25, 2.5, 99.0, LossWeights(0.0)) == 3.75

    def test_alpha_one_is_contrast_exactly(self):
        assert total_loss(1.25, 2.5, 99.0, LossWeights(1.0)) == 99.0

    def test_quarter_blend(self):
        assert total_loss(1.0, 2.0, 4.0, LossWeights(0.25)) == pytest.approx(3.25, abs=1e-12)

    def test_affine_in_alpha(self):
        vals = [total_loss(0.7, 1.3, 5.0, LossWeights(a)) for a in (0.0, 0.5, 1.0)]
        assert vals[1] == pytest.approx((vals[0] + vals[2]) / 2.0, abs=1e-9)

    def test_alpha_out_of_range_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(1.5)
        with pytest.raises(ConfigError):
            LossWeights(-0.1)

    def test_tensor_mode_differentiable(self):
        with nc.Tape() as t:
            lt = Tensor(np.asarray(1.0, np.float32), requires_grad=True)
            lp = Tensor(np.asarray(2.0, np.float32), requires_grad=True)
            lc = Tensor(np.asarray(4.0, np.float32), requires_grad=True)
            out = total_loss(lt, lp, lc, LossWeights(0.25))
            nc.backward(out, t)
        assert out.item() == pytest.approx(3.25, abs=1e-6)
        assert lt.grad == pytest.approx(0.75)
        assert lc.grad == pytest.approx(0.25)
