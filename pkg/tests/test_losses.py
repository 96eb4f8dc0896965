"""Loss tests against brute-force scalar oracles and closed forms."""

import numpy as np
import pytest

from epsbench.autodiff import ShapeError, Tensor, grad_check, param
from epsbench.groundtruth import GroundTruthError, GroundTruthSet
from oracles import (
    oracle_neighborhood,
    oracle_weighted_l1,
    oracle_weighted_l2,
)

from epsbench.losses import (
    NeighborhoodSpec,
    batch_loss,
    combined_loss,
    neighborhood_loss,
    weighted_l1_loss,
    weighted_l2_loss,
)


def make_gts(rng, h, w, k, source_id="img"):
    targets = [rng.uniform(0, 1, (h, w, 3)) for _ in range(k)]
    counts = rng.integers(1, 10, k)
    return GroundTruthSet.from_counts(targets, counts, source_id=source_id)


class TestWeightedL2:
    def test_zero_at_target(self):
        rng = np.random.default_rng(0)
        y = rng.uniform(0, 1, (4, 4, 3))
        gts = GroundTruthSet(targets=[y], weights=np.array([1.0]))
        assert weighted_l2_loss(Tensor(y), gts).item() == 0.0

    def test_constant_offset_closed_form(self):
        rng = np.random.default_rng(1)
        y = rng.uniform(0, 1, (5, 3, 3))
        c = 0.13
        gts = GroundTruthSet(targets=[y], weights=np.array([1.0]))
        val = weighted_l2_loss(Tensor(y + c), gts).item()
        np.testing.assert_allclose(val, 3 * c * c * 15, rtol=1e-12)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0, 1, (2, 2, 3))
        targets = [rng.uniform(0, 1, (2, 2, 3)) for _ in range(5)]
        gts = GroundTruthSet.from_counts(targets, [5, 4, 3, 1, 1])
        val = weighted_l2_loss(Tensor(pred), gts).item()
        want = oracle_weighted_l2(pred, targets, gts.weights)
        np.testing.assert_allclose(val, want, rtol=1e-12)

    def test_shape_mismatch(self):
        gts = GroundTruthSet(targets=[np.zeros((3, 3, 3))], weights=np.array([1.0]))
        with pytest.raises(ShapeError):
            weighted_l2_loss(Tensor(np.zeros((4, 4, 3))), gts)


class TestWeightedL1:
    def test_zero_at_target(self):
        rng = np.random.default_rng(3)
        y = rng.uniform(0, 1, (3, 5, 3))
        gts = GroundTruthSet(targets=[y], weights=np.array([1.0]))
        assert weighted_l1_loss(Tensor(y), gts).item() == 0.0

    def test_constant_offset_closed_form(self):
        rng = np.random.default_rng(4)
        y = rng.uniform(0, 1, (4, 4, 3))
        c = 0.07
        gts = GroundTruthSet(targets=[y], weights=np.array([1.0]))
        val = weighted_l1_loss(Tensor(y + c), gts).item()
        np.testing.assert_allclose(val, 3 * c * 16, rtol=1e-12)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(5)
        pred = rng.uniform(0, 1, (2, 2, 3))
        gts = make_gts(rng, 2, 2, 4)
        val = weighted_l1_loss(Tensor(pred), gts).item()
        want = oracle_weighted_l1(pred, gts.targets, gts.weights)
        np.testing.assert_allclose(val, want, rtol=1e-12)


class TestNeighborhood:
    def test_zero_at_target(self):
        rng = np.random.default_rng(6)
        y = rng.uniform(0, 1, (4, 4, 3))
        gts = GroundTruthSet(targets=[y], weights=np.array([1.0]))
        assert neighborhood_loss(Tensor(y), gts).item() == 0.0

    def test_offset_invariant_while_l1_is_not(self):
        rng = np.random.default_rng(7)
        # dyadic pixel values (8-bit-style) so target + offset is exact in floats
        y = rng.integers(0, 192, (4, 4, 3)).astype(np.float64) / 256.0
        gts = GroundTruthSet(targets=[y], weights=np.array([1.0]))
        c = 0.25
        assert neighborhood_loss(Tensor(y + c), gts).item() == 0.0
        np.testing.assert_allclose(
            weighted_l1_loss(Tensor(y + c), gts).item(), 3 * c * 16, rtol=1e-12)

    def test_matches_six_loop_oracle(self):
        rng = np.random.default_rng(8)
        pred = rng.uniform(0, 1, (4, 4, 3))
        y = rng.uniform(0, 1, (4, 4, 3))
        gts = GroundTruthSet(targets=[y], weights=np.array([1.0]))
        val = neighborhood_loss(Tensor(pred), gts).item()
        want = oracle_neighborhood(pred, [y], [1.0])
        np.testing.assert_allclose(val, want, rtol=1e-12)

    def test_matches_oracle_multi_target_window3(self):
        rng = np.random.default_rng(9)
        pred = rng.uniform(0, 1, (5, 4, 3))
        gts = make_gts(rng, 5, 4, 3)
        spec = NeighborhoodSpec(extent=3)
        val = neighborhood_loss(Tensor(pred), gts, spec).item()
        want = oracle_neighborhood(pred, gts.targets, gts.weights, extent=3)
        np.testing.assert_allclose(val, want, rtol=1e-12)

    def test_even_extent_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            NeighborhoodSpec(extent=4)

    def test_unknown_boundary_rejected(self):
        with pytest.raises(ValueError, match="boundary"):
            NeighborhoodSpec(boundary="wrap")


class TestCombined:
    def test_lambda_zero_is_l1_bitwise(self):
        rng = np.random.default_rng(10)
        pred = rng.uniform(0, 1, (4, 4, 3))
        gts = make_gts(rng, 4, 4, 5)
        a = combined_loss(Tensor(pred), gts, lambda_nb=0.0).item()
        b = weighted_l1_loss(Tensor(pred), gts).item()
        assert a == b

    def test_zero_at_target(self):
        rng = np.random.default_rng(11)
        y = rng.uniform(0, 1, (3, 3, 3))
        gts = GroundTruthSet(targets=[y], weights=np.array([1.0]))
        assert combined_loss(Tensor(y), gts).item() == 0.0

    def test_equals_sum_of_component_oracles(self):
        rng = np.random.default_rng(12)
        pred = rng.uniform(0, 1, (4, 4, 3))
        gts = make_gts(rng, 4, 4, 2)
        lam = 0.75
        val = combined_loss(Tensor(pred), gts, lambda_nb=lam).item()
        want = (oracle_weighted_l1(pred, gts.targets, gts.weights)
                + lam * oracle_neighborhood(pred, gts.targets, gts.weights))
        np.testing.assert_allclose(val, want, rtol=1e-12)

    def test_negative_lambda_rejected(self):
        gts = GroundTruthSet(targets=[np.zeros((2, 2, 3))], weights=np.array([1.0]))
        with pytest.raises(ValueError, match="lambda_nb"):
            combined_loss(Tensor(np.zeros((2, 2, 3))), gts, lambda_nb=-0.1)


class TestProperties:
    def test_nonnegative_and_zero_iff_match(self):
        rng = np.random.default_rng(13)
        for trial in range(20):
            pred = rng.uniform(0, 1, (3, 3, 3))
            gts = make_gts(rng, 3, 3, int(rng.integers(1, 6)))
            for fn in (weighted_l1_loss, weighted_l2_loss, neighborhood_loss):
                assert fn(Tensor(pred), gts).item() >= 0.0

    def test_flip_invariance(self):
        rng = np.random.default_rng(14)
        pred = rng.uniform(0, 1, (4, 5, 3))
        gts = make_gts(rng, 4, 5, 3)
        flipped = GroundTruthSet(
            targets=[t[:, ::-1].copy() for t in gts.targets], weights=gts.weights)
        for fn in (weighted_l1_loss, weighted_l2_loss, neighborhood_loss, combined_loss):
            a = fn(Tensor(pred), gts).item()
            b = fn(Tensor(pred[:, ::-1].copy()), flipped).item()
            np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_gradients_pass_finite_difference(self):
        rng = np.random.default_rng(15)
        # generic point: keep pred away from target ties so L1/nb are smooth
        pred0 = rng.uniform(0, 1, (4, 4, 3))
        gts = make_gts(rng, 4, 4, 3)
        for fn in (weighted_l2_loss, weighted_l1_loss, neighborhood_loss, combined_loss):
            err = grad_check(lambda t, f=fn: f(t, gts), Tensor(pred0))
            assert err < 1e-4, f"{fn.__name__}: {err}"

    def test_weight_sum_enforced(self):
        with pytest.raises(GroundTruthError, match="sum"):
            GroundTruthSet(targets=[np.zeros((2, 2, 3))], weights=np.array([0.9]))


class TestBatchLoss:
    def test_batch_equals_sum_of_images(self):
        rng = np.random.default_rng(16)
        h = w = 4
        preds = [rng.uniform(0, 1, (h, w, 3)) for _ in range(2)]
        gtss = [make_gts(rng, h, w, 3, source_id=f"i{n}") for n in range(2)]
        # image-level total
        want = sum(combined_loss(Tensor(p), g, lambda_nb=0.5).item()
                   for p, g in zip(preds, gtss))
        # batch layout (K=3 each)
        pred_b = np.stack([np.transpose(p, (2, 0, 1)) for p in preds])
        targets = np.stack([
            np.stack([np.transpose(g.targets[k], (2, 0, 1)) for g in gtss])
            for k in range(3)])
        weights = np.stack([g.weights for g in gtss])
        got = batch_loss(Tensor(pred_b), targets, weights,
                         kind="l1+nb", lambda_nb=0.5).item()
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_normalized_scaling(self):
        rng = np.random.default_rng(17)
        pred = rng.uniform(0, 1, (2, 3, 4, 4))
        targets = rng.uniform(0, 1, (1, 2, 3, 4, 4))
        weights = np.ones((2, 1))
        raw = batch_loss(Tensor(pred), targets, weights, kind="l2").item()
        norm = batch_loss(Tensor(pred), targets, weights, kind="l2",
                          normalize=True).item()
        np.testing.assert_allclose(norm, raw / (2 * 4 * 4), rtol=1e-12)

    def test_batch_gradient(self):
        rng = np.random.default_rng(18)
        targets = rng.uniform(0, 1, (2, 1, 3, 4, 4))
        weights = np.array([[0.25, 0.75]])
        x0 = Tensor(rng.uniform(0, 1, (1, 3, 4, 4)))
        for kind in ("l2", "l1", "nb", "l1+nb"):
            err = grad_check(
                lambda t, k=kind: batch_loss(t, targets, weights, kind=k), x0)
            assert err < 1e-4, f"{kind}: {err}"

    def test_zero_weight_rows_ignore_padded_targets(self):
        rng = np.random.default_rng(19)
        pred = rng.uniform(0, 1, (1, 3, 4, 4))
        real = rng.uniform(0, 1, (1, 1, 3, 4, 4))
        poison = np.full((1, 1, 3, 4, 4), 1e6)
        targets = np.concatenate([real, poison])
        weights = np.array([[1.0, 0.0]])
        got = batch_loss(Tensor(pred), targets, weights, kind="l1").item()
        want = batch_loss(Tensor(pred), real, np.array([[1.0]]), kind="l1").item()
        np.testing.assert_allclose(got, want, rtol=1e-12)
