import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ledgercluster import losses, networks
from ledgercluster.errors import ShapeMismatch, UnsupportedArchitecture
from ledgercluster.losses import (
    AssignmentMatrix,
    ClusteringLayer,
    cid,
    clustering_loss,
    euclid,
    kl_divergence,
    recon_loss,
    soft_assign,
    target_distribution,
)


class TestReconLoss:
    def test_identity_is_zero(self):
        x = np.random.default_rng(0).standard_normal((3, 10))
        assert recon_loss(x, x) == 0.0

    def test_hand_value_no_length_average(self):
        assert recon_loss([[1.0, 2.0]], [[1.0, 0.0]]) == pytest.approx(4.0)

    def test_duplicating_rows_preserves_mean(self):
        x = np.random.default_rng(1).standard_normal((4, 6))
        xr = np.random.default_rng(2).standard_normal((4, 6))
        v1 = recon_loss(x, xr)
        v2 = recon_loss(np.vstack([x, x]), np.vstack([xr, xr]))
        assert v1 == pytest.approx(v2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            recon_loss(np.zeros((2, 3)), np.zeros((2, 4)))


class TestLayerwiseLoss:
    def _lo(self, pairs):
        return networks.LayerwiseOutputs(pairs=pairs)

    def test_equal_pairs_zero(self):
        a = np.ones((2, 5))
        assert losses.layerwise_recon_loss(self._lo([(a, a.copy())])) == 0.0

    def test_hand_single_pair(self):
        z = np.array([[1.0, 1.0]])
        zr = np.zeros((1, 2))
        assert losses.layerwise_recon_loss(self._lo([(z, zr)])) == pytest.approx(1.0)

    def test_size_normalization(self):
        # Same per-element error at twice the width contributes the same.
        z1 = np.full((1, 4), 0.5)
        z2 = np.full((1, 8), 0.5)
        small = losses.layerwise_recon_loss(self._lo([(z1, np.zeros_like(z1))]))
        large = losses.layerwise_recon_loss(self._lo([(z2, np.zeros_like(z2))]))
        assert small == pytest.approx(large)


class TestElbo:
    def test_kl_zero_at_standard_normal(self):
        assert losses.gaussian_kl(np.zeros((1, 2)), np.zeros((1, 2))) == 0.0

    def test_kl_hand_value(self):
        assert losses.gaussian_kl(np.array([[1.0, 0.0]]), np.zeros((1, 2))) == pytest.approx(0.5)

    def test_same_seed_same_value(self):
        ae = networks.build_autoencoder("FCNN", 20, 4, seed=0, variational=True)
        x = np.random.default_rng(3).standard_normal((4, 20))
        assert losses.elbo_loss(ae, x, seed=11) == losses.elbo_loss(ae, x, seed=11)

    def test_requires_gaussian_head(self):
        ae = networks.build_autoencoder("DTC", 20, 4, seed=0)
        with pytest.raises(UnsupportedArchitecture):
            losses.elbo_loss(ae, np.zeros((2, 20)), seed=0)


class TestSoftAssign:
    def _layer(self, centroids, metric="euclid"):
        return ClusteringLayer(centroids=np.asarray(centroids, float), metric=metric)

    def test_equidistant_uniform(self):
        layer = self._layer([[1.0, 0.0], [-1.0, 0.0]])
        q = soft_assign(layer, np.array([[0.0, 0.0]])).q
        assert np.allclose(q, [[0.5, 0.5]])

    def test_hand_distances(self):
        # alpha=1, distances (0, 3) -> (1, 0.25) -> (0.8, 0.2)
        layer = self._layer([[0.0], [3.0]])
        q = soft_assign(layer, np.array([[0.0]])).q
        assert np.allclose(q, [[0.8, 0.2]])

    def test_centroid_permutation_equivariance(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((6, 3))
        c = rng.standard_normal((4, 3))
        q1 = soft_assign(self._layer(c), z).q
        perm = [2, 0, 3, 1]
        q2 = soft_assign(self._layer(c[perm]), z).q
        assert np.allclose(q1[:, perm], q2)

    @given(arrays(np.float64, (7, 3), elements=st.floats(-5, 5)))
    @settings(max_examples=50, deadline=None)
    def test_rows_sum_to_one_and_positive(self, z):
        layer = self._layer(np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 1.0]]))
        q = soft_assign(layer, z).q
        assert np.max(np.abs(q.sum(axis=1) - 1.0)) < 1e-9
        assert np.all(q > 0)


class TestTargetDistribution:
    def test_one_hot_fixed_point(self):
        q = np.array([[1.0, 0.0], [0.0, 1.0]])
        p = target_distribution(AssignmentMatrix(q=q)).p
        assert np.allclose(p, q)

    def test_hand_two_rows(self):
        # f = (1.4, 0.6); row1: (0.64/1.4, 0.04/0.6) normalized.
        q = np.array([[0.8, 0.2], [0.6, 0.4]])
        p = target_distribution(AssignmentMatrix(q=q)).p
        row1 = np.array([0.64 / 1.4, 0.04 / 0.6])
        row2 = np.array([0.36 / 1.4, 0.16 / 0.6])
        expected = np.vstack([row1 / row1.sum(), row2 / row2.sum()])
        assert np.allclose(p, expected, atol=1e-12)

    def test_uniform_balanced_stays_uniform(self):
        q = np.full((6, 3), 1.0 / 3.0)
        p = target_distribution(AssignmentMatrix(q=q)).p
        assert np.allclose(p, q)

    def test_sharpening_on_balanced_clusters(self):
        rng = np.random.default_rng(4)
        raw = rng.uniform(0.1, 1.0, size=(40, 4))
        q = raw / raw.sum(axis=1, keepdims=True)
        # Balance the columns so f_j are equal, then sharpening must not
        # reduce the per-row max.
        q = np.vstack([q, q[:, ::-1]])
        p = target_distribution(AssignmentMatrix(q=q)).p
        assert np.all(p.max(axis=1) >= q.max(axis=1) - 1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        raw = rng.uniform(0.01, 1.0, size=(50, 5))
        q = raw / raw.sum(axis=1, keepdims=True)
        p = target_distribution(AssignmentMatrix(q=q)).p
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-9


class TestKlDivergence:
    def test_gibbs_equality(self):
        q = np.array([[0.3, 0.7], [0.5, 0.5]])
        assert kl_divergence(q, q) == 0.0

    def test_hand_value(self):
        assert kl_divergence(np.array([[0.5, 0.5]]),
                             np.array([[1.0, 0.0]])) == pytest.approx(np.log(2))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.uniform(0.01, 1, (8, 4))
        q /= q.sum(axis=1, keepdims=True)
        p = rng.uniform(0.0, 1, (8, 4))
        p /= p.sum(axis=1, keepdims=True)
        assert kl_divergence(q, p) >= 0.0


class TestClusteringLoss:
    def test_zero_when_perfect(self):
        x = np.ones((2, 4))
        q = np.array([[0.5, 0.5], [0.5, 0.5]])
        assert clustering_loss(x, x, q, q) == 0.0

    def test_reduces_to_reconstruction_when_p_equals_q(self):
        rng = np.random.default_rng(0)
        x, xr = rng.standard_normal((2, 3, 8))
        q = np.array([[0.4, 0.6], [0.2, 0.8], [0.9, 0.1]])
        assert clustering_loss(x, xr, q, q) == recon_loss(x, xr)

    def test_components_sum(self):
        rng = np.random.default_rng(1)
        x, xr = rng.standard_normal((2, 3, 8))
        q = np.array([[0.4, 0.6], [0.2, 0.8], [0.9, 0.1]])
        p = np.array([[0.5, 0.5], [0.1, 0.9], [0.95, 0.05]])
        total = clustering_loss(x, xr, q, p)
        assert abs(total - (recon_loss(x, xr) + kl_divergence(q, p))) < 1e-12


class TestMetrics:
    def test_euclid_hand(self):
        assert euclid(np.array([0.0, 0.0]), np.array([3.0, 4.0])) == pytest.approx(5.0)
        assert euclid(np.zeros(3), np.zeros(3)) == 0.0

    def test_euclid_symmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, 7))
        assert euclid(a, b) == euclid(b, a)

    def test_cid_equal_complexity_reduces_to_euclid(self):
        a = np.array([0.0, 1.0, 0.0, 1.0])
        b = a + 2.0  # same consecutive differences
        assert cid(a, b) == pytest.approx(euclid(a, b), abs=1e-12)

    def test_cid_hand_value(self):
        a = np.array([0.0, 1.0, 0.0])
        b = np.array([0.0, 2.0, 0.0])
        assert cid(a, b) == pytest.approx(2.0)

    def test_cid_flat_vs_wiggly_hits_guard(self):
        a = np.zeros(3)
        b = np.array([0.0, 1.0, 0.0])
        assert cid(a, b) == pytest.approx(euclid(a, b) * np.sqrt(2) / 1e-12)

    def test_cid_both_flat_factor_one(self):
        a = np.zeros(4)
        b = np.zeros(4)
        assert cid(a, b) == 0.0

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=200, deadline=None)
    def test_cid_dominates_euclid_and_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 6))
        assert cid(a, b) >= euclid(a, b) - 1e-12
        assert cid(a, b) == cid(b, a)


class TestKlCentroidGradients:
    @pytest.mark.parametrize("metric", ["euclid", "cid"])
    def test_matches_finite_differences(self, metric):
        rng = np.random.default_rng(6)
        z = rng.standard_normal((10, 5))
        centroids = rng.standard_normal((3, 5))
        layer = ClusteringLayer(centroids=centroids.copy(), metric=metric)
        p = target_distribution(soft_assign(layer, z)).p
        _, dz, dw = losses.clustering_kl_grads(z, layer, p)

        def value(zv, wv):
            lv = ClusteringLayer(centroids=wv, metric=metric)
            return kl_divergence(soft_assign(lv, zv).q, p)

        eps = 1e-6
        for arr, grad, which in [(z, dz, "z"), (centroids, dw, "w")]:
            flat = arr.ravel()
            for idx in rng.choice(flat.size, 12, replace=False):
                orig = flat[idx]
                flat[idx] = orig + eps
                hi = value(z, centroids)
                flat[idx] = orig - eps
                lo = value(z, centroids)
                flat[idx] = orig
                fd = (hi - lo) / (2 * eps)
                g = grad.ravel()[idx]
                err = abs(fd - g) / max(abs(fd), abs(g), 1e-8)
                assert err < 1e-3, f"{metric}/{which}[{idx}]: fd={fd} g={g}"
