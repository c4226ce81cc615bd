import numpy as np
import pytest

from ledgercluster import dimred
from ledgercluster.errors import ShapeMismatch, TooFewPoints


def _blobs(seed=0, n_per=30, sep=20.0, sigma=1.0, d=6):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, sigma, size=(n_per, d))
    b = rng.normal(sep, sigma, size=(n_per, d))
    return np.vstack([a, b]), np.array([0] * n_per + [1] * n_per)


class TestPca:
    def test_planar_data_exact(self):
        rng = np.random.default_rng(0)
        basis = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        coords = rng.standard_normal((40, 2))
        points = coords @ basis.T + 3.0
        proj = dimred.pca_fit(points, 2)
        reduced = dimred.pca_transform(proj, points)
        back = dimred.pca_inverse(proj, reduced)
        assert np.max(np.abs(back - points)) < 1e-8

    def test_full_rank_is_isometry(self):
        rng = np.random.default_rng(1)
        points = rng.standard_normal((20, 4))
        proj = dimred.pca_fit(points, 4)
        reduced = dimred.pca_transform(proj, points)
        d_orig = np.linalg.norm(points[:, None] - points[None, :], axis=2)
        d_new = np.linalg.norm(reduced[:, None] - reduced[None, :], axis=2)
        assert np.max(np.abs(d_orig - d_new)) < 1e-8

    def test_three_point_hand_eigensolve(self):
        # Covariance of three points, eigendecomposed by hand with numpy as
        # the independent route.
        points = np.array([[0.0, 0.0], [2.0, 1.0], [4.0, 0.0]])
        proj = dimred.pca_fit(points, 2)
        cov = np.cov(points.T, bias=True)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals = evals[order]
        evecs = evecs[:, order]
        assert np.allclose(proj.explained_variance, evals, atol=1e-10)
        for i in range(2):
            dot = abs(float(proj.components[:, i] @ evecs[:, i]))
            assert dot == pytest.approx(1.0, abs=1e-10)

    def test_components_orthonormal(self):
        rng = np.random.default_rng(2)
        proj = dimred.pca_fit(rng.standard_normal((30, 7)), 4)
        gram = proj.components.T @ proj.components
        assert np.max(np.abs(gram - np.eye(4))) < 1e-8

    def test_explained_variance_non_increasing(self):
        rng = np.random.default_rng(3)
        proj = dimred.pca_fit(rng.standard_normal((50, 6)), 6)
        ev = proj.explained_variance
        assert np.all(np.diff(ev) <= 1e-12)

    def test_training_mean_maps_to_origin(self):
        rng = np.random.default_rng(4)
        points = rng.standard_normal((25, 5)) + 7.0
        proj = dimred.pca_fit(points, 3)
        out = dimred.pca_transform(proj, points.mean(axis=0, keepdims=True))
        assert np.max(np.abs(out)) < 1e-8

    def test_new_point_matches_hand_projection(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        proj = dimred.pca_fit(points, 2)
        new = np.array([[2.0, 2.0]])
        by_hand = (new - points.mean(axis=0)) @ proj.components
        assert np.allclose(dimred.pca_transform(proj, new), by_hand)

    def test_reconstruction_bounded_by_discarded_variance(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((60, 8))
        proj_full = dimred.pca_fit(points, 8)
        proj = dimred.pca_fit(points, 3)
        back = dimred.pca_inverse(proj, dimred.pca_transform(proj, points))
        mse = float(np.mean(np.sum((points - back) ** 2, axis=1)))
        discarded = float(np.sum(proj_full.explained_variance[3:]))
        assert mse <= discarded + 1e-6

    def test_shape_mismatch(self):
        proj = dimred.pca_fit(np.random.default_rng(0).standard_normal((10, 4)), 2)
        with pytest.raises(ShapeMismatch):
            dimred.pca_transform(proj, np.zeros((3, 5)))


class TestUmap:
    def test_sigma_bisection_hits_target(self):
        distances = np.array([0.5, 1.0, 2.0])
        target = float(np.log2(3))
        sigma, rho = dimred.smooth_knn_sigma(distances, target)
        assert rho == 0.5
        total = np.sum(np.exp(-np.maximum(distances - rho, 0) / sigma))
        assert total == pytest.approx(target, abs=1e-5)

    def test_membership_matrix_properties(self):
        points, _ = _blobs(n_per=20)
        w = dimred.fuzzy_membership_matrix(points, n_neighbors=5)
        assert np.all(w >= 0) and np.all(w <= 1 + 1e-12)
        assert np.max(np.abs(w - w.T)) < 1e-12

    def test_blob_separation_preserved(self):
        points, labels = _blobs(seed=7)
        emb = dimred.umap_fit_transform(points, out_dim=2, n_neighbors=10,
                                        epochs=100, seed=0)
        intra = np.mean([
            np.linalg.norm(emb[i] - emb[j])
            for i in range(len(emb)) for j in range(len(emb))
            if i < j and labels[i] == labels[j]
        ])
        inter = np.mean([
            np.linalg.norm(emb[i] - emb[j])
            for i in range(len(emb)) for j in range(len(emb))
            if i < j and labels[i] != labels[j]
        ])
        assert inter > intra

    def test_deterministic_given_seed(self):
        points, _ = _blobs(seed=8, n_per=18)
        e1 = dimred.umap_fit_transform(points, n_neighbors=8, epochs=50, seed=3)
        e2 = dimred.umap_fit_transform(points, n_neighbors=8, epochs=50, seed=3)
        assert np.array_equal(e1, e2)
        assert np.all(np.isfinite(e1))

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            dimred.umap_fit(np.zeros((10, 3)), n_neighbors=15)

    def test_out_of_sample_lands_near_blob(self):
        points, labels = _blobs(seed=9, n_per=20)
        proj = dimred.umap_fit(points, n_neighbors=8, epochs=100, seed=1)
        emb = proj.train_embedding
        new = proj.transform(points[:3] + 0.01)
        blob0_centre = emb[labels == 0].mean(axis=0)
        blob1_centre = emb[labels == 1].mean(axis=0)
        for row in new:
            assert np.linalg.norm(row - blob0_centre) < np.linalg.norm(row - blob1_centre)


class TestIdentity:
    def test_passthrough_array(self):
        x = np.arange(6.0).reshape(2, 3)
        assert dimred.identity(x) is x

    def test_projection_object_passthrough(self):
        proj = dimred.identity_projection(3)
        x = np.random.default_rng(0).standard_normal((4, 3))
        assert np.array_equal(proj.transform(x), x)

    def test_empty_like_shapes(self):
        x = np.zeros((0, 5))
        assert dimred.identity(x).shape == (0, 5)
