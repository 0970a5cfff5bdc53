import itertools

import numpy as np
import pytest

from rawnet.backend import (PCA, BackendDNN, RepresentativeCodebook, TrialPair,
                            b_vector, backend_dnn_score, concat_mul, cosine_score,
                            feature_dim, fit_codebook, kmeans, pair_feature,
                            r_vector, rb_vector)


def pair(e, t, label=None):
    return TrialPair(np.asarray(e, dtype=np.float64),
                     np.asarray(t, dtype=np.float64), label)


class TestCosine:
    def test_fixtures(self):
        assert cosine_score(pair([1, 0], [1, 0])) == pytest.approx(1.0)
        assert cosine_score(pair([1, 0], [-1, 0])) == pytest.approx(-1.0)
        assert cosine_score(pair([1, 0], [0, 1])) == pytest.approx(0.0)
        assert cosine_score(pair([1, 1], [1, 0])) == pytest.approx(1 / np.sqrt(2))

    def test_scale_invariance(self, rng):
        e, t = rng.standard_normal(8), rng.standard_normal(8)
        a = cosine_score(pair(e, t))
        b = cosine_score(pair(3.7 * e, 0.01 * t))
        assert a == pytest.approx(b, rel=1e-12)

    def test_zero_vector_warns(self):
        with pytest.warns(UserWarning, match="near-zero"):
            s = cosine_score(pair([0.0, 0.0], [1.0, 0.0]))
        assert np.isfinite(s)


class TestPairFeatures:
    def test_b_vector_layout_and_dim(self, rng):
        e, t = rng.standard_normal(4), rng.standard_normal(4)
        v = b_vector(pair(e, t))
        assert v.shape == (12,)
        np.testing.assert_array_equal(v, np.concatenate([e + t, e - t, e * t]))

    def test_b_vector_swap_flips_only_difference_block(self, rng):
        e, t = rng.standard_normal(5), rng.standard_normal(5)
        v1, v2 = b_vector(pair(e, t)), b_vector(pair(t, e))
        np.testing.assert_allclose(v1[:5], v2[:5])
        np.testing.assert_allclose(v1[5:10], -v2[5:10])
        np.testing.assert_allclose(v1[10:], v2[10:])

    def test_concat_mul_layout_and_swap(self, rng):
        e, t = rng.standard_normal(4), rng.standard_normal(4)
        v = concat_mul(pair(e, t))
        assert v.shape == (12,)
        np.testing.assert_array_equal(v, np.concatenate([e, t, e * t]))
        w = concat_mul(pair(t, e))
        np.testing.assert_array_equal(v[:4], w[4:8])
        np.testing.assert_array_equal(v[8:], w[8:])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dims differ"):
            pair([1.0, 2.0], [1.0])

    def test_pair_feature_dispatch_and_dims(self, rng):
        emb = rng.standard_normal((20, 6))
        cb = fit_codebook(emb, k=3, d_pca=4, seed=0)
        p = pair(emb[0], emb[1])
        for kind in ("b-vector", "concat-mul", "rb-vector"):
            v = pair_feature(kind, p, codebook=cb)
            assert v.shape == (feature_dim(kind, 6, codebook=cb),)
        assert feature_dim("rb-vector", 6, codebook=cb) == 18 + 2 * 3 * 4
        with pytest.raises(ValueError, match="unknown"):
            pair_feature("nope", p)


class TestKMeans:
    def brute_force(self, x, k):
        """Exhaustive best partition-induced centroids on tiny point sets."""
        n = len(x)
        best, best_inertia = None, np.inf
        for assign in itertools.product(range(k), repeat=n):
            assign = np.array(assign)
            if len(set(assign.tolist())) < k:
                continue
            cents = np.stack([x[assign == j].mean(axis=0) for j in range(k)])
            inertia = sum(((x[i] - cents[assign[i]]) ** 2).sum() for i in range(n))
            if inertia < best_inertia:
                best_inertia, best = inertia, cents
        return best, best_inertia

    def test_matches_exhaustive_on_separated_points(self, rng):
        blobs = np.concatenate([
            rng.standard_normal((3, 2)) * 0.05 + [0, 0],
            rng.standard_normal((3, 2)) * 0.05 + [10, 0],
            rng.standard_normal((3, 2)) * 0.05 + [0, 10],
        ])
        cents, assign, hist = kmeans(blobs, 3, seed=1)
        best, best_inertia = self.brute_force(blobs, 3)
        np.testing.assert_allclose(
            np.sort(cents, axis=0), np.sort(best, axis=0), atol=1e-9)
        np.testing.assert_allclose(hist[-1], best_inertia, rtol=1e-9)

    def test_inertia_non_increasing(self, rng):
        x = rng.standard_normal((50, 3))
        _, _, hist = kmeans(x, 5, seed=2)
        assert all(a >= b - 1e-9 for a, b in zip(hist, hist[1:]))

    def test_coincident_points_no_empty_clusters(self):
        x = np.zeros((6, 2))
        x[5] = [1.0, 1.0]
        cents, assign, _ = kmeans(x, 2, seed=0)
        assert set(assign.tolist()) == {0, 1}

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError, match="at least k"):
            kmeans(np.zeros((2, 3)), 5)


class TestPCA:
    def test_components_orthonormal(self, rng):
        x = rng.standard_normal((40, 8)) @ rng.standard_normal((8, 8))
        p = PCA(5).fit(x)
        gram = p.components.T @ p.components
        np.testing.assert_allclose(gram, np.eye(5), atol=1e-6)

    def test_recovers_dominant_direction(self, rng):
        direction = np.array([3.0, 4.0]) / 5.0
        x = np.outer(rng.standard_normal(100) * 10.0, direction)
        x += rng.standard_normal((100, 2)) * 0.01
        p = PCA(1).fit(x)
        c = p.components[:, 0]
        assert abs(abs(c @ direction) - 1.0) < 1e-3

    def test_transform_centers_data(self, rng):
        x = rng.standard_normal((30, 4)) + 7.0
        p = PCA(2).fit(x)
        z = p.transform(x)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-10)

    def test_too_many_components_rejected(self):
        with pytest.raises(ValueError, match="d_pca"):
            PCA(5).fit(np.zeros((3, 4)))


class TestRbVector:
    def test_dimension_formula(self, rng):
        emb = rng.standard_normal((15, 4))
        cb = fit_codebook(emb, k=2, d_pca=3, seed=0)
        v = rb_vector(pair(emb[0], emb[1]), cb)
        assert v.shape == (3 * 4 + 2 * 2 * 3,)

    def test_r_vector_per_codeword_blocks(self, rng):
        emb = rng.standard_normal((15, 4))
        cb = fit_codebook(emb, k=2, d_pca=3, seed=0)
        r = r_vector(emb[0], cb)
        first = cb.pca.transform(b_vector(pair(cb.vectors[0], emb[0])))
        np.testing.assert_allclose(r[:3], first)

    def test_unfitted_codebook_rejected(self, rng):
        cb = RepresentativeCodebook(vectors=np.zeros((2, 4)), pca=PCA(3))
        with pytest.raises(ValueError, match="fitted codebook"):
            rb_vector(pair(np.zeros(4), np.zeros(4)), cb)


class TestBackendDNN:
    def test_logit_shape_and_probability_range(self, rng):
        model = BackendDNN(12, hidden=16, seed=0)
        feats = rng.standard_normal((5, 12))
        probs = model.score(feats)
        assert probs.shape == (5,)
        assert np.all((probs >= 0) & (probs <= 1))
        assert 0.0 <= backend_dnn_score(feats[0], model) <= 1.0

    def test_feature_dim_mismatch_rejected(self, rng):
        model = BackendDNN(12, hidden=8)
        with pytest.raises(ValueError, match="feature dim"):
            model.score(rng.standard_normal((2, 7)))

    def test_deterministic_for_fixed_seed(self, rng):
        feats = rng.standard_normal((3, 6))
        a = BackendDNN(6, hidden=8, seed=4).score(feats)
        b = BackendDNN(6, hidden=8, seed=4).score(feats)
        np.testing.assert_array_equal(a, b)
