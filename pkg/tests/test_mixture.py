import numpy as np
import pytest

from maskclr.errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    SingularComponentError,
)
from maskclr.mixture import (
    GmmModel,
    detect_outliers,
    gmm_assign,
    gmm_fit,
    select_dims,
)


def blobs_with_scatter(rng, n_blob=400, n_scatter=42, d=4):
    a = rng.normal(np.zeros(d), 0.3, size=(n_blob, d))
    b = rng.normal(np.full(d, 6.0), 0.3, size=(n_blob, d))
    scatter = rng.uniform(-8.0, 14.0, size=(n_scatter, d))
    return np.vstack([a, b, scatter]), np.arange(2 * n_blob, 2 * n_blob + n_scatter)


class TestFit:
    def test_single_gaussian_recovers_mle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(2.5, 1.3, size=(500, 3))
        m = gmm_fit(x, 1, seed=0)
        assert m.weights[0] == 1.0
        # K=1 EM is the closed-form MLE in one step
        assert np.abs(m.means[0] - x.mean(axis=0)).max() < 1e-9
        assert np.abs(m.variances[0] - x.var(axis=0)).max() < 1e-9
        sigma_of_mean = x.std(axis=0) / np.sqrt(500)
        assert np.all(np.abs(m.means[0] - x.mean(axis=0)) < 3 * sigma_of_mean)

    def test_scatter_lands_in_lowest_weight_component(self):
        rng = np.random.default_rng(1)
        x, scatter_idx = blobs_with_scatter(rng)
        m = gmm_fit(x, 3, seed=0)
        labels, _ = gmm_assign(m, x)
        low = int(np.argmin(m.weights))
        captured = (labels[scatter_idx] == low).mean()
        assert captured >= 0.8

    def test_log_likelihood_trace_non_decreasing(self):
        rng = np.random.default_rng(2)
        for seed in range(5):
            x = rng.normal(size=(200, 5)) + rng.integers(0, 3, size=(200, 1)) * 4.0
            m = gmm_fit(x, 3, seed=seed)
            tr = m.log_likelihood_trace
            assert all(tr[i + 1] >= tr[i] - 1e-9 for i in range(len(tr) - 1))

    def test_weights_form_a_simplex(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(300, 4))
        m = gmm_fit(x, 3, seed=1)
        assert np.all(m.weights > 0.0)
        assert abs(m.weights.sum() - 1.0) <= 1e-12

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(250, 4))
        a = gmm_fit(x, 3, seed=9)
        b = gmm_fit(x, 3, seed=9)
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.variances, b.variances)
        assert np.array_equal(a.weights, b.weights)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ConfigurationError):
            gmm_fit(np.zeros((5, 4)), 3)

    def test_identical_points_collapse_to_singular_error(self):
        x = np.tile([1.0, 2.0], (40, 1))
        with pytest.raises(SingularComponentError):
            gmm_fit(x, 2, seed=0)

    def test_outlier_component_is_broadest(self):
        rng = np.random.default_rng(5)
        x, _ = blobs_with_scatter(rng)
        m = gmm_fit(x, 3, seed=0)
        avg_var = m.variances.mean(axis=1)
        assert m.outlier_component == int(np.argmax(avg_var))


class TestAssign:
    def _fitted(self, seed=0):
        rng = np.random.default_rng(6)
        x, _ = blobs_with_scatter(rng)
        return gmm_fit(x, 3, seed=seed), x

    def test_responsibility_rows_sum_to_one(self):
        m, x = self._fitted()
        _, resp = gmm_assign(m, x)
        assert np.abs(resp.sum(axis=1) - 1.0).max() <= 1e-12
        assert np.all(resp >= 0.0) and np.all(resp <= 1.0)

    def test_point_at_tight_mean_is_confident(self):
        m = GmmModel(
            weights=np.array([0.5, 0.5]),
            means=np.array([[0.0, 0.0], [5.0, 5.0]]),
            variances=np.full((2, 2), 0.01),
            outlier_component=1,
        )
        _, resp = gmm_assign(m, np.array([[0.0, 0.0]]))
        assert resp[0, 0] > 0.99

    def test_assignment_follows_component_relabeling(self):
        m, x = self._fitted()
        labels, _ = gmm_assign(m, x)
        perm = np.array([2, 0, 1])
        permuted = GmmModel(
            weights=m.weights[perm],
            means=m.means[perm],
            variances=m.variances[perm],
            outlier_component=int(np.argwhere(perm == m.outlier_component)[0]),
        )
        relabeled, _ = gmm_assign(permuted, x)
        inverse = np.argsort(perm)
        assert np.array_equal(relabeled, inverse[labels])

    def test_dimension_mismatch_rejected(self):
        m, _ = self._fitted()
        with pytest.raises(DimensionError):
            gmm_assign(m, np.zeros((3, 7)))


class TestDetectOutliers:
    def test_planted_scatter_recovered(self):
        rng = np.random.default_rng(7)
        x, scatter_idx = blobs_with_scatter(rng)
        m = gmm_fit(x, 3, seed=0)
        report = detect_outliers(m, x)
        found = set(int(i) for i in report.outlier_indices)
        planted = set(int(i) for i in scatter_idx)
        recall = len(found & planted) / len(planted)
        precision = len(found & planted) / max(len(found), 1)
        assert recall >= 0.8
        assert precision >= 0.5

    def test_clean_data_has_few_false_positives(self):
        rng = np.random.default_rng(8)
        n = 600
        x = np.vstack(
            [rng.normal(0.0, 0.4, size=(n // 2, 4)), rng.normal(5.0, 0.4, size=(n // 2, 4))]
        )
        m = gmm_fit(x, 3, seed=0)
        report = detect_outliers(m, x)
        assert len(report.outlier_ids) <= 0.02 * n

    def test_populations_sum_to_n(self):
        rng = np.random.default_rng(9)
        x, _ = blobs_with_scatter(rng)
        m = gmm_fit(x, 3, seed=0)
        report = detect_outliers(m, x, ids=[f"s{i}" for i in range(len(x))])
        assert sum(report.component_populations) == len(x)
        assert all(i.startswith("s") for i in report.outlier_ids)
        assert report.outlier_responsibility.shape == (len(x),)

    def test_id_length_mismatch(self):
        rng = np.random.default_rng(10)
        x, _ = blobs_with_scatter(rng)
        m = gmm_fit(x, 3, seed=0)
        with pytest.raises(DimensionError):
            detect_outliers(m, x, ids=["a"])


class TestSelectDims:
    def test_full_width_is_identity_projection(self):
        x = np.random.default_rng(11).normal(size=(10, 32))
        proj, idx = select_dims(x, 32, seed=0)
        assert idx == list(range(32))
        assert np.array_equal(proj, x)

    def test_fixed_seed_repeats_indices(self):
        x = np.random.default_rng(12).normal(size=(10, 32))
        _, a = select_dims(x, 3, seed=4)
        _, b = select_dims(x, 3, seed=4)
        assert a == b

    def test_columns_are_bit_equal(self):
        x = np.random.default_rng(13).normal(size=(20, 32))
        proj, idx = select_dims(x, 3, seed=5)
        for out_col, src_col in enumerate(idx):
            assert np.array_equal(proj[:, out_col], x[:, src_col])

    def test_too_many_dims_rejected(self):
        with pytest.raises(ContractError):
            select_dims(np.zeros((5, 4)), 5)
