import json

import numpy as np
import pytest

from calab.mixture import FitDiagnostics, MixtureModel, VIConfig, fit_vi, model_summary


def two_component_1d():
    return MixtureModel(
        weights=[0.5, 0.5], means=[[-1.0], [1.0]], covariances=[[[1.0]], [[1.0]]]
    )


class TestDensities:
    def test_standard_normal_closed_form(self):
        m = MixtureModel(weights=[1.0], means=[[0.0]], covariances=[[[1.0]]])
        assert m.density([0.0]) == pytest.approx(0.3989423, abs=1e-6)

    def test_mixture_is_convex_combination(self):
        c1 = MixtureModel(weights=[1.0], means=[[0.0]], covariances=[[[1.0]]])
        c2 = MixtureModel(weights=[1.0], means=[[3.0]], covariances=[[[2.0]]])
        mix = MixtureModel(
            weights=[0.3, 0.7],
            means=[[0.0], [3.0]],
            covariances=[[[1.0]], [[2.0]]],
        )
        x = [1.234]
        assert mix.density(x) == pytest.approx(0.3 * c1.density(x) + 0.7 * c2.density(x))

    def test_far_point_underflows_without_overflow(self):
        m = MixtureModel(weights=[1.0], means=[[0.0]], covariances=[[[1.0]]])
        val = m.density([50.0])
        assert np.isfinite(val) and 0.0 <= val < 1e-100

    def test_continuous_marginal_integrates_to_one(self):
        m = two_component_1d()
        rng = np.random.default_rng(0)
        lo, hi = -12.0, 12.0
        xs = rng.uniform(lo, hi, 100_000).reshape(-1, 1)
        integral = (hi - lo) * m.density_matrix(xs).mean()
        assert abs(integral - 1.0) < 0.02


class TestResponsibilities:
    def test_symmetry_at_midpoint(self):
        m = two_component_1d()
        assert m.responsibilities([0.0]) == pytest.approx([0.5, 0.5])

    def test_single_component_is_one(self):
        m = MixtureModel(weights=[1.0], means=[[0.0]], covariances=[[[1.0]]])
        assert m.responsibilities([3.7]).tolist() == [1.0]

    def test_logistic_ratio_value(self):
        # at x=1 the two unit Gaussians at -1 and +1 differ by log-density 2
        m = two_component_1d()
        r = m.responsibilities([1.0])
        assert r[1] == pytest.approx(1.0 / (1.0 + np.exp(-2.0)), abs=1e-9)
        assert r[1] == pytest.approx(0.88080, abs=1e-5)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        m = two_component_1d()
        R = m.responsibilities_matrix(rng.normal(size=(200, 1)))
        assert np.allclose(R.sum(axis=1), 1.0, atol=1e-9)

    def test_weight_rescaling_invariance_before_normalization(self):
        # scaling all weights jointly must not change responsibilities
        m1 = two_component_1d()
        m2 = MixtureModel(
            weights=np.array([0.5, 0.5]) * 3.0,  # not normalized on purpose
            means=[[-1.0], [1.0]],
            covariances=[[[1.0]], [[1.0]]],
        )
        x = [0.3]
        assert m1.responsibilities(x) == pytest.approx(m2.responsibilities(x), abs=1e-12)


class TestFit:
    def test_recovers_three_separated_components(self):
        rng = np.random.default_rng(0)
        X = np.vstack(
            [
                rng.normal([0, 0], 0.4, (100, 2)),
                rng.normal([5, 0], 0.4, (100, 2)),
                rng.normal([0, 5], 0.4, (100, 2)),
            ]
        )
        m = fit_vi(X, VIConfig(j_max=10, seed=0))
        assert m.n_components == 3
        assert m.diagnostics.pruned == 7

    def test_single_process_collapses_to_one(self):
        rng = np.random.default_rng(2)
        X = rng.normal([1.0, -1.0], 0.02, (120, 2))
        m = fit_vi(X, VIConfig(j_max=5, seed=0))
        assert m.n_components == 1

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(60, 2))
        a = fit_vi(X, VIConfig(j_max=4, seed=5))
        b = fit_vi(X, VIConfig(j_max=4, seed=5))
        assert np.allclose(a.weights, b.weights, atol=1e-12)
        assert np.allclose(a.means, b.means, atol=1e-12)

    def test_elbo_monotone_within_slack(self):
        rng = np.random.default_rng(4)
        X = np.vstack([rng.normal(-2, 0.5, (60, 2)), rng.normal(2, 0.5, (60, 2))])
        m = fit_vi(X, VIConfig(j_max=6, seed=1))
        trace = m.diagnostics.elbo_trace
        assert len(trace) >= 2
        diffs = np.diff(trace)
        assert diffs.min() >= -1e-8 * max(1.0, abs(trace[-1]))

    def test_j_max_one_returns_single_component(self):
        rng = np.random.default_rng(5)
        m = fit_vi(rng.normal(size=(50, 2)), VIConfig(j_max=1, seed=0))
        assert m.n_components == 1
        assert m.weights[0] == pytest.approx(1.0)

    def test_near_singular_data_does_not_abort(self):
        # all points on a line: covariance rank-deficient without jitter
        rng = np.random.default_rng(6)
        t = rng.normal(size=80)
        X = np.column_stack([t, 2.0 * t])
        m = fit_vi(X, VIConfig(j_max=3, seed=0))
        for j in range(m.n_components):
            assert np.all(np.linalg.eigvalsh(m.covariances[j]) > 0)

    def test_categorical_tables_sum_to_one(self):
        rng = np.random.default_rng(7)
        X = np.vstack([rng.normal(-2, 0.3, (50, 1)), rng.normal(2, 0.3, (50, 1))])
        Xcat = np.vstack([np.zeros((50, 1), int), np.full((50, 1), 1, int)])
        m = fit_vi(X, VIConfig(j_max=4, seed=0), Xcat=Xcat, cat_cards=[2])
        for table in m.cat_tables:
            assert np.allclose(table.sum(axis=1), 1.0, atol=1e-9)
        # component at -2 should prefer category 0
        left = int(np.argmin(m.means[:, 0]))
        assert m.cat_tables[0][left, 0] > 0.9

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(8)
        m = fit_vi(rng.normal(size=(40, 2)), VIConfig(j_max=5, seed=0))
        assert m.weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            fit_vi(np.zeros((1, 2)), VIConfig(j_max=1))
        with pytest.raises(ValueError):
            fit_vi(np.zeros((3, 2)), VIConfig(j_max=5))


class TestSerialization:
    def test_roundtrip_preserves_summary(self, tmp_path):
        rng = np.random.default_rng(9)
        X = np.vstack([rng.normal(-2, 0.4, (40, 2)), rng.normal(2, 0.4, (40, 2))])
        Xcat = rng.integers(0, 3, (80, 1))
        m = fit_vi(X, VIConfig(j_max=4, seed=0), Xcat=Xcat, cat_cards=[3])
        path = tmp_path / "model.json"
        m.save(path)
        m2 = MixtureModel.load(path)
        assert json.loads(path.read_text())["format"] == "mixture-v1"
        assert model_summary(m) == model_summary(m2)
        x = np.array([0.1, -0.2])
        assert m.responsibilities(x, [[1]]) == pytest.approx(
            m2.responsibilities(x, [[1]]), abs=1e-12
        )

    def test_summary_fields(self):
        m = two_component_1d()
        m.diagnostics = FitDiagnostics(elbo=-12.5, n_iter=7, pruned=3)
        s = model_summary(m)
        assert s["n_components"] == 2
        assert s["pruned"] == 3
