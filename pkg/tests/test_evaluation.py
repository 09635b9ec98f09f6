import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calab.evaluation import (
    CurveSet,
    RankReport,
    _cd_groups,
    aulc,
    cd_plot_data,
    cdm,
    dur,
    evaluate_ranks,
    friedman,
    nemenyi_cd,
    rank_methods,
    render_metric_table,
    render_rank_table,
)
from paper_values import ACCURACY_TABLE, EXPECTED_RANKS, EXPECTED_WINS, METHODS


class TestAulc:
    def test_baseline_against_itself_zero(self):
        grid = np.array([8, 9, 10, 11], dtype=float)
        curve = np.array([0.5, 0.6, 0.7, 0.7])
        assert aulc(grid, curve, curve) == 0.0

    def test_uniform_shift_is_linear(self):
        grid = np.linspace(8, 50, 20)
        base = np.linspace(0.5, 0.9, 20)
        assert aulc(grid, base + 0.01, base) == pytest.approx(1.0)

    def test_two_point_trapezoid_hand_value(self):
        grid = np.array([0.0, 1.0])
        assert aulc(grid, np.array([0.5, 1.0]), np.array([0.5, 0.5])) == pytest.approx(25.0)

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError):
            aulc(np.arange(3.0), np.zeros(3), np.zeros(4))


class TestDur:
    def test_baseline_against_itself_one(self):
        grid = np.array([10.0, 20.0, 30.0])
        curve = np.array([0.4, 0.6, 0.8])
        rate, reached = dur(grid, curve, curve)
        assert rate == 1.0 and reached

    def test_half_the_labels(self):
        grid = np.array([10.0, 20.0, 40.0])
        base = np.array([0.3, 0.5, 0.8])
        fast = np.array([0.8, 0.9, 0.95])
        rate, reached = dur(grid, fast, base)
        assert rate == pytest.approx(0.25) and reached

    def test_plateau_below_target_flagged(self):
        grid = np.array([10.0, 20.0, 40.0])
        base = np.array([0.3, 0.5, 0.8])
        slow = np.array([0.3, 0.4, 0.5])
        rate, reached = dur(grid, slow, base)
        assert not reached
        assert rate == pytest.approx(1.0)  # gridmax / n_base = 40/40


class TestCdm:
    def test_identity_zero(self):
        assert cdm([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_hand_value(self):
        assert cdm([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.5)

    def test_disjoint_one_hot_max(self):
        assert cdm([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=6))
    def test_metric_properties(self, raw):
        rng = np.random.default_rng(len(raw))
        p = np.asarray(raw) / np.sum(raw)
        q = rng.dirichlet(np.ones(len(raw)))
        r = rng.dirichlet(np.ones(len(raw)))
        assert cdm(p, q) == pytest.approx(cdm(q, p))
        assert 0.0 <= cdm(p, q) <= 1.0 + 1e-12
        assert cdm(p, r) <= cdm(p, q) + cdm(q, r) + 1e-12


class TestRankMethods:
    def test_benchmark_table_ranks_and_wins(self):
        report = rank_methods(ACCURACY_TABLE, methods=METHODS)
        np.testing.assert_allclose(report.average_ranks, EXPECTED_RANKS, atol=1e-3)
        np.testing.assert_allclose(report.wins, EXPECTED_WINS, atol=1e-9)

    def test_identical_columns_share_mean_rank(self):
        acc = np.tile([[0.5, 0.5, 0.5]], (4, 1))
        report = rank_methods(acc)
        np.testing.assert_allclose(report.average_ranks, [2.0, 2.0, 2.0])

    def test_symmetric_two_dataset_case(self):
        report = rank_methods([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(report.average_ranks, [1.5, 1.5])
        np.testing.assert_allclose(report.wins, [1.0, 1.0])

    def test_single_method_rejected(self):
        with pytest.raises(ValueError):
            rank_methods([[0.5], [0.6]])

    def test_rank_invariance_under_monotone_transform(self):
        rng = np.random.default_rng(0)
        acc = rng.random((6, 4))
        a = rank_methods(acc)
        b = rank_methods(np.exp(3 * acc))
        np.testing.assert_allclose(a.ranks, b.ranks)

    def test_column_permutation_permutes_outputs(self):
        rng = np.random.default_rng(1)
        acc = rng.random((5, 3))
        perm = [2, 0, 1]
        a = rank_methods(acc)
        b = rank_methods(acc[:, perm])
        np.testing.assert_allclose(a.average_ranks[perm], b.average_ranks)
        np.testing.assert_allclose(a.wins[perm], b.wins)


class TestFriedman:
    def test_benchmark_statistic(self):
        stat, reject = friedman(EXPECTED_RANKS, 20, 3, alpha=0.01)
        assert stat == pytest.approx(20.8, abs=0.01)
        assert reject

    def test_identical_ranks_statistic_zero(self):
        stat, reject = friedman([2.0, 2.0, 2.0], 10, 3, alpha=0.05)
        assert stat == pytest.approx(0.0)
        assert not reject

    def test_two_methods_formula_instantiation(self):
        stat, _ = friedman([1.0, 2.0], 10, 2, alpha=0.05)
        expected = 12 * 10 / (2 * 3) * (1 + 4 - 2 * 9 / 4)
        assert stat == pytest.approx(expected)

    def test_nonnegative_for_valid_rank_matrices(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            # average ranks must come from per-dataset permutations of 1..k
            ranks = np.array([rng.permutation([1.0, 2.0, 3.0]) for _ in range(5)])
            stat, _ = friedman(ranks.mean(axis=0), 5, 3, alpha=0.05)
            assert stat >= -1e-9

    def test_input_validation(self):
        with pytest.raises(ValueError):
            friedman([1.0, 2.0], 1, 2, alpha=0.05)
        with pytest.raises(ValueError):
            friedman([1.0, 2.0], 10, 2, alpha=0.02)


class TestNemenyi:
    def test_embedded_q_values(self):
        assert nemenyi_cd(3, 20, 0.01) == pytest.approx(0.92117, abs=1e-3)
        assert nemenyi_cd(3, 20, 0.05) == pytest.approx(0.74093, abs=1e-3)

    def test_cd_shrinks_with_more_datasets(self):
        assert nemenyi_cd(3, 10_000, 0.05) < 0.05

    def test_unsupported_alpha_lists_options(self):
        with pytest.raises(ValueError, match="0.01"):
            nemenyi_cd(3, 20, 0.2)


class TestCdGroups:
    def test_benchmark_grouping(self):
        report = evaluate_ranks(ACCURACY_TABLE, methods=METHODS, alpha=0.01)
        assert report.groups == [["rwm-4ds"], ["rbf-us", "cmm-4ds"]]

    def test_single_method_trivial_group(self):
        assert _cd_groups(["only"], np.array([1.0]), 0.5) == [["only"]]

    def test_all_equal_ranks_one_group(self):
        groups = _cd_groups(["a", "b", "c"], np.array([2.0, 2.0, 2.0]), 0.5)
        assert groups == [["a", "b", "c"]]

    def test_plot_data_structure(self):
        report = evaluate_ranks(ACCURACY_TABLE, methods=METHODS, alpha=0.01)
        data = cd_plot_data(report)
        assert data["format"] == "cd-plot-v1"
        assert data["methods"][0]["name"] == "rwm-4ds"
        assert data["critical_difference"] == pytest.approx(0.921, abs=1e-3)


def test_curveset_validation():
    with pytest.raises(ValueError):
        CurveSet(np.arange(3), {"a": np.zeros(3)}, baseline="missing")
    with pytest.raises(ValueError):
        CurveSet(np.arange(3), {"a": np.zeros(4)}, baseline="a")


def test_render_tables_smoke():
    report = evaluate_ranks(ACCURACY_TABLE, methods=METHODS, alpha=0.01)
    text = render_rank_table(report)
    assert "Rank" in text and "Wins" in text and "CD" in text
    metrics = render_metric_table(
        [{"method": "rbf-us", "aulc": 0.0, "dur": 1.0, "cdm": 0.08}]
    )
    assert "AULC" in metrics
