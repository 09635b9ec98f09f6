import json

import numpy as np
import pytest

from calab.data import (
    ColumnSpec,
    Dataset,
    FeatureSchema,
    IngestionError,
    init_pool,
    load_dataset,
    mixed_distance_matrix,
    save_dataset,
    stratified_kfold,
    zscore_fit_apply,
)
from calab.datagen import blobs
from calab.mixture import MixtureModel


@pytest.fixture()
def schema_files(tmp_path):
    schema = {
        "columns": [
            {"name": "x1", "kind": "continuous"},
            {"name": "x3", "kind": "categorical", "categories": ["A", "B", "C"]},
        ],
        "label": "class",
    }
    schema_path = tmp_path / "toy.schema.json"
    schema_path.write_text(json.dumps(schema))
    csv_path = tmp_path / "toy.csv"
    csv_path.write_text("x1,x3,class\n1.0,A,yes\n2.0,B,no\n3.0,C,yes\n")
    return csv_path, schema_path


def test_load_maps_categories_in_schema_order(schema_files):
    d = load_dataset(*schema_files)
    assert len(d) == 3
    assert d.rows[:, 1].tolist() == [0.0, 1.0, 2.0]
    assert d.class_names == ("no", "yes")
    assert d.labels.tolist() == [1, 0, 1]


def test_unknown_category_names_row_and_column(schema_files, tmp_path):
    csv_path = tmp_path / "bad.csv"
    csv_path.write_text("x1,x3,class\n1.0,D,yes\n")
    with pytest.raises(IngestionError, match="x3.*'D'"):
        load_dataset(csv_path, schema_files[1])


def test_header_only_csv_rejected(schema_files, tmp_path):
    csv_path = tmp_path / "empty.csv"
    csv_path.write_text("x1,x3,class\n")
    with pytest.raises(IngestionError, match="no data rows"):
        load_dataset(csv_path, schema_files[1])


def test_non_numeric_continuous_rejected(schema_files, tmp_path):
    csv_path = tmp_path / "bad2.csv"
    csv_path.write_text("x1,x3,class\noops,A,yes\n")
    with pytest.raises(IngestionError, match="x1"):
        load_dataset(csv_path, schema_files[1])


def test_missing_column_rejected(schema_files, tmp_path):
    csv_path = tmp_path / "bad3.csv"
    csv_path.write_text("x1,class\n1.0,yes\n")
    with pytest.raises(IngestionError, match="x3"):
        load_dataset(csv_path, schema_files[1])


def test_roundtrip_identical(schema_files, tmp_path):
    d = load_dataset(*schema_files)
    out = tmp_path / "copy.csv"
    save_dataset(d, out)
    d2 = load_dataset(out, schema_files[1])
    assert np.array_equal(d.rows, d2.rows)
    assert np.array_equal(d.labels, d2.labels)
    assert d.class_names == d2.class_names


def test_schema_validation():
    with pytest.raises(IngestionError):
        ColumnSpec("x", "categorical", ("only",))
    with pytest.raises(IngestionError):
        FeatureSchema(
            columns=(ColumnSpec("a", "continuous"), ColumnSpec("a", "continuous")),
            label="y",
        )


def _simple_dataset(values, labels=None):
    n = len(values)
    schema = FeatureSchema(columns=(ColumnSpec("x", "continuous"),), label="y")
    labels = np.asarray(labels if labels is not None else np.zeros(n), dtype=int)
    names = tuple(f"c{i}" for i in range(max(int(labels.max()) + 1, 2)))
    return Dataset(
        schema=schema,
        rows=np.asarray(values, dtype=float).reshape(n, 1),
        labels=labels,
        class_names=names,
    )


class TestZScore:
    def test_hand_computed_values(self):
        d = _simple_dataset([1.0, 2.0, 3.0])
        (norm,), stats = zscore_fit_apply(d)
        mean, std = stats.stats["x"]
        assert mean == pytest.approx(2.0)
        assert std == pytest.approx(0.8164966, abs=1e-6)
        assert norm.rows[:, 0] == pytest.approx([-1.2247449, 0.0, 1.2247449], abs=1e-6)

    def test_train_columns_centered_and_unit(self):
        rng = np.random.default_rng(0)
        d = _simple_dataset(rng.normal(3.0, 2.5, 100))
        (norm,), _ = zscore_fit_apply(d)
        assert abs(norm.rows[:, 0].mean()) < 1e-9
        assert norm.rows[:, 0].std() == pytest.approx(1.0, abs=1e-12)

    def test_constant_column_not_divided(self):
        d = _simple_dataset([5.0, 5.0, 5.0])
        (norm,), stats = zscore_fit_apply(d)
        assert norm.rows[:, 0].tolist() == [0.0, 0.0, 0.0]
        assert stats.stats["x"][1] == 0.0

    def test_test_fold_uses_train_statistics(self):
        train = _simple_dataset([0.0, 2.0])
        test = _simple_dataset([10.0])
        (_, norm_test), stats = zscore_fit_apply(train, [test])
        assert stats.stats["x"] == (1.0, 1.0)
        assert norm_test.rows[0, 0] == pytest.approx(9.0)

    def test_categorical_untouched(self, schema_files):
        d = load_dataset(*schema_files)
        (norm,), _ = zscore_fit_apply(d)
        assert np.array_equal(norm.rows[:, 1], d.rows[:, 1])


class TestStratifiedKFold:
    def test_exact_divisibility(self):
        d = _simple_dataset(np.arange(10), labels=[0] * 5 + [1] * 5)
        split = stratified_kfold(d, 5, seed=0)
        for f in range(5):
            test = split.test_indices(f)
            assert test.size == 2
            assert set(d.labels[test]) == {0, 1}

    def test_proportional_counts(self):
        d = _simple_dataset(np.arange(100), labels=[0] * 60 + [1] * 40)
        split = stratified_kfold(d, 5, seed=3)
        for f in range(5):
            test = split.test_indices(f)
            counts = np.bincount(d.labels[test], minlength=2)
            assert counts.tolist() == [12, 8]

    def test_balance_within_one(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 3, 83)
        labels[:9] = [0, 1, 2] * 3  # every class populated
        d = _simple_dataset(np.arange(83), labels=labels)
        split = stratified_kfold(d, 4, seed=7)
        for c in range(3):
            total = int((labels == c).sum())
            per_fold = [
                int((d.labels[split.test_indices(f)] == c).sum()) for f in range(4)
            ]
            ideal = total / 4
            assert all(abs(p - ideal) <= 1 for p in per_fold)

    def test_deterministic(self):
        d = _simple_dataset(np.arange(30), labels=[0, 1] * 15)
        a = stratified_kfold(d, 5, seed=11)
        b = stratified_kfold(d, 5, seed=11)
        assert np.array_equal(a.assignments, b.assignments)

    def test_small_class_rejected(self):
        d = _simple_dataset(np.arange(6), labels=[0, 0, 0, 0, 0, 1])
        with pytest.raises(ValueError, match="cannot stratify"):
            stratified_kfold(d, 2, seed=0)


class TestInitPool:
    def _mixture(self):
        return MixtureModel(
            weights=[0.5, 0.5],
            means=[[-2.0, 0.0], [2.0, 0.0]],
            covariances=[np.eye(2) * 0.25, np.eye(2) * 0.25],
        )

    def _dataset(self):
        rng = np.random.default_rng(5)
        rows = np.vstack(
            [rng.normal([-2, 0], 0.3, (20, 2)), rng.normal([2, 0], 0.3, (20, 2))]
        )
        schema = FeatureSchema(
            columns=(ColumnSpec("x1", "continuous"), ColumnSpec("x2", "continuous")),
            label="y",
        )
        return Dataset(schema, rows, np.zeros(40, dtype=int), ("a", "b"))

    def test_single_pick_is_density_argmax(self):
        d = self._dataset()
        m = self._mixture()
        pool = init_pool(d, range(40), 1, m, seed=0)
        dens = m.density_matrix(d.continuous)
        assert pool.labeled_ids == [int(np.argmax(dens))]

    def test_two_picks_cover_both_clusters(self):
        d = self._dataset()
        pool = init_pool(d, range(40), 2, self._mixture(), seed=0)
        sides = {d.rows[i, 0] < 0 for i in pool.labeled_ids}
        assert sides == {True, False}

    def test_labels_not_filled_and_disjoint(self):
        d = self._dataset()
        pool = init_pool(d, range(40), 4, self._mixture(), seed=0)
        assert pool.acquired_labels == {}
        assert set(pool.labeled_ids).isdisjoint(pool.unlabeled_ids)
        assert len(pool.labeled_ids) + len(pool.unlabeled_ids) == 40

    def test_zero_init_allowed(self):
        d = self._dataset()
        pool = init_pool(d, range(40), 0, self._mixture(), seed=0)
        assert pool.labeled_ids == [] and len(pool.unlabeled_ids) == 40

    def test_deterministic_under_ties(self):
        rows = np.zeros((5, 2))  # all identical: every score ties exactly
        schema = FeatureSchema(
            columns=(ColumnSpec("x1", "continuous"), ColumnSpec("x2", "continuous")),
            label="y",
        )
        d = Dataset(schema, rows, np.zeros(5, dtype=int), ("a", "b"))
        m = MixtureModel(weights=[1.0], means=[[0.0, 0.0]], covariances=[np.eye(2)])
        a = init_pool(d, range(5), 3, m, seed=9).labeled_ids
        b = init_pool(d, range(5), 3, m, seed=9).labeled_ids
        assert a == b


def test_mixed_distance_hamming_component():
    A = np.array([[0.0, 1.0], [1.0, 2.0]])  # col1 categorical index
    D = mixed_distance_matrix(A, A, cont_idx=np.array([0]), cat_idx=np.array([1]))
    assert D[0, 0] == 0.0
    assert D[0, 1] == pytest.approx(np.sqrt(1.0 + 1.0))


def test_blobs_generator_shapes():
    d = blobs(n_per=10, seed=0)
    assert len(d) == 30 and d.n_classes == 3
