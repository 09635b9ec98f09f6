"""Dataset ingestion, z-score normalization, stratified folds, and pool state."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class IngestionError(ValueError):
    """Raised when a CSV row or schema violates the ingestion contract."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "continuous" | "categorical"
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise IngestionError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.categories or len(self.categories) < 2:
                raise IngestionError(
                    f"categorical column {self.name!r} needs >= 2 categories"
                )


@dataclass(frozen=True)
class FeatureSchema:
    """Typed column layout with one designated label column.

    The label column may optionally appear in ``columns`` as categorical;
    its categories then fix the class-name order. Otherwise class names
    are inferred from the data in sorted order.
    """

    columns: tuple[ColumnSpec, ...]
    label: str

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise IngestionError("duplicate column names in schema")
        if not self.label:
            raise IngestionError("schema must designate a label column")

    @property
    def feature_columns(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.name != self.label)

    @property
    def label_categories(self) -> tuple[str, ...] | None:
        for c in self.columns:
            if c.name == self.label:
                return c.categories
        return None

    def continuous_indices(self) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.feature_columns) if c.kind == "continuous"],
            dtype=int,
        )

    def categorical_indices(self) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.feature_columns) if c.kind == "categorical"],
            dtype=int,
        )

    def to_json(self) -> dict:
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.categories is not None:
                entry["categories"] = list(c.categories)
            cols.append(entry)
        return {"columns": cols, "label": self.label}

    @staticmethod
    def from_json(obj: dict) -> "FeatureSchema":
        cols = tuple(
            ColumnSpec(
                name=c["name"],
                kind=c["kind"],
                categories=tuple(c["categories"]) if "categories" in c else None,
            )
            for c in obj["columns"]
        )
        return FeatureSchema(columns=cols, label=obj["label"])


@dataclass
class Dataset:
    """Feature rows (categoricals stored as category indices) plus labels."""

    schema: FeatureSchema
    rows: np.ndarray  # (n, n_features) float64
    labels: np.ndarray  # (n,) int64
    class_names: tuple[str, ...]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.shape[0] != self.labels.shape[0]:
            raise IngestionError("rows and labels length mismatch")
        if self.labels.size and self.labels.max() >= len(self.class_names):
            raise IngestionError("label index out of range of class names")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def continuous(self) -> np.ndarray:
        return self.rows[:, self.schema.continuous_indices()]

    @property
    def categorical(self) -> np.ndarray:
        return self.rows[:, self.schema.categorical_indices()].astype(np.int64)

    def categorical_cardinalities(self) -> list[int]:
        return [
            len(c.categories)
            for c in self.schema.feature_columns
            if c.kind == "categorical"
        ]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.schema, self.rows[idx], self.labels[idx], self.class_names)


def load_schema(schema_path: str | Path) -> FeatureSchema:
    with open(schema_path, "r", encoding="utf-8") as fh:
        return FeatureSchema.from_json(json.load(fh))


def load_dataset(csv_path: str | Path, schema_path: str | Path) -> Dataset:
    """Load a CSV conforming to the JSON schema sidecar.

    Categorical values map to indices in schema category order; the label
    column maps to class indices. Malformed cells raise IngestionError
    naming the offending row and column.
    """
    schema = load_schema(schema_path)
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError("empty CSV: missing header") from None
        needed = [c.name for c in schema.feature_columns] + [schema.label]
        missing = [name for name in needed if name not in header]
        if missing:
            raise IngestionError(f"missing columns {missing} in {csv_path}")
        col_pos = {name: header.index(name) for name in needed}
        raw_rows: list[list[str]] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            if len(rec) != len(header):
                raise IngestionError(f"row {lineno}: expected {len(header)} cells")
            raw_rows.append(rec)
    if not raw_rows:
        raise IngestionError("no data rows")

    label_pos = col_pos[schema.label]
    declared = schema.label_categories
    if declared is not None:
        class_names = tuple(declared)
    else:
        class_names = tuple(sorted({rec[label_pos].strip() for rec in raw_rows}))
    class_index = {name: i for i, name in enumerate(class_names)}

    n = len(raw_rows)
    feats = schema.feature_columns
    rows = np.empty((n, len(feats)), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    for i, rec in enumerate(raw_rows):
        lineno = i + 2
        for k, col in enumerate(feats):
            cell = rec[col_pos[col.name]].strip()
            if cell == "":
                raise IngestionError(f"row {lineno}, column {col.name!r}: missing value")
            if col.kind == "continuous":
                try:
                    rows[i, k] = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"row {lineno}, column {col.name!r}: non-numeric value {cell!r}"
                    ) from None
            else:
                try:
                    rows[i, k] = col.categories.index(cell)
                except ValueError:
                    raise IngestionError(
                        f"row {lineno}, column {col.name!r}: unknown category {cell!r}"
                    ) from None
        lab = rec[label_pos].strip()
        if lab not in class_index:
            raise IngestionError(
                f"row {lineno}, column {schema.label!r}: unknown category {lab!r}"
            )
        labels[i] = class_index[lab]
    return Dataset(schema=schema, rows=rows, labels=labels, class_names=class_names)


def save_dataset(d: Dataset, csv_path: str | Path) -> None:
    """Write a Dataset back to CSV with original category/class names."""
    feats = d.schema.feature_columns
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in feats] + [d.schema.label])
        for i in range(len(d)):
            rec = []
            for k, col in enumerate(feats):
                v = d.rows[i, k]
                if col.kind == "continuous":
                    rec.append(repr(float(v)))
                else:
                    rec.append(col.categories[int(v)])
            rec.append(d.class_names[int(d.labels[i])])
            writer.writerow(rec)


@dataclass
class NormStats:
    """Per continuous column (name -> (mean, population std))."""

    stats: dict[str, tuple[float, float]]

    def to_json(self) -> dict:
        return {k: [m, s] for k, (m, s) in self.stats.items()}


def zscore_fit_apply(
    train: Dataset, others: list[Dataset] | None = None
) -> tuple[list[Dataset], NormStats]:
    """Fit z-score statistics on `train` and apply to train plus `others`.

    Population std; zero-variance columns are centered and their std
    recorded as 0 (no division). Categorical columns untouched.
    """
    others = others or []
    cont_idx = train.schema.continuous_indices()
    names = [c.name for c in train.schema.feature_columns if c.kind == "continuous"]
    stats: dict[str, tuple[float, float]] = {}
    means = np.zeros(len(cont_idx))
    stds = np.ones(len(cont_idx))
    for k, ci in enumerate(cont_idx):
        col = train.rows[:, ci]
        m = float(col.mean())
        s = float(col.std())  # population std (ddof=0)
        means[k] = m
        stds[k] = s if s > 0 else 1.0
        stats[names[k]] = (m, s)
    out = []
    for d in [train] + others:
        rows = d.rows.copy()
        rows[:, cont_idx] = (rows[:, cont_idx] - means) / stds
        out.append(Dataset(d.schema, rows, d.labels.copy(), d.class_names))
    return out, NormStats(stats)


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: np.ndarray  # (n,) fold index per row
    seed: int

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)


def stratified_kfold(d: Dataset, k: int, seed: int) -> FoldSplit:
    """Stratified fold assignment: per class and fold, counts differ by <= 1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    assignments = np.empty(len(d), dtype=np.int64)
    offset = 0
    for c in range(d.n_classes):
        idx = np.flatnonzero(d.labels == c)
        if idx.size < k:
            raise ValueError(
                f"cannot stratify: class {c} has {idx.size} rows but k={k}"
            )
        perm = rng.permutation(idx)
        for pos, row in enumerate(perm):
            assignments[row] = (pos + offset) % k
        offset = (offset + idx.size) % k
    return FoldSplit(k=k, assignments=assignments, seed=seed)


def export_folds_csv(split: FoldSplit, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_index", "fold"])
        for i, f in enumerate(split.assignments):
            writer.writerow([i, int(f)])


@dataclass
class PoolState:
    """Bookkeeping of acquired labels for one learner run."""

    labeled_ids: list[int] = field(default_factory=list)
    acquired_labels: dict[int, int] = field(default_factory=dict)
    unlabeled_ids: set[int] = field(default_factory=set)

    @staticmethod
    def fresh(train_ids) -> "PoolState":
        return PoolState(unlabeled_ids=set(int(i) for i in train_ids))

    def acquire(self, row_id: int, label: int) -> None:
        row_id = int(row_id)
        if row_id in self.unlabeled_ids:
            self.unlabeled_ids.discard(row_id)
            self.labeled_ids.append(row_id)
        elif row_id not in self.labeled_ids:
            raise KeyError(f"row {row_id} is not part of this pool")
        self.acquired_labels[row_id] = int(label)

    def labeled_with_labels(self) -> list[int]:
        return [i for i in self.labeled_ids if i in self.acquired_labels]

    def sorted_unlabeled(self) -> np.ndarray:
        return np.array(sorted(self.unlabeled_ids), dtype=int)

    @property
    def n_labeled(self) -> int:
        return len(self.labeled_ids)


def mixed_distance_matrix(A: np.ndarray, B: np.ndarray, cont_idx, cat_idx) -> np.ndarray:
    """Euclidean over continuous dims plus unit mismatch per categorical dim."""
    d2 = np.zeros((A.shape[0], B.shape[0]))
    if len(cont_idx):
        Ac, Bc = A[:, cont_idx], B[:, cont_idx]
        d2 += (
            np.sum(Ac * Ac, axis=1)[:, None]
            + np.sum(Bc * Bc, axis=1)[None, :]
            - 2.0 * Ac @ Bc.T
        )
        np.maximum(d2, 0.0, out=d2)
    for ci in cat_idx:
        d2 += (A[:, ci][:, None] != B[:, ci][None, :]).astype(float)
    return np.sqrt(d2)


def init_pool(
    dataset: Dataset,
    train_ids,
    n_init: int,
    mixture,
    seed: int,
) -> PoolState:
    """Choose the initial query set by density-weighted farthest-first traversal.

    First pick: pool density argmax. Each next pick maximizes
    density(x) * min-distance-to-chosen. Exact score ties are broken by a
    seed-shuffled preference order, so runs are reproducible.
    """
    train_ids = np.asarray(sorted(int(i) for i in train_ids), dtype=int)
    if n_init > train_ids.size:
        raise ValueError("n_init exceeds pool size")
    state = PoolState.fresh(train_ids)
    if n_init == 0:
        return state

    rows = dataset.rows[train_ids]
    dens = mixture.density_matrix(
        dataset.continuous[train_ids], dataset.categorical[train_ids]
    )
    cont_idx = dataset.schema.continuous_indices()
    cat_idx = dataset.schema.categorical_indices()
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(train_ids.size)

    chosen: list[int] = []
    chosen_mask = np.zeros(train_ids.size, dtype=bool)
    min_dist = np.full(train_ids.size, np.inf)
    for step in range(n_init):
        score = dens if step == 0 else dens * min_dist
        score = np.where(chosen_mask, -np.inf, score)
        best = np.flatnonzero(score == score.max())
        pick = best[np.argmin(tiebreak[best])] if best.size > 1 else best[0]
        chosen.append(int(pick))
        chosen_mask[pick] = True
        d = mixed_distance_matrix(rows, rows[pick : pick + 1], cont_idx, cat_idx)[:, 0]
        np.minimum(min_dist, d, out=min_dist)

    for local in chosen:
        rid = int(train_ids[local])
        state.unlabeled_ids.discard(rid)
        state.labeled_ids.append(rid)
    return state
