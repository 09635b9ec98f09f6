"""Synthetic benchmark datasets for experiments and tests."""

from __future__ import annotations

import numpy as np

from .data import ColumnSpec, Dataset, FeatureSchema


def _schema_2d(class_names: tuple[str, ...]) -> FeatureSchema:
    return FeatureSchema(
        columns=(
            ColumnSpec("x1", "continuous"),
            ColumnSpec("x2", "continuous"),
            ColumnSpec("class", "categorical", class_names),
        ),
        label="class",
    )


def two_moons(n: int = 1000, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving half circles with Gaussian noise."""
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([upper, lower]) + rng.normal(0.0, noise, (n, 2))
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    perm = rng.permutation(n)
    return Dataset(
        schema=_schema_2d(("neg", "pos")),
        rows=X[perm],
        labels=y[perm],
        class_names=("neg", "pos"),
    )


def clouds(n: int = 1000, seed: int = 0) -> Dataset:
    """Two overlapping 2-D Gaussian mixtures; clusters align with classes.

    Unbalanced: a majority class spread over three components around a
    minority central component, overlapping at the rims. Boundary-only
    query strategies under-cover the multi-modal majority structure.
    """
    rng = np.random.default_rng(seed)
    n0 = int(round(n * 0.65))
    n1 = n - n0
    # class 0: three broad components arranged around the center
    parts = rng.integers(0, 3, n0)
    means0 = np.array([[-1.6, 0.8], [1.6, 0.8], [0.0, -1.7]])
    scales0 = np.array([[0.8, 0.65], [0.8, 0.65], [0.85, 0.6]])
    X0 = means0[parts] + rng.normal(0.0, 1.0, (n0, 2)) * scales0[parts]
    # class 1: one tight central component engulfed by the rims; a single
    # global kernel width cannot resolve both scales at once
    X1 = rng.normal([0.0, 0.0], [0.28, 0.25], (n1, 2))
    X = np.vstack([X0, X1])
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    perm = rng.permutation(n)
    return Dataset(
        schema=_schema_2d(("cloud", "core")),
        rows=X[perm],
        labels=y[perm],
        class_names=("cloud", "core"),
    )


def blobs(
    n_per: int = 100,
    centers=((0.0, 0.0), (4.0, 0.0), (0.0, 4.0)),
    scale: float = 0.5,
    seed: int = 0,
    n_classes: int | None = None,
) -> Dataset:
    """Well-separated Gaussian blobs; one class per center by default."""
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    k = centers.shape[0]
    n_classes = n_classes or k
    X = np.vstack([rng.normal(c, scale, (n_per, 2)) for c in centers])
    y = np.concatenate([np.full(n_per, i % n_classes, dtype=int) for i in range(k)])
    perm = rng.permutation(X.shape[0])
    names = tuple(f"c{i}" for i in range(n_classes))
    return Dataset(schema=_schema_2d(names), rows=X[perm], labels=y[perm], class_names=names)


GENERATORS = {"two_moons": two_moons, "clouds": clouds, "blobs": blobs}
