"""Query selection: uncertainty sampling and the 3DS/4DS criteria mix.

Four per-pool criteria, each normalized to [0, 1]: density (explore where
data mass is), distance (exploit the decision boundary), diversity (avoid
redundant batches), and class distribution (steer acquired labels toward
the responsibility-implied class mass). Weights follow a deterministic
self-adaptation schedule: distribution and density dominate early cycles,
distance dominates late ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import cdm


@dataclass(frozen=True)
class SelectionWeights:
    density: float
    distance: float
    diversity: float
    distribution: float

    def __post_init__(self):
        vals = (self.density, self.distance, self.diversity, self.distribution)
        if any(v < -1e-12 or v > 1.0 + 1e-12 for v in vals):
            raise ValueError(f"weights must lie in [0, 1]: {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1: {vals}")

    def as_dict(self) -> dict:
        return {
            "density": self.density,
            "distance": self.distance,
            "diversity": self.diversity,
            "distribution": self.distribution,
        }


def _normalize(raw: np.ndarray) -> np.ndarray:
    top = raw.max() if raw.size else 0.0
    if top <= 0:
        return np.zeros_like(raw)
    return raw / top


def score_density(pool_densities: np.ndarray) -> np.ndarray:
    """density(x) / pool max."""
    if pool_densities.size == 0:
        raise ValueError("empty pool")
    return _normalize(np.asarray(pool_densities, dtype=float))


def score_distance(margin_norm: np.ndarray) -> np.ndarray:
    """1 - normalized margin: boundary-closest samples score 1."""
    return 1.0 - np.asarray(margin_norm, dtype=float)


def score_diversity(pool_rows: np.ndarray, batch_rows: np.ndarray) -> np.ndarray:
    """Min Euclidean distance to the chosen batch, normalized by pool max."""
    pool_rows = np.atleast_2d(pool_rows)
    if batch_rows is None or len(batch_rows) == 0:
        return np.ones(pool_rows.shape[0])
    batch_rows = np.atleast_2d(batch_rows)
    d2 = (
        np.sum(pool_rows**2, axis=1)[:, None]
        + np.sum(batch_rows**2, axis=1)[None, :]
        - 2.0 * pool_rows @ batch_rows.T
    )
    np.maximum(d2, 0.0, out=d2)
    return _normalize(np.sqrt(d2).min(axis=1))


def reference_class_distribution(class_given_component: np.ndarray, R_pool: np.ndarray) -> np.ndarray:
    """Responsibility-mass class distribution implied by the pool."""
    mass = (R_pool @ np.asarray(class_given_component).T).mean(axis=0)
    total = mass.sum()
    return mass / total if total > 0 else np.full(mass.size, 1.0 / mass.size)


def score_distribution(
    reference: np.ndarray,
    labeled_counts: np.ndarray,
    candidate_mass: np.ndarray,
) -> np.ndarray:
    """Normalized reduction of the class-distribution mismatch.

    The labeled set's class estimate is its acquired-label histogram; a
    candidate contributes its responsibility-implied class mass. Raw score
    is the drop in total-variation distance to the reference if the
    candidate were added; negative drops floor at 0. With no labels yet,
    everything scores 1.
    """
    reference = np.asarray(reference, dtype=float)
    labeled_counts = np.asarray(labeled_counts, dtype=float)
    candidate_mass = np.atleast_2d(np.asarray(candidate_mass, dtype=float))
    n = labeled_counts.sum()
    if n <= 0:
        return np.ones(candidate_mass.shape[0])
    current = cdm(labeled_counts / n, reference)
    hypothetical = (labeled_counts[None, :] + candidate_mass) / (n + 1.0)
    reductions = current - 0.5 * np.abs(hypothetical - reference[None, :]).sum(axis=1)
    np.maximum(reductions, 0.0, out=reductions)
    return _normalize(reductions)


def adapt_weights(
    cycle: int,
    total_budget: int,
    w_diversity_user: float = 0.0,
    query_size: int = 1,
    distribution_scale: float = 0.4,
    distribution_decay: float = 5.0,
    density_scale: float = 0.4,
    density_decay: float = 3.0,
) -> SelectionWeights:
    """Deterministic exploration-to-exploitation schedule.

    rho = min(cycle / total_budget, 1). Distribution and density weights
    decay exponentially in rho; distance takes the remainder. A user
    diversity weight is mixed in for batches larger than one.
    """
    if cycle < 0 or total_budget < 1:
        raise ValueError("cycle must be >= 0 and total_budget >= 1")
    rho = min(cycle / total_budget, 1.0)
    w_distr = distribution_scale * np.exp(-distribution_decay * rho)
    w_dens = density_scale * np.exp(-density_decay * rho)
    w_dist = 1.0 - w_distr - w_dens
    w_div = float(w_diversity_user) if query_size > 1 else 0.0
    if not 0.0 <= w_div < 1.0:
        raise ValueError("diversity weight must lie in [0, 1)")
    scale = 1.0 - w_div
    return SelectionWeights(
        density=float(w_dens * scale),
        distance=float(w_dist * scale),
        diversity=w_div,
        distribution=float(w_distr * scale),
    )


def us_weights() -> SelectionWeights:
    return SelectionWeights(density=0.0, distance=1.0, diversity=0.0, distribution=0.0)


def force_3ds(w: SelectionWeights) -> SelectionWeights:
    """3DS = 4DS with the distribution criterion removed and renormalized."""
    rest = w.density + w.distance + w.diversity
    if rest <= 0:
        return SelectionWeights(0.0, 1.0, 0.0, 0.0)
    return SelectionWeights(
        density=w.density / rest,
        distance=w.distance / rest,
        diversity=w.diversity / rest,
        distribution=0.0,
    )


def select_batch(
    pool_ids: np.ndarray,
    pool_rows: np.ndarray,
    density_scores: np.ndarray,
    distance_scores: np.ndarray,
    distribution_scores: np.ndarray,
    weights: SelectionWeights,
    q: int,
) -> list[int]:
    """Greedy batch construction; diversity is recomputed per pick.

    Ties break toward the lowest row id (pool_ids must be sorted).
    """
    pool_ids = np.asarray(pool_ids, dtype=int)
    if q > pool_ids.size:
        raise ValueError(f"query size {q} exceeds pool size {pool_ids.size}")
    if np.any(np.diff(pool_ids) < 0):
        raise ValueError("pool_ids must be sorted ascending for tie-breaking")
    chosen: list[int] = []
    chosen_local: list[int] = []
    for _ in range(q):
        div = score_diversity(pool_rows, pool_rows[chosen_local] if chosen_local else None)
        combined = (
            weights.density * density_scores
            + weights.distance * distance_scores
            + weights.diversity * div
            + weights.distribution * distribution_scores
        )
        if chosen_local:
            combined[np.array(chosen_local)] = -np.inf
        pick = int(np.argmax(combined))  # first max = lowest row id
        chosen_local.append(pick)
        chosen.append(int(pool_ids[pick]))
    return chosen
