"""Learning-curve metrics and nonparametric rank statistics.

AULC and DUR compare methods against a designated baseline on a shared
labeled-count grid. CDM measures how far the acquired label distribution
drifts from a reference class distribution. Methods are ranked per
dataset; the Friedman test checks whether the average ranks could be
chance, and the Nemenyi critical difference groups methods that are not
significantly different.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

# chi-square critical values, df 1..10
_CHI2_CRIT = {
    0.10: [2.706, 4.605, 6.251, 7.779, 9.236, 10.645, 12.017, 13.362, 14.684, 15.987],
    0.05: [3.841, 5.991, 7.815, 9.488, 11.070, 12.592, 14.067, 15.507, 16.919, 18.307],
    0.01: [6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090, 21.666, 23.209],
}

# studentized range at infinite df divided by sqrt(2), k = 2..10
_NEMENYI_Q = {
    0.10: [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920],
    0.05: [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164],
    0.01: [2.576, 2.913, 3.113, 3.255, 3.364, 3.452, 3.526, 3.590, 3.646],
}


@dataclass
class CurveSet:
    grid: np.ndarray  # shared n_labeled grid
    curves: dict[str, np.ndarray]  # method -> accuracy per grid point
    baseline: str

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.curves = {k: np.asarray(v, dtype=float) for k, v in self.curves.items()}
        if self.baseline not in self.curves:
            raise ValueError(f"baseline {self.baseline!r} not among curves")
        for name, c in self.curves.items():
            if c.shape != self.grid.shape:
                raise ValueError(f"curve {name!r} does not share the grid")


def _mean_accuracy(grid: np.ndarray, curve: np.ndarray) -> float:
    if grid.size == 1:
        return float(curve[0])
    span = grid[-1] - grid[0]
    return float(np.trapezoid(curve, grid) / span)


def aulc(grid, curve, baseline_curve) -> float:
    """Trapezoidal mean accuracy relative to the baseline, in points (x100)."""
    grid = np.asarray(grid, dtype=float)
    curve = np.asarray(curve, dtype=float)
    baseline_curve = np.asarray(baseline_curve, dtype=float)
    if curve.shape != grid.shape or baseline_curve.shape != grid.shape:
        raise ValueError("curves must share the grid")
    return 100.0 * (_mean_accuracy(grid, curve) - _mean_accuracy(grid, baseline_curve))


def dur(grid, curve, baseline_curve) -> tuple[float, bool]:
    """Data utilization rate against the baseline's final accuracy.

    Returns (rate, reached). A method that never reaches the target is
    scored at the grid maximum and flagged reached=False.
    """
    grid = np.asarray(grid, dtype=float)
    curve = np.asarray(curve, dtype=float)
    baseline_curve = np.asarray(baseline_curve, dtype=float)
    if curve.shape != grid.shape or baseline_curve.shape != grid.shape:
        raise ValueError("curves must share the grid")
    target = baseline_curve[-1]
    base_hits = np.flatnonzero(baseline_curve >= target)
    n_base = grid[base_hits[0]]
    hits = np.flatnonzero(curve >= target)
    if hits.size == 0:
        return float(grid[-1] / n_base), False
    return float(grid[hits[0]] / n_base), True


def cdm(p_hat, p_ref) -> float:
    """Total-variation distance between two class distributions, in [0, 1]."""
    p_hat = np.asarray(p_hat, dtype=float)
    p_ref = np.asarray(p_ref, dtype=float)
    return float(0.5 * np.abs(p_hat - p_ref).sum())


@dataclass
class RankReport:
    methods: list[str]
    datasets: list[str]
    accuracy: np.ndarray  # (n_datasets, n_methods)
    ranks: np.ndarray  # (n_datasets, n_methods)
    average_ranks: np.ndarray  # (n_methods,)
    wins: np.ndarray  # (n_methods,)
    friedman_statistic: float = float("nan")
    friedman_reject: bool = False
    alpha: float = float("nan")
    critical_difference: float = float("nan")
    groups: list[list[str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "format": "report-v1",
            "methods": self.methods,
            "datasets": self.datasets,
            "accuracy": self.accuracy.tolist(),
            "ranks": self.ranks.tolist(),
            "average_ranks": self.average_ranks.tolist(),
            "wins": self.wins.tolist(),
            "friedman_statistic": self.friedman_statistic,
            "friedman_reject": self.friedman_reject,
            "alpha": self.alpha,
            "critical_difference": self.critical_difference,
            "groups": self.groups,
        }


def rank_methods(accuracy, methods=None, datasets=None) -> RankReport:
    """Per-dataset ranks (1 = best accuracy, ties averaged) and win counts.

    Ties at rank 1 split the win as 1/t each.
    """
    accuracy = np.atleast_2d(np.asarray(accuracy, dtype=float))
    n_data, k = accuracy.shape
    if k < 2:
        raise ValueError("need at least 2 methods to rank")
    methods = list(methods) if methods else [f"m{j}" for j in range(k)]
    datasets = list(datasets) if datasets else [f"d{i}" for i in range(n_data)]
    ranks = np.empty_like(accuracy)
    wins = np.zeros(k)
    for i in range(n_data):
        ranks[i] = rankdata(-accuracy[i], method="average")
        best = np.flatnonzero(accuracy[i] == accuracy[i].max())
        wins[best] += 1.0 / best.size
    return RankReport(
        methods=methods,
        datasets=datasets,
        accuracy=accuracy,
        ranks=ranks,
        average_ranks=ranks.mean(axis=0),
        wins=wins,
    )


def friedman(average_ranks, n_datasets: int, k: int, alpha: float) -> tuple[float, bool]:
    """Friedman chi-square over average ranks; reject at the embedded table."""
    if n_datasets < 2:
        raise ValueError("need at least 2 datasets")
    if alpha not in _CHI2_CRIT:
        raise ValueError(f"alpha must be one of {sorted(_CHI2_CRIT)}")
    df = k - 1
    if not 1 <= df <= 10:
        raise ValueError("embedded chi-square table covers k-1 in 1..10")
    R = np.asarray(average_ranks, dtype=float)
    stat = 12.0 * n_datasets / (k * (k + 1)) * (np.sum(R**2) - k * (k + 1) ** 2 / 4.0)
    return float(stat), bool(stat > _CHI2_CRIT[alpha][df - 1])


def nemenyi_cd(k: int, n_datasets: int, alpha: float) -> float:
    """Critical difference on average ranks for the Nemenyi post-hoc test."""
    if alpha not in _NEMENYI_Q:
        raise ValueError(f"alpha must be one of {sorted(_NEMENYI_Q)}")
    if not 2 <= k <= 10:
        raise ValueError("embedded q table covers k in 2..10")
    q = _NEMENYI_Q[alpha][k - 2]
    return float(q * np.sqrt(k * (k + 1) / (6.0 * n_datasets)))


def evaluate_ranks(accuracy, methods=None, datasets=None, alpha: float = 0.01) -> RankReport:
    """rank_methods plus Friedman test and Nemenyi grouping."""
    report = rank_methods(accuracy, methods, datasets)
    n, k = report.accuracy.shape
    stat, reject = friedman(report.average_ranks, n, k, alpha)
    cd = nemenyi_cd(k, n, alpha)
    report.friedman_statistic = stat
    report.friedman_reject = reject
    report.alpha = alpha
    report.critical_difference = cd
    report.groups = _cd_groups(report.methods, report.average_ranks, cd)
    return report


def _cd_groups(methods, average_ranks, cd: float) -> list[list[str]]:
    """Maximal intervals of rank-sorted methods spanning at most CD."""
    order = np.argsort(average_ranks, kind="stable")
    ranks = np.asarray(average_ranks)[order]
    names = [methods[i] for i in order]
    groups: list[tuple[int, int]] = []
    for i in range(len(names)):
        j = i
        while j + 1 < len(names) and ranks[j + 1] - ranks[i] <= cd:
            j += 1
        groups.append((i, j))
    maximal = [
        (a, b)
        for a, b in groups
        if not any((c <= a and b <= d) and (c, d) != (a, b) for c, d in groups)
    ]
    seen = set()
    out = []
    for a, b in maximal:
        key = (a, b)
        if key not in seen:
            seen.add(key)
            out.append([names[t] for t in range(a, b + 1)])
    return out


def cd_plot_data(report: RankReport) -> dict:
    """Plot-ready critical-difference diagram data."""
    order = np.argsort(report.average_ranks, kind="stable")
    return {
        "format": "cd-plot-v1",
        "alpha": report.alpha,
        "critical_difference": report.critical_difference,
        "axis": [1.0, float(len(report.methods))],
        "methods": [
            {"name": report.methods[i], "rank": float(report.average_ranks[i])}
            for i in order
        ],
        "groups": report.groups,
    }


def render_rank_table(report: RankReport) -> str:
    """Text table mirroring the accuracy/rank/wins layout."""
    width = max(len(d) for d in report.datasets + ["Dataset", "Mean", "Rank", "Wins"]) + 2
    cols = [f"{m:>12s}" for m in report.methods]
    lines = [f"{'Dataset':<{width}s}" + "".join(cols)]
    for i, d in enumerate(report.datasets):
        cells = "".join(f"{v:>12.2f}" for v in report.accuracy[i])
        lines.append(f"{d:<{width}s}" + cells)
    lines.append(
        f"{'Mean':<{width}s}" + "".join(f"{v:>12.2f}" for v in report.accuracy.mean(axis=0))
    )
    lines.append(
        f"{'Rank':<{width}s}" + "".join(f"{v:>12.3f}" for v in report.average_ranks)
    )
    lines.append(f"{'Wins':<{width}s}" + "".join(f"{v:>12.1f}" for v in report.wins))
    if np.isfinite(report.friedman_statistic):
        lines.append("")
        lines.append(
            f"Friedman chi2 = {report.friedman_statistic:.3f} "
            f"(alpha={report.alpha}, reject={report.friedman_reject}), "
            f"CD = {report.critical_difference:.3f}"
        )
        lines.append("Groups not significantly different: " + "; ".join(
            "{" + ", ".join(g) + "}" for g in report.groups
        ))
    return "\n".join(lines)


def render_metric_table(rows: list[dict]) -> str:
    """Text table for AULC/DUR/CDM summaries (one dict per method)."""
    lines = [
        f"{'Active Learner':<24s}{'AULC':>10s}{'DUR':>10s}{'CDM':>10s}"
    ]
    for r in rows:
        lines.append(
            f"{r['method']:<24s}{r['aulc']:>10.3f}{r['dur']:>10.3f}{r['cdm']:>10.3f}"
        )
    return "\n".join(lines)
