"""C-SVM with RBF and responsibility-weighted Mahalanobis (RWM) kernels.

Training solves the dual with a two-variable decomposition (maximal
violating pair). Multiclass is one-vs-one with majority voting. The RWM
kernel measures component-wise Mahalanobis distances weighted by the mean
responsibilities of the two samples, so regions owned by a component are
compared in that component's metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .mixture import MixtureModel


@dataclass
class KernelSpec:
    kind: str  # "rbf" | "rwm"
    gamma: float
    mixture: MixtureModel | None = None

    def __post_init__(self):
        if self.kind not in ("rbf", "rwm"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.kind == "rwm" and self.mixture is None:
            raise ValueError("rwm kernel requires a fitted mixture")

    def matrix(self, X, Y, RX=None, RY=None) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        Y = np.ascontiguousarray(np.atleast_2d(Y), dtype=np.float64)
        if self.kind == "rbf":
            return backend.rbf_gram(X, Y, self.gamma)
        if RX is None:
            RX = self.mixture.responsibilities_matrix(X)
        if RY is None:
            RY = self.mixture.responsibilities_matrix(Y)
        return backend.rwm_gram(
            X,
            Y,
            np.ascontiguousarray(RX),
            np.ascontiguousarray(RY),
            np.ascontiguousarray(self.mixture.precisions),
            self.gamma,
        )

    def to_json(self) -> dict:
        obj = {"kind": self.kind, "gamma": self.gamma}
        if self.mixture is not None:
            obj["mixture"] = self.mixture.to_json()
        return obj

    @staticmethod
    def from_json(obj: dict) -> "KernelSpec":
        mix = MixtureModel.from_json(obj["mixture"]) if "mixture" in obj else None
        return KernelSpec(kind=obj["kind"], gamma=float(obj["gamma"]), mixture=mix)


def kernel_rbf(x, y, gamma: float) -> float:
    return float(backend.rbf_gram(np.atleast_2d(x).astype(float), np.atleast_2d(y).astype(float), gamma)[0, 0])


def kernel_rwm(x, y, gamma: float, mixture: MixtureModel) -> float:
    spec = KernelSpec(kind="rwm", gamma=gamma, mixture=mixture)
    return float(spec.matrix(np.atleast_2d(x), np.atleast_2d(y))[0, 0])


@dataclass
class _BinaryMachine:
    classes: tuple[int, int]  # (positive, negative)
    support_rows: np.ndarray  # (n_sv,) indices into the training subset
    support_x: np.ndarray  # (n_sv, d)
    support_resp: np.ndarray | None  # cached responsibilities for rwm
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    iterations: int
    kkt_violation: float
    ridge: float
    train_decisions: np.ndarray  # decision values on the machine's own supports


@dataclass
class SvmModel:
    machines: list[_BinaryMachine]
    kernel: KernelSpec
    C: float
    n_classes: int
    fallback_class: int = 0  # prediction when no pair machine could be trained
    diagnostics: dict = field(default_factory=dict)

    def _cross(self, mach: _BinaryMachine, X, RX=None) -> np.ndarray:
        return self.kernel.matrix(X, mach.support_x, RX=RX, RY=mach.support_resp)

    def decision_matrix(self, X) -> np.ndarray:
        """Per class-pair decision values, shape (n, n_machines)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        RX = None
        if self.kernel.kind == "rwm":
            RX = self.kernel.mixture.responsibilities_matrix(X)
        out = np.empty((X.shape[0], len(self.machines)))
        for k, mach in enumerate(self.machines):
            out[:, k] = self._cross(mach, X, RX) @ mach.dual_coef + mach.bias
        return out

    def decision(self, x) -> np.ndarray:
        return self.decision_matrix(np.atleast_2d(x))[0]

    def predict_matrix(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not self.machines:
            return np.full(X.shape[0], self.fallback_class, dtype=int)
        dec = self.decision_matrix(X)
        votes = np.zeros((X.shape[0], self.n_classes))
        scores = np.zeros((X.shape[0], self.n_classes))
        for k, mach in enumerate(self.machines):
            pos, neg = mach.classes
            up = dec[:, k] > 0
            votes[up, pos] += 1
            votes[~up, neg] += 1
            scores[:, pos] += dec[:, k]
            scores[:, neg] -= dec[:, k]
        # majority vote; ties by summed decision values, then lowest index
        best = np.zeros(X.shape[0], dtype=int)
        for i in range(X.shape[0]):
            vmax = votes[i].max()
            tied = np.flatnonzero(votes[i] == vmax)
            if tied.size > 1:
                smax = scores[i, tied].max()
                tied = tied[scores[i, tied] == smax]
            best[i] = tied[0]
        return best

    def predict(self, x) -> int:
        return int(self.predict_matrix(np.atleast_2d(x))[0])

    def margin_norm(self, X) -> np.ndarray:
        """|decision| scaled by the pool maximum; 0 = on the boundary.

        Multiclass uses the minimum absolute pair decision per row.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not self.machines:
            return np.zeros(X.shape[0])
        dec = np.abs(self.decision_matrix(X))
        raw = dec.min(axis=1)
        top = raw.max()
        if top <= 0:
            return np.zeros_like(raw)
        return raw / top

    def to_json(self) -> dict:
        return {
            "format": "svm-v1",
            "C": self.C,
            "n_classes": self.n_classes,
            "kernel": self.kernel.to_json(),
            "machines": [
                {
                    "classes": list(m.classes),
                    "support_rows": m.support_rows.tolist(),
                    "support_x": m.support_x.tolist(),
                    "dual_coef": m.dual_coef.tolist(),
                    "bias": m.bias,
                    "iterations": m.iterations,
                    "kkt_violation": m.kkt_violation,
                    "ridge": m.ridge,
                }
                for m in self.machines
            ],
            "diagnostics": self.diagnostics,
        }

    @staticmethod
    def from_json(obj: dict) -> "SvmModel":
        if obj.get("format") != "svm-v1":
            raise ValueError(f"unsupported svm format {obj.get('format')!r}")
        kernel = KernelSpec.from_json(obj["kernel"])
        machines = []
        for m in obj["machines"]:
            support_x = np.array(m["support_x"], dtype=float).reshape(
                len(m["support_rows"]), -1
            )
            resp = None
            if kernel.kind == "rwm" and len(support_x):
                resp = kernel.mixture.responsibilities_matrix(support_x)
            machines.append(
                _BinaryMachine(
                    classes=tuple(m["classes"]),
                    support_rows=np.array(m["support_rows"], dtype=int),
                    support_x=support_x,
                    support_resp=resp,
                    dual_coef=np.array(m["dual_coef"], dtype=float),
                    bias=float(m["bias"]),
                    iterations=int(m["iterations"]),
                    kkt_violation=float(m["kkt_violation"]),
                    ridge=float(m["ridge"]),
                    train_decisions=np.zeros(len(m["support_rows"])),
                )
            )
        model = SvmModel(
            machines=machines,
            kernel=kernel,
            C=float(obj["C"]),
            n_classes=int(obj["n_classes"]),
            diagnostics=obj.get("diagnostics", {}),
        )
        for mach in model.machines:
            if len(mach.support_x):
                mach.train_decisions = model._cross(mach, mach.support_x) @ mach.dual_coef + mach.bias
        return model


_SV_EPS = 1e-9


def _solve_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int):
    """SMO on a precomputed Gram; escalates a diagonal ridge when the Gram
    produces non-positive 2x2 curvature (possible for the RWM kernel)."""
    ridge = 0.0
    while True:
        Kr = K if ridge == 0.0 else K + ridge * np.eye(K.shape[0])
        alpha, iters, violation, indefinite = backend.smo_solve(
            np.ascontiguousarray(Kr), y, C, tol, max_iter
        )
        if not indefinite:
            return alpha, iters, violation, ridge
        ridge = 1e-10 if ridge == 0.0 else ridge * 2.0
        if ridge > 1e6:
            raise RuntimeError("ridge escalation failed to fix the Gram")


def train_smo(
    X,
    labels,
    C: float,
    kernel: KernelSpec,
    tol: float = 1e-3,
    max_iter: int = 100_000,
) -> SvmModel:
    """Train a one-vs-one C-SVM on the given rows.

    Machines are built for every class pair with at least one sample on
    each side; classes never observed simply receive no votes.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=int)
    if C <= 0:
        raise ValueError("C must be positive")
    classes = np.unique(labels)
    n_classes = int(labels.max()) + 1 if labels.size else 0
    RX = None
    if kernel.kind == "rwm":
        RX = kernel.mixture.responsibilities_matrix(X)
    K_full = kernel.matrix(X, X, RX=RX, RY=RX)

    machines: list[_BinaryMachine] = []
    max_violation = 0.0
    train_errors = 0
    for a_i in range(classes.size):
        for b_i in range(a_i + 1, classes.size):
            a, b = int(classes[a_i]), int(classes[b_i])
            mask = (labels == a) | (labels == b)
            idx = np.flatnonzero(mask)
            y = np.where(labels[idx] == a, 1.0, -1.0)
            K = np.ascontiguousarray(K_full[np.ix_(idx, idx)])
            alpha, iters, violation, ridge = _solve_binary(K, y, C, tol, max_iter)
            max_violation = max(max_violation, violation)
            # bias from free support vectors, else the midpoint rule
            f = K @ (alpha * y)
            free = (alpha > _SV_EPS) & (alpha < C - _SV_EPS)
            if free.any():
                bias = float(np.mean(y[free] - f[free]))
            else:
                yG = y * (1.0 - y * f)  # -y * gradient
                up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
                lo = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
                hi = np.max(np.where(up, yG, -np.inf))
                lo_v = np.min(np.where(lo, yG, np.inf))
                bias = float((hi + lo_v) / 2.0) if np.isfinite(hi + lo_v) else 0.0
            sv = alpha > _SV_EPS
            decisions = f + bias
            train_errors += int(np.sum(np.sign(decisions) != y))
            machines.append(
                _BinaryMachine(
                    classes=(a, b),
                    support_rows=idx[sv],
                    support_x=X[idx[sv]],
                    support_resp=RX[idx[sv]] if RX is not None else None,
                    dual_coef=(alpha * y)[sv],
                    bias=bias,
                    iterations=iters,
                    kkt_violation=float(violation),
                    ridge=ridge,
                    train_decisions=decisions[sv],
                )
            )
    return SvmModel(
        machines=machines,
        kernel=kernel,
        C=C,
        n_classes=n_classes,
        fallback_class=int(classes[0]) if classes.size else 0,
        diagnostics={
            "max_kkt_violation": max_violation,
            "train_errors": train_errors,
            "ridges": [m.ridge for m in machines],
        },
    )


def heuristic_params(
    X,
    labeled_x,
    labeled_y,
    seed: int = 0,
    kernel_kind: str = "rbf",
    mixture: MixtureModel | None = None,
) -> tuple[float, float]:
    """(C, gamma) defaults when no tuning budget exists.

    gamma = 1 / (2 * median^2) of pairwise Euclidean distances over a
    <=500-row subsample of X; degenerate (all-zero) distances fall back to
    gamma = 1. C is picked from {0.1, 1, 10, 100} by stratified 3-fold CV
    on the labeled set once it holds >= 12 rows, else C = 1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rng = np.random.default_rng(seed)
    sub = X
    if X.shape[0] > 500:
        sub = X[rng.choice(X.shape[0], 500, replace=False)]
    sq = (
        np.sum(sub * sub, axis=1)[:, None]
        + np.sum(sub * sub, axis=1)[None, :]
        - 2.0 * sub @ sub.T
    )
    iu = np.triu_indices(sub.shape[0], k=1)
    dists = np.sqrt(np.maximum(sq[iu], 0.0))
    med = float(np.median(dists)) if dists.size else 0.0
    gamma = 1.0 / (2.0 * med * med) if med > 0 else 1.0

    labeled_y = np.asarray(labeled_y, dtype=int)
    C = 1.0
    if labeled_y.size >= 12:
        labeled_x = np.atleast_2d(np.asarray(labeled_x, dtype=np.float64))
        classes, counts = np.unique(labeled_y, return_counts=True)
        if classes.size >= 2 and counts.min() >= 3:
            C = _cv_pick_c(labeled_x, labeled_y, gamma, kernel_kind, mixture, seed)
    return C, gamma


def _cv_pick_c(X, y, gamma, kernel_kind, mixture, seed) -> float:
    rng = np.random.default_rng(seed)
    k = 3
    folds = np.empty(y.size, dtype=int)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        perm = rng.permutation(idx)
        folds[perm] = np.arange(perm.size) % k
    scored = []
    for C in (0.1, 1.0, 10.0, 100.0):
        accs = []
        for f in range(k):
            tr, te = folds != f, folds == f
            if np.unique(y[tr]).size < 2 or te.sum() == 0:
                continue
            kernel = KernelSpec(kind=kernel_kind, gamma=gamma, mixture=mixture)
            model = train_smo(X[tr], y[tr], C, kernel)
            accs.append(float(np.mean(model.predict_matrix(X[te]) == y[te])))
        acc = float(np.mean(accs)) if accs else -1.0
        scored.append((acc, C, np.std(accs) if accs else 0.0))
    # a winner must beat the trivial majority-class rate, otherwise the CV
    # is just rewarding a degenerate constant model
    majority = float(np.bincount(y).max()) / y.size
    candidates = [(acc, C, sd) for acc, C, sd in scored if acc > majority + 1e-12]
    if not candidates:
        return 1.0
    # one-standard-error rule: among values whose CV mean is within one SE
    # of the best, prefer the least extreme C (closest to the untuned
    # default of 1), then the smaller one
    best_acc, _, best_sd = max(candidates, key=lambda t: t[0])
    margin = best_sd / np.sqrt(k)
    tied = [C for acc, C, _ in candidates if acc >= best_acc - margin - 1e-12]
    return min(tied, key=lambda C: (abs(np.log10(C)), C))
