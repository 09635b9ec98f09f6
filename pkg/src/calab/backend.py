"""Hot numeric kernels: RBF/RWM Gram matrices and the SMO inner loop.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
fallback with identical semantics (including argmax tie-breaking). The
active path is chosen once at import time from the ``CALAB_BACKEND``
environment variable:

    CALAB_BACKEND=numba   force numba (ImportError if unavailable)
    CALAB_BACKEND=numpy   force the numpy fallback
    unset                 numba when importable, else numpy

``benchmarks/bench_backends.py`` times both paths side by side.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "CALAB_BACKEND"


# -- pure numpy implementations ----------------------------------------


def _rbf_gram_np(X, Y, gamma):
    """exp(-gamma * ||x - y||^2) for all pairs of rows."""
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Y * Y, axis=1)[None, :]
        - 2.0 * (X @ Y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def _rwm_gram_np(X, Y, RX, RY, precisions, gamma):
    """Responsibility-weighted Mahalanobis kernel matrix.

    d2(x, y) = sum_j rbar_j * (x-y)^T P_j (x-y), rbar_j the mean of the
    two samples' responsibilities for component j; k = exp(-gamma * d2).
    """
    n, m = X.shape[0], Y.shape[0]
    d2 = np.zeros((n, m))
    for j in range(precisions.shape[0]):
        P = precisions[j]
        XP = X @ P
        qx = np.sum(XP * X, axis=1)
        qy = np.sum((Y @ P) * Y, axis=1)
        quad = qx[:, None] + qy[None, :] - 2.0 * (XP @ Y.T)
        np.maximum(quad, 0.0, out=quad)
        rbar = 0.5 * (RX[:, j][:, None] + RY[:, j][None, :])
        d2 += rbar * quad
    return np.exp(-gamma * d2)


def _smo_solve_np(K, y, C, tol, max_iter):
    """Two-variable decomposition for the C-SVM dual on a precomputed Gram.

    Maximal-violating-pair working set selection; returns
    (alpha, iterations, final KKT violation, indefinite_flag). The
    indefinite flag is raised when a selected 2x2 subproblem has
    non-positive curvature, signalling the caller to ridge the Gram.
    """
    n = K.shape[0]
    alpha = np.zeros(n)
    # gradient of the dual objective 0.5 a'Qa - e'a, Q_ij = y_i y_j K_ij
    G = -np.ones(n)
    it = 0
    violation = np.inf
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        lo = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not lo.any():
            violation = 0.0
            break
        up_vals = np.where(up, yG, -np.inf)
        lo_vals = np.where(lo, yG, np.inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(lo_vals))
        violation = up_vals[i] - lo_vals[j]
        if violation <= tol:
            break
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0.0:
            return alpha, it, violation, True
        delta = (yG[i] - yG[j]) / quad
        ai_old, aj_old = alpha[i], alpha[j]
        # move along the feasible direction keeping y'alpha constant
        s = y[i] * ai_old + y[j] * aj_old
        ai = min(max(ai_old + y[i] * delta, 0.0), C)
        aj = y[j] * (s - y[i] * ai)
        if aj < 0.0 or aj > C:
            aj = min(max(aj, 0.0), C)
            ai = y[i] * (s - y[j] * aj)
        alpha[i], alpha[j] = ai, aj
        G += (ai - ai_old) * y[i] * (y * K[:, i]) + (aj - aj_old) * y[j] * (y * K[:, j])
        it += 1
    return alpha, it, max(violation, 0.0), False


# -- numba implementations ----------------------------------------------

try:  # pragma: no cover - import machinery
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    njit = None
    _HAVE_NUMBA = False


if _HAVE_NUMBA:

    @njit(cache=True)
    def _rbf_gram_nb(X, Y, gamma):
        n, m = X.shape[0], Y.shape[0]
        d = X.shape[1]
        out = np.empty((n, m))
        for a in range(n):
            for b in range(m):
                sq = 0.0
                for k in range(d):
                    diff = X[a, k] - Y[b, k]
                    sq += diff * diff
                out[a, b] = np.exp(-gamma * sq)
        return out

    @njit(cache=True)
    def _rwm_gram_nb(X, Y, RX, RY, precisions, gamma):
        n, m = X.shape[0], Y.shape[0]
        J, d = precisions.shape[0], X.shape[1]
        out = np.empty((n, m))
        diff = np.empty(d)
        for a in range(n):
            for b in range(m):
                d2 = 0.0
                for k in range(d):
                    diff[k] = X[a, k] - Y[b, k]
                for j in range(J):
                    quad = 0.0
                    for r in range(d):
                        acc = 0.0
                        for c in range(d):
                            acc += precisions[j, r, c] * diff[c]
                        quad += diff[r] * acc
                    if quad < 0.0:
                        quad = 0.0
                    d2 += 0.5 * (RX[a, j] + RY[b, j]) * quad
                out[a, b] = np.exp(-gamma * d2)
        return out

    @njit(cache=True)
    def _smo_solve_nb(K, y, C, tol, max_iter):
        n = K.shape[0]
        alpha = np.zeros(n)
        G = -np.ones(n)
        it = 0
        violation = np.inf
        indefinite = False
        while it < max_iter:
            i = -1
            j = -1
            up_best = -np.inf
            lo_best = np.inf
            for t in range(n):
                v = -y[t] * G[t]
                if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                    if v > up_best:
                        up_best = v
                        i = t
                if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                    if v < lo_best:
                        lo_best = v
                        j = t
            if i < 0 or j < 0:
                violation = 0.0
                break
            violation = up_best - lo_best
            if violation <= tol:
                break
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0.0:
                indefinite = True
                break
            delta = (up_best - lo_best) / quad
            ai_old = alpha[i]
            aj_old = alpha[j]
            ai = ai_old + y[i] * delta
            s = y[i] * ai_old + y[j] * aj_old
            if ai < 0.0:
                ai = 0.0
            elif ai > C:
                ai = C
            aj = y[j] * (s - y[i] * ai)
            if aj < 0.0 or aj > C:
                if aj < 0.0:
                    aj = 0.0
                else:
                    aj = C
                ai = y[i] * (s - y[j] * aj)
            alpha[i] = ai
            alpha[j] = aj
            dai = (ai - ai_old) * y[i]
            daj = (aj - aj_old) * y[j]
            for t in range(n):
                G[t] += dai * y[t] * K[t, i] + daj * y[t] * K[t, j]
            it += 1
        if violation < 0.0:
            violation = 0.0
        return alpha, it, violation, indefinite


def _select_backend():
    requested = os.environ.get(_ENV_FLAG, "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not _HAVE_NUMBA:
            raise ImportError(f"{_ENV_FLAG}=numba but numba is not importable")
        return "numba"
    if requested not in ("", "auto"):
        raise ValueError(f"{_ENV_FLAG} must be 'numba' or 'numpy', got {requested!r}")
    return "numba" if _HAVE_NUMBA else "numpy"


_ACTIVE = _select_backend()

if _ACTIVE == "numba":
    rbf_gram, rwm_gram, smo_solve = _rbf_gram_nb, _rwm_gram_nb, _smo_solve_nb
else:
    rbf_gram, rwm_gram, smo_solve = _rbf_gram_np, _rwm_gram_np, _smo_solve_np


def active_backend() -> str:
    """Name of the kernel path selected at import time."""
    return _ACTIVE


def implementations(name: str):
    """(numpy_impl, numba_impl_or_None) pair for parity tests and benchmarks."""
    table = {
        "rbf_gram": (_rbf_gram_np, _rbf_gram_nb if _HAVE_NUMBA else None),
        "rwm_gram": (_rwm_gram_np, _rwm_gram_nb if _HAVE_NUMBA else None),
        "smo_solve": (_smo_solve_np, _smo_solve_nb if _HAVE_NUMBA else None),
    }
    return table[name]
