"""Variational-Bayes mixture model over continuous and categorical dimensions.

Continuous dimensions are modeled per component by Gaussians (full or
diagonal covariance), categorical dimensions by per-component multinomial
tables. Fitting uses conjugate variational inference with a sparse
Dirichlet prior on the weights, so superfluous components lose their
expected counts and are pruned after convergence.

Priors (documented defaults, configurable through ``VIConfig``):

* weights: Dirichlet(alpha0), alpha0 = 1e-3 (sparsity-inducing),
* means: Gaussian with scale ``beta0`` around the data mean,
* precisions: Wishart calibrated so the expected covariance matches the
  per-dimension data variance,
* categorical tables: symmetric Dirichlet(1).

The evidence lower bound is computed after every update pass and is
non-decreasing up to floating-point slack; the trace is kept in the fit
diagnostics so callers can assert monotonicity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import digamma, gammaln, logsumexp, xlogy

_LOG_2PI = float(np.log(2.0 * np.pi))
_CAT_FLOOR = 1e-12


@dataclass
class VIConfig:
    j_max: int = 10
    alpha0: float = 1e-3
    beta0: float = 1.0
    cat_concentration: float = 1.0
    tol: float = 1e-5
    max_iter: int = 200
    prune_threshold: float = 1e-2
    restarts: int = 3
    seed: int = 0
    covariance: str = "full"  # "full" | "diag"

    def __post_init__(self):
        if self.j_max < 1:
            raise ValueError("j_max must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.covariance not in ("full", "diag"):
            raise ValueError("covariance must be 'full' or 'diag'")


@dataclass
class FitDiagnostics:
    elbo: float = float("-inf")
    n_iter: int = 0
    pruned: int = 0
    restarts: int = 1
    elbo_trace: list[float] = field(default_factory=list)
    effective_counts: list[float] = field(default_factory=list)
    max_monotonicity_violation: float = 0.0


@dataclass
class MixtureModel:
    """Point-estimate mixture extracted from the variational posterior."""

    weights: np.ndarray  # (J,)
    means: np.ndarray  # (J, D)
    covariances: np.ndarray  # (J, D, D)
    cat_tables: tuple[np.ndarray, ...] = ()  # per categorical dim: (J, V_d)
    diagnostics: FitDiagnostics = field(default_factory=FitDiagnostics)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        if self.covariances.ndim == 2:  # allow a single-component shorthand
            self.covariances = self.covariances[None, :, :]
        self.cat_tables = tuple(
            np.asarray(t, dtype=np.float64) for t in self.cat_tables
        )
        self._chol = np.empty_like(self.covariances)
        self._log_det = np.empty(self.n_components)
        self._precisions = np.empty_like(self.covariances)
        d = self.n_features
        eye = np.eye(d)
        for j in range(self.n_components):
            L = cholesky(self.covariances[j], lower=True)
            self._chol[j] = L
            self._log_det[j] = 2.0 * np.log(np.diag(L)).sum()
            self._precisions[j] = cho_solve((L, True), eye)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @property
    def precisions(self) -> np.ndarray:
        """Inverse covariances, (J, D, D); used by the Mahalanobis kernel."""
        return self._precisions

    # -- log densities ---------------------------------------------------

    def _component_log_pdf(self, X: np.ndarray, Xcat: np.ndarray | None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        J, d = self.n_components, self.n_features
        out = np.empty((n, J))
        for j in range(J):
            diff = X - self.means[j]
            z = solve_triangular(self._chol[j], diff.T, lower=True)
            out[:, j] = -0.5 * (np.sum(z * z, axis=0) + d * _LOG_2PI + self._log_det[j])
        if Xcat is not None and len(self.cat_tables):
            Xcat = np.atleast_2d(np.asarray(Xcat, dtype=np.int64))
            for dd, table in enumerate(self.cat_tables):
                logt = np.log(np.maximum(table, _CAT_FLOOR))
                out += logt[:, Xcat[:, dd]].T
        return out

    def responsibilities_matrix(
        self, X: np.ndarray, Xcat: np.ndarray | None = None
    ) -> np.ndarray:
        """Per-row posterior over components, rows sum to 1."""
        log_r = self._component_log_pdf(X, Xcat) + np.log(self.weights)[None, :]
        log_r -= logsumexp(log_r, axis=1, keepdims=True)
        return np.exp(log_r)

    def responsibilities(self, x, xcat=None) -> np.ndarray:
        xcat2 = None if xcat is None else np.atleast_2d(xcat)
        return self.responsibilities_matrix(np.atleast_2d(x), xcat2)[0]

    def log_density_matrix(
        self, X: np.ndarray, Xcat: np.ndarray | None = None
    ) -> np.ndarray:
        log_p = self._component_log_pdf(X, Xcat) + np.log(self.weights)[None, :]
        return logsumexp(log_p, axis=1)

    def density_matrix(self, X: np.ndarray, Xcat: np.ndarray | None = None) -> np.ndarray:
        return np.exp(self.log_density_matrix(X, Xcat))

    def density(self, x, xcat=None) -> float:
        xcat2 = None if xcat is None else np.atleast_2d(xcat)
        return float(self.density_matrix(np.atleast_2d(x), xcat2)[0])

    # -- serialization ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": "mixture-v1",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "categorical": [t.tolist() for t in self.cat_tables],
            "diagnostics": {
                "elbo": self.diagnostics.elbo,
                "n_iter": self.diagnostics.n_iter,
                "pruned": self.diagnostics.pruned,
                "restarts": self.diagnostics.restarts,
                "effective_counts": list(self.diagnostics.effective_counts),
            },
        }

    @staticmethod
    def from_json(obj: dict) -> "MixtureModel":
        if obj.get("format") != "mixture-v1":
            raise ValueError(f"unsupported mixture format {obj.get('format')!r}")
        diag = obj.get("diagnostics", {})
        return MixtureModel(
            weights=np.array(obj["weights"]),
            means=np.array(obj["means"]),
            covariances=np.array(obj["covariances"]),
            cat_tables=tuple(np.array(t) for t in obj.get("categorical", [])),
            diagnostics=FitDiagnostics(
                elbo=diag.get("elbo", float("-inf")),
                n_iter=diag.get("n_iter", 0),
                pruned=diag.get("pruned", 0),
                restarts=diag.get("restarts", 1),
                effective_counts=list(diag.get("effective_counts", [])),
            ),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "MixtureModel":
        return MixtureModel.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def model_summary(m: MixtureModel) -> dict:
    return {
        "n_components": m.n_components,
        "weights": m.weights.tolist(),
        "elbo": m.diagnostics.elbo,
        "iterations": m.diagnostics.n_iter,
        "pruned": m.diagnostics.pruned,
        "effective_counts": list(m.diagnostics.effective_counts),
    }


# -- variational fit ------------------------------------------------------


def _kmeanspp_indices(X: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    n = X.shape[0]
    first = int(rng.integers(n))
    picks = [first]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            picks.append(int(rng.integers(n)))
            continue
        pick = int(rng.choice(n, p=d2 / total))
        picks.append(pick)
        np.minimum(d2, np.sum((X - X[pick]) ** 2, axis=1), out=d2)
    return picks


def _log_dirichlet_norm(conc: np.ndarray) -> float:
    return float(gammaln(conc.sum()) - gammaln(conc).sum())


class _FullState:
    """Gaussian-Wishart variational state, full covariance."""

    def __init__(self, X, j_max, cfg, jitter):
        n, d = X.shape
        self.X = X
        self.d = d
        self.jitter = jitter
        self.alpha0 = cfg.alpha0
        self.beta0 = cfg.beta0
        self.m0 = X.mean(axis=0)
        self.nu0 = d + 2.0
        var = np.maximum(X.var(axis=0), jitter)
        self.w0_inv = np.diag(var) * self.nu0  # E[precision] prior = 1/var
        self.log_det_w0 = -float(np.log(np.diag(self.w0_inv)).sum())
        self.alpha = np.full(j_max, cfg.alpha0)
        self.beta = np.full(j_max, cfg.beta0)
        self.m = np.tile(self.m0, (j_max, 1))
        self.w_inv = np.tile(self.w0_inv, (j_max, 1, 1))
        self.nu = np.full(j_max, self.nu0)
        self._chol = None

    def update(self, r):
        X, d = self.X, self.d
        nk = r.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-300)
        xbar = (r.T @ X) / nk_safe[:, None]
        self.alpha = self.alpha0 + nk
        self.beta = self.beta0 + nk
        self.nu = self.nu0 + nk
        self.m = (self.beta0 * self.m0[None, :] + nk[:, None] * xbar) / self.beta[:, None]
        J = r.shape[1]
        self.w_inv = np.empty((J, d, d))
        self.nk, self.xbar, self.sk = nk, xbar, np.empty((J, d, d))
        for j in range(J):
            diff = X - xbar[j]
            sk = (r[:, j][:, None] * diff).T @ diff / nk_safe[j]
            self.sk[j] = sk
            dm = (xbar[j] - self.m0)[:, None]
            self.w_inv[j] = (
                self.w0_inv
                + nk[j] * sk
                + (self.beta0 * nk[j] / (self.beta0 + nk[j])) * (dm @ dm.T)
            )
        self._chol = None

    def _factor(self):
        if self._chol is None:
            J, d = self.w_inv.shape[0], self.d
            self._chol = np.empty_like(self.w_inv)
            self.log_det_w = np.empty(J)
            for j in range(J):
                w_inv = self.w_inv[j]
                bump = 0.0
                while True:
                    try:
                        L = cholesky(w_inv + bump * np.eye(d), lower=True)
                        break
                    except np.linalg.LinAlgError:
                        bump = max(self.jitter, 2.0 * bump or self.jitter)
                self._chol[j] = L
                self.log_det_w[j] = -2.0 * np.log(np.diag(L)).sum()
        return self._chol

    def expected_log_det(self):
        self._factor()
        d = self.d
        args = (self.nu[:, None] + 1.0 - np.arange(1, d + 1)[None, :]) / 2.0
        return digamma(args).sum(axis=1) + d * np.log(2.0) + self.log_det_w

    def expected_quad(self):
        """E[(x - mu_j)' Lambda_j (x - mu_j)] for all rows/components."""
        chol = self._factor()
        n = self.X.shape[0]
        J, d = self.w_inv.shape[0], self.d
        out = np.empty((n, J))
        for j in range(J):
            diff = self.X - self.m[j]
            z = solve_triangular(chol[j], diff.T, lower=True)
            out[:, j] = d / self.beta[j] + self.nu[j] * np.sum(z * z, axis=0)
        return out

    def elbo_gauss_terms(self, r, ln_pi):
        """Gaussian + weight ELBO contributions given the responsibilities."""
        d = self.d
        nk, xbar, sk = self.nk, self.xbar, self.sk
        ln_lam = self.expected_log_det()
        chol = self._factor()
        J = r.shape[1]
        tr_sw = np.empty(J)
        quad_xm = np.empty(J)
        quad_mm = np.empty(J)
        tr_w0w = np.empty(J)
        eye = np.eye(d)
        for j in range(J):
            w = cho_solve((chol[j], True), eye)
            tr_sw[j] = np.trace(sk[j] @ w)
            dxm = xbar[j] - self.m[j]
            quad_xm[j] = dxm @ w @ dxm
            dmm = self.m[j] - self.m0
            quad_mm[j] = dmm @ w @ dmm
            tr_w0w[j] = np.trace(self.w0_inv @ w)

        def log_b(log_det_w, nu):
            return (
                -0.5 * nu * log_det_w
                - 0.5 * nu * d * np.log(2.0)
                - 0.25 * d * (d - 1) * np.log(np.pi)
                - gammaln(0.5 * (nu + 1.0 - np.arange(1, d + 1))).sum()
            )

        e_p_x = 0.5 * np.sum(
            nk * (ln_lam - d / self.beta - self.nu * (tr_sw + quad_xm) - d * _LOG_2PI)
        )
        e_p_z = float(np.sum(nk * ln_pi))
        alpha0_vec = np.full(r.shape[1], self.alpha0)
        e_p_pi = _log_dirichlet_norm(alpha0_vec) + float((self.alpha0 - 1.0) * ln_pi.sum())
        log_b0 = log_b(self.log_det_w0, self.nu0)
        e_p_mu_lam = float(
            0.5
            * np.sum(
                d * np.log(self.beta0 / (2.0 * np.pi))
                + ln_lam
                - d * self.beta0 / self.beta
                - self.beta0 * self.nu * quad_mm
            )
            + J * log_b0
            + 0.5 * (self.nu0 - d - 1.0) * ln_lam.sum()
            - 0.5 * np.sum(self.nu * tr_w0w)
        )
        e_q_pi = _log_dirichlet_norm(self.alpha) + float(np.sum((self.alpha - 1.0) * ln_pi))
        log_b_j = np.array([log_b(self.log_det_w[j], self.nu[j]) for j in range(J)])
        wishart_entropy = -log_b_j - 0.5 * (self.nu - d - 1.0) * ln_lam + 0.5 * self.nu * d
        e_q_mu_lam = float(
            np.sum(
                0.5 * ln_lam
                + 0.5 * d * np.log(self.beta / (2.0 * np.pi))
                - 0.5 * d
                - wishart_entropy
            )
        )
        return e_p_x + e_p_z + e_p_pi + e_p_mu_lam - e_q_pi - e_q_mu_lam

    def extract(self):
        J = self.w_inv.shape[0]
        cov = np.empty_like(self.w_inv)
        for j in range(J):
            cov[j] = self.w_inv[j] / self.nu[j]
        return self.m.copy(), cov


class _DiagState(_FullState):
    """Independent per-dimension Normal-Gamma state (diagonal covariance)."""

    def __init__(self, X, j_max, cfg, jitter):
        n, d = X.shape
        self.X = X
        self.d = d
        self.jitter = jitter
        self.alpha0 = cfg.alpha0
        self.beta0 = cfg.beta0
        self.m0 = X.mean(axis=0)
        self.nu0 = 3.0
        var = np.maximum(X.var(axis=0), jitter)
        self.w0_inv = var * self.nu0  # (d,)
        self.alpha = np.full(j_max, cfg.alpha0)
        self.beta = np.full(j_max, cfg.beta0)
        self.m = np.tile(self.m0, (j_max, 1))
        self.w_inv = np.tile(self.w0_inv, (j_max, 1))  # (J, d)
        self.nu = np.full(j_max, self.nu0)

    def update(self, r):
        X = self.X
        nk = r.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-300)
        xbar = (r.T @ X) / nk_safe[:, None]
        self.alpha = self.alpha0 + nk
        self.beta = self.beta0 + nk
        self.nu = self.nu0 + nk
        self.m = (self.beta0 * self.m0[None, :] + nk[:, None] * xbar) / self.beta[:, None]
        sk = (r.T @ (X * X)) / nk_safe[:, None] - xbar**2
        np.maximum(sk, 0.0, out=sk)
        dm2 = (xbar - self.m0[None, :]) ** 2
        self.w_inv = (
            self.w0_inv[None, :]
            + nk[:, None] * sk
            + (self.beta0 * nk / (self.beta0 + nk))[:, None] * dm2
        )
        self.nk, self.xbar, self.sk = nk, xbar, sk

    def _log_w(self):
        return -np.log(np.maximum(self.w_inv, 1e-300))  # (J, d)

    def expected_log_det(self):
        lw = self._log_w()
        return (
            self.d * (digamma(self.nu / 2.0) + np.log(2.0)) + lw.sum(axis=1)
        )

    def expected_quad(self):
        w = self.nu[:, None] / np.maximum(self.w_inv, 1e-300)  # E[lambda_jd]
        quad = np.empty((self.X.shape[0], self.w_inv.shape[0]))
        for j in range(self.w_inv.shape[0]):
            diff2 = (self.X - self.m[j]) ** 2
            quad[:, j] = self.d / self.beta[j] + diff2 @ w[j]
        return quad

    def elbo_gauss_terms(self, r, ln_pi):
        d = self.d
        nk, xbar, sk = self.nk, self.xbar, self.sk
        J = r.shape[1]
        lw = self._log_w()  # ln W_jd
        ln_lam_dim = digamma(self.nu / 2.0)[:, None] + np.log(2.0) + lw  # (J, d)
        ln_lam = ln_lam_dim.sum(axis=1)
        w = self.nu[:, None] / np.maximum(self.w_inv, 1e-300)
        tr_sw = np.sum(sk * w, axis=1) / np.maximum(self.nu, 1e-300)  # sum_d S W
        quad_xm = np.sum((xbar - self.m) ** 2 * w, axis=1) / np.maximum(self.nu, 1e-300)
        quad_mm = np.sum((self.m - self.m0[None, :]) ** 2 * w, axis=1) / np.maximum(
            self.nu, 1e-300
        )
        tr_w0w = np.sum(self.w0_inv[None, :] * (1.0 / np.maximum(self.w_inv, 1e-300)), axis=1)

        e_p_x = 0.5 * np.sum(
            nk * (ln_lam - d / self.beta - self.nu * (tr_sw + quad_xm) - d * _LOG_2PI)
        )
        e_p_z = float(np.sum(nk * ln_pi))
        alpha0_vec = np.full(J, self.alpha0)
        e_p_pi = _log_dirichlet_norm(alpha0_vec) + float((self.alpha0 - 1.0) * ln_pi.sum())

        def log_b1(ln_w, nu):
            return -0.5 * nu * ln_w - 0.5 * nu * np.log(2.0) - gammaln(0.5 * nu)

        lw0 = np.log(np.maximum(self.w0_inv, 1e-300))  # ln W0_inv = -ln W0
        log_b0 = log_b1(-lw0, self.nu0).sum()
        e_p_mu_lam = float(
            0.5
            * np.sum(
                d * np.log(self.beta0 / (2.0 * np.pi))
                + ln_lam
                - d * self.beta0 / self.beta
                - self.beta0 * self.nu * quad_mm
            )
            + J * log_b0
            + 0.5 * (self.nu0 - 2.0) * ln_lam.sum()
            - 0.5 * np.sum(self.nu * tr_w0w)
        )
        e_q_pi = _log_dirichlet_norm(self.alpha) + float(np.sum((self.alpha - 1.0) * ln_pi))
        # per-dim entropy: -logB1 - ((nu-2)/2) ln lam_dim + nu/2, summed over dims
        log_b_j = log_b1(lw, self.nu[:, None]).sum(axis=1)
        wishart_entropy = (
            -log_b_j
            - 0.5 * np.sum((self.nu[:, None] - 2.0) * ln_lam_dim, axis=1)
            + 0.5 * self.nu * d
        )
        e_q_mu_lam = float(
            np.sum(
                0.5 * ln_lam
                + 0.5 * d * np.log(self.beta / (2.0 * np.pi))
                - 0.5 * d
                - wishart_entropy
            )
        )
        return e_p_x + e_p_z + e_p_pi + e_p_mu_lam - e_q_pi - e_q_mu_lam

    def extract(self):
        J = self.w_inv.shape[0]
        cov = np.zeros((J, self.d, self.d))
        for j in range(J):
            np.fill_diagonal(cov[j], self.w_inv[j] / self.nu[j])
        return self.m.copy(), cov


def _fit_single(X, Xcat, cat_cards, cfg: VIConfig, seed_key):
    rng = np.random.default_rng(seed_key)
    n, d = X.shape
    j_max = min(cfg.j_max, n)
    jitter = max(1e-6 * float(np.mean(np.var(X, axis=0))), 1e-12)
    state_cls = _FullState if cfg.covariance == "full" else _DiagState
    state = state_cls(X, j_max, cfg, jitter)

    n_cat = len(cat_cards)
    cat_conc = [np.full((j_max, v), cfg.cat_concentration) for v in cat_cards]
    cat_onehot = [np.eye(v)[Xcat[:, dd]] for dd, v in enumerate(cat_cards)]

    # k-means++ style hard init
    seeds = _kmeanspp_indices(X, j_max, rng)
    centers = X[seeds]
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    r = np.zeros((n, j_max))
    r[np.arange(n), assign] = 1.0

    def m_step(resp):
        state.update(resp)
        for dd in range(n_cat):
            cat_conc[dd] = cfg.cat_concentration + resp.T @ cat_onehot[dd]

    def e_step():
        ln_pi = digamma(state.alpha) - digamma(state.alpha.sum())
        ln_lam = state.expected_log_det()
        quad = state.expected_quad()
        log_rho = ln_pi[None, :] + 0.5 * ln_lam[None, :] - 0.5 * d * _LOG_2PI - 0.5 * quad
        for dd in range(n_cat):
            ln_theta = digamma(cat_conc[dd]) - digamma(
                cat_conc[dd].sum(axis=1, keepdims=True)
            )
            log_rho += cat_onehot[dd] @ ln_theta.T
        log_norm = logsumexp(log_rho, axis=1, keepdims=True)
        return np.exp(log_rho - log_norm), ln_pi

    def elbo(resp, ln_pi):
        val = state.elbo_gauss_terms(resp, ln_pi)
        val -= float(xlogy(resp, resp).sum())  # E[ln q(Z)]
        for dd in range(n_cat):
            conc = cat_conc[dd]
            ln_theta = digamma(conc) - digamma(conc.sum(axis=1, keepdims=True))
            counts = resp.T @ cat_onehot[dd]
            val += float(np.sum(counts * ln_theta))  # E[ln p(Xcat|Z,theta)]
            prior = np.full(conc.shape[1], cfg.cat_concentration)
            for j in range(conc.shape[0]):
                val += _log_dirichlet_norm(prior) + float(
                    (cfg.cat_concentration - 1.0) * ln_theta[j].sum()
                )
                val -= _log_dirichlet_norm(conc[j]) + float(
                    np.sum((conc[j] - 1.0) * ln_theta[j])
                )
        return val

    m_step(r)
    trace: list[float] = []
    prev = -np.inf
    violation = 0.0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        r, _ = e_step()
        m_step(r)
        ln_pi = digamma(state.alpha) - digamma(state.alpha.sum())
        cur = elbo(r, ln_pi)
        trace.append(cur)
        if np.isfinite(prev):
            violation = max(violation, prev - cur)
            if abs(cur - prev) <= cfg.tol * (abs(prev) + 1e-12):
                prev = cur
                break
        prev = cur
    return state, cat_conc, r, trace, it, violation


def fit_vi(
    X: np.ndarray,
    cfg: VIConfig,
    Xcat: np.ndarray | None = None,
    cat_cards: list[int] | tuple[int, ...] = (),
) -> MixtureModel:
    """Fit the variational mixture on unlabeled rows, prune, keep best restart."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows to fit a mixture")
    if cfg.j_max > n:
        raise ValueError("j_max exceeds the number of rows")
    if (Xcat is None) != (len(cat_cards) == 0):
        raise ValueError("Xcat and cat_cards must be provided together")
    Xcat = (
        np.zeros((n, 0), dtype=np.int64)
        if Xcat is None
        else np.atleast_2d(np.asarray(Xcat, dtype=np.int64))
    )

    best = None
    for restart in range(max(1, cfg.restarts)):
        state, cat_conc, r, trace, n_iter, violation = _fit_single(
            X, Xcat, list(cat_cards), cfg, [cfg.seed, restart]
        )
        if best is None or (trace and trace[-1] > best[5]):
            best = (state, cat_conc, r, trace, n_iter, trace[-1] if trace else -np.inf)
            best_violation = violation
    state, cat_conc, r, trace, n_iter, final_elbo = best

    nk = r.sum(axis=0)
    keep = np.flatnonzero(nk >= cfg.prune_threshold)
    if keep.size == 0:
        keep = np.array([int(np.argmax(nk))])
    pruned = int(nk.size - keep.size)

    weights = state.alpha[keep] / state.alpha[keep].sum()
    means, cov = state.extract()
    means, cov = means[keep], cov[keep]

    # enforce the spectral jitter floor on every covariance
    floor = max(1e-6 * float(np.mean(np.var(X, axis=0))), 1e-12)
    for j in range(cov.shape[0]):
        sym = 0.5 * (cov[j] + cov[j].T)
        vals, vecs = np.linalg.eigh(sym)
        cov[j] = (vecs * np.maximum(vals, floor)) @ vecs.T

    tables = tuple(
        conc[keep] / conc[keep].sum(axis=1, keepdims=True) for conc in cat_conc
    )
    diags = FitDiagnostics(
        elbo=float(final_elbo),
        n_iter=n_iter,
        pruned=pruned,
        restarts=max(1, cfg.restarts),
        elbo_trace=[float(v) for v in trace],
        effective_counts=[float(v) for v in nk[keep]],
        max_monotonicity_violation=float(best_violation),
    )
    return MixtureModel(
        weights=weights, means=means, covariances=cov, cat_tables=tables, diagnostics=diags
    )
