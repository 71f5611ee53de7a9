"""Penalized pseudo-likelihood estimation.

The fitting loop alternates posterior class weights with three
coordinate-descent maximizations: the interaction matrix by
soft-thresholded coordinate steps on a local quadratic approximation of
the log pseudo-likelihood (lasso/IRLS style, with active-set cycling and
exact symmetry), item coefficients by damped per-coordinate Newton steps,
and the class prior by the posterior mean (optionally by projected
gradient ascent on the coupled objective).  Sparsity is selected by BIC
over a warm-started geometric penalty path.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import (
    ClassPrior,
    DesignMatrix,
    GdcmModel,
    ItemCoefficients,
    QMatrix,
    ResponseMatrix,
    expit,
    log1pexp,
    logit,
    profile_design_matrix,
)


class NumericalError(RuntimeError):
    """Optimization produced a non-finite objective."""


@dataclass
class FitConfig:
    lambda_: object = "auto"        # "auto", a value, or an explicit grid
    path_length: int = 15
    path_min_ratio: float = 0.01
    path_bic_patience: int = 3      # stop descending after this many BIC rises
    outer_max: int = 500
    outer_tol: float = 1e-4
    inner_max: int = 100
    inner_tol: float = 1e-6
    weight_floor: float = 1e-6
    prob_clamp: float = 1e-8
    monotone_dina: bool = True
    pi_exact: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("outer_tol", "inner_tol", "weight_floor", "prob_clamp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.path_min_ratio < 1.0:
            raise ValueError("path_min_ratio must lie in (0,1)")
        if self.path_length < 1 or self.outer_max < 1 or self.inner_max < 1:
            raise ValueError("iteration counts must be at least 1")
        if self.path_bic_patience < 1:
            raise ValueError("path_bic_patience must be at least 1")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["lambda"] = d.pop("lambda_")
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "FitConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lambda_"] = doc.pop("lambda")
        return cls(**doc)


def _as_x(x) -> np.ndarray:
    arr = x.x if isinstance(x, ResponseMatrix) else np.asarray(x)
    return arr.astype(float)


def _as_q(q) -> QMatrix:
    return q if isinstance(q, QMatrix) else QMatrix(np.asarray(q))


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def posterior_weights(beta, pi, x):
    """Posterior class probabilities given responses: Bayes rule under the
    class-conditional item model, so the interaction matrix does not
    appear.  Accepts a single response vector or an N x J matrix;
    log-sum-exp stabilized.
    """
    beta = beta.beta if isinstance(beta, ItemCoefficients) else np.asarray(beta, float)
    pi = pi.probs if isinstance(pi, ClassPrior) else np.asarray(pi, float)
    if not (pi > 0).any():
        raise ValueError("prior has no support")
    xarr = _as_x(x)
    single = xarr.ndim == 1
    X = np.atleast_2d(xarr)
    K = pi.size.bit_length() - 1
    class_logits = beta @ profile_design_matrix(K).T     # (J, 2^K)
    scores = X @ class_logits - log1pexp(class_logits).sum(axis=0)[None, :]
    with np.errstate(divide="ignore"):
        scores = scores + np.where(pi > 0, np.log(pi), -np.inf)[None, :]
    scores -= scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def _pseudo_posterior(beta, phi, pi, X):
    """Class weights proportional to prior times the per-class product of
    item conditionals given the rest of the responses.

    This is the E-step matching the marginal pseudo-likelihood the fit
    maximizes; it reduces to :func:`posterior_weights` when phi is zero.
    """
    K = pi.size.bit_length() - 1
    class_logits = beta @ profile_design_matrix(K).T
    eta = (X @ phi)[:, :, None] + class_logits[None, :, :]
    scores = X @ class_logits - log1pexp(eta).sum(axis=1)
    with np.errstate(divide="ignore"):
        scores = scores + np.where(pi > 0, np.log(pi), -np.inf)[None, :]
    scores -= scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    return w


# ---------------------------------------------------------------------------
# local quadratic for the interaction matrix
# ---------------------------------------------------------------------------

def quad_approx(model: GdcmModel, j: int, x_i, alpha, weight_floor: float = 1e-6):
    """IRLS weight and working response for one (subject, item, profile).

    The weight is the conditional Bernoulli variance (floored), the
    working response is the linear predictor plus the standardized
    residual at the current parameter values.
    """
    x_i = np.asarray(x_i, dtype=float)
    x_rest = np.delete(x_i, j)
    p = core.conditional_item_prob(model, j, x_rest, alpha)
    omega = max(p * (1.0 - p), weight_floor)
    dv = core.design_vector(alpha, K=model.K)
    eta = float(model.beta.beta[j] @ dv.entries + model.phi.phi[j] @ x_i)
    y = eta + (x_i[j] - p) / omega
    return omega, y


def soft_threshold(z: float, lam: float) -> float:
    """sign(z) * (|z| - lam)_+ with an exact zero in the dead zone."""
    if lam < 0:
        raise ValueError("threshold must be nonnegative")
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


class PhiQuadratic:
    """Working quadratic for the interaction matrix at a fixed expansion.

    Holds the posterior-averaged score and IRLS weight per (subject,
    item), so a coordinate update only needs O(N) work.  ``phi`` is the
    live working matrix (shared with the caller); ``delta`` tracks
    X @ (phi - phi_expansion) incrementally.
    """

    def __init__(self, X, weights, beta, phi, config: FitConfig, frozen_items=()):
        N, J = X.shape
        K = weights.shape[1].bit_length() - 1
        A = profile_design_matrix(K)
        class_logits = beta @ A.T                         # (J, 2^K)
        net = X @ phi
        eta = net[:, :, None] + class_logits[None, :, :]
        P = expit(eta)
        omega = np.clip(P * (1.0 - P), config.weight_floor, None)
        self.X = X
        self.N = N
        self.J = J
        # score[i,j] = sum_a w_ia (x_ij - P_ija); wbar = posterior-avg weight
        self.score = X - np.einsum("nc,njc->nj", weights, P)
        self.wbar = np.einsum("nc,njc->nj", weights, omega)
        self.xt_score = X.T @ self.score / N              # [jp, j]
        self.xt_wbar = X.T @ self.wbar / N                # [jp, j]
        self.phi = phi
        self.delta = np.zeros_like(self.score)            # X @ (phi - expansion)
        self.skipped = set()
        allowed = np.ones((J, J), dtype=bool)
        for j in frozen_items:
            allowed[j, :] = allowed[:, j] = False
        self.allowed = allowed
        self.trace = []

    def _oriented(self, j: int, jp: int, c_old: float):
        """Numerator/denominator of the regression of item j on item jp."""
        d = self.xt_wbar[jp, j]
        n = (self.xt_score[jp, j]
             - self.X[:, jp] @ (self.wbar[:, j] * self.delta[:, j]) / self.N
             + c_old * d)
        return n, d

    def coordinate_update(self, j: int, jp: int, lam: float) -> float:
        """Soft-thresholded update of phi[j, jp], pooled over both
        orientations so symmetry is exact; writes both entries."""
        if not j < jp:
            raise ValueError("coordinate must lie in the upper triangle")
        c_old = self.phi[j, jp]
        n1, d1 = self._oriented(j, jp, c_old)
        n2, d2 = self._oriented(jp, j, c_old)
        denom = d1 + d2
        if denom <= 0.0:
            self.skipped.add((j, jp))
            return c_old
        c_new = soft_threshold(n1 + n2, lam) / denom
        if c_new != c_old:
            step = c_new - c_old
            self.delta[:, j] += step * self.X[:, jp]
            self.delta[:, jp] += step * self.X[:, j]
            self.phi[j, jp] = self.phi[jp, j] = c_new
        return c_new

    def objective(self, lam: float) -> float:
        """Penalized quadratic objective, up to a constant in phi."""
        smooth = (self.delta * self.score).sum() / self.N \
            - 0.5 * (self.wbar * self.delta ** 2).sum() / self.N
        iu = np.triu_indices(self.J, k=1)
        return smooth - lam * np.abs(self.phi[iu]).sum()

    def _sweep(self, coords, lam: float) -> float:
        worst = 0.0
        for j, jp in coords:
            before = self.phi[j, jp]
            after = self.coordinate_update(j, jp, lam)
            worst = max(worst, abs(after - before))
        return worst

    def _numerators(self) -> np.ndarray:
        """Pooled update numerators for every pair at the current state.

        Entry (j, jp) is what ``coordinate_update`` would soft-threshold;
        one matrix product replaces a full pass over zero coordinates
        (whose update is a no-op whenever |numerator| <= lam).
        """
        m1 = self.X.T @ (self.score - self.delta * self.wbar) / self.N
        return m1 + m1.T + self.phi * (self.xt_wbar + self.xt_wbar.T)

    def _entrants(self, lam: float) -> list:
        """Zero coordinates whose thresholded update would become nonzero."""
        num = self._numerators()
        iu = np.triu_indices(self.J, k=1)
        out = []
        for j, jp in zip(*iu):
            if (self.allowed[j, jp] and self.phi[j, jp] == 0.0
                    and abs(num[j, jp]) > lam):
                out.append((j, jp))
        return out

    def solve(self, lam: float, inner_tol: float, inner_max: int):
        """Coordinate descent with glmnet-style active-set cycling.

        Each round screens every pair for would-be entrants (equivalent to
        a full pass, since a zero coordinate below the threshold is left
        unchanged by its update), then cycles the nonzero set to
        stability; converged when a stable sweep admits no new entrants.
        """
        iu = np.triu_indices(self.J, k=1)
        self.trace = [self.objective(lam)]
        sweeps = 0
        while sweeps < inner_max:
            active = [(j, jp) for j, jp in zip(*iu)
                      if self.allowed[j, jp] and self.phi[j, jp] != 0.0]
            entrants = self._entrants(lam)
            coords = sorted(set(active) | set(entrants))
            if not coords:
                break
            change = self._sweep(coords, lam)
            sweeps += 1
            self.trace.append(self.objective(lam))
            if change < inner_tol and not self._entrants(lam):
                break


# ---------------------------------------------------------------------------
# fit state and the three M-step updates
# ---------------------------------------------------------------------------

@dataclass
class FitState:
    """Mutable working state of one fit."""

    x: np.ndarray
    q: QMatrix
    family: str
    mask: np.ndarray
    config: FitConfig
    beta: np.ndarray
    phi: np.ndarray
    pi: np.ndarray
    weights: np.ndarray | None = None
    quad: PhiQuadratic | None = None
    frozen_items: tuple = ()
    n_outer: int = 0
    trace: list = field(default_factory=list)
    skipped_phi: set = field(default_factory=set)

    def refresh_weights(self):
        self.weights = _pseudo_posterior(self.beta, self.phi, self.pi, self.x)

    def refresh_quadratic(self):
        if self.weights is None:
            self.refresh_weights()
        self.quad = PhiQuadratic(self.x, self.weights, self.beta, self.phi,
                                 self.config, self.frozen_items)


def phi_coordinate_update(state: FitState, j: int, jp: int, lam: float) -> float:
    """One soft-thresholded coordinate step; updates both symmetric entries."""
    if state.quad is None:
        state.refresh_quadratic()
    value = state.quad.coordinate_update(j, jp, lam)
    state.skipped_phi |= state.quad.skipped
    return value


def update_phi(state: FitState, lam: float) -> np.ndarray:
    """Solve the penalized quadratic in phi around the current estimate."""
    state.refresh_quadratic()
    state.quad.solve(lam, state.config.inner_tol, state.config.inner_max)
    state.skipped_phi |= state.quad.skipped
    return state.phi


def _newton_1d(h0: float, net_sets, cfg: FitConfig) -> float:
    """Damped Newton maximization of a shared-logit term.

    ``net_sets`` is a list of (w, x, net) cell blocks whose predictor is
    h + net; returns the maximizing h (predictors clamped).
    """
    eta_cap = -logit(cfg.prob_clamp)

    def value_grad_hess(h):
        f = g = hess = 0.0
        for w, x, net in net_sets:
            ec = np.clip(h + net, -eta_cap, eta_cap)
            p = expit(ec)
            f += float((w * (x * ec - log1pexp(ec))).sum())
            g += float((w * (x - p)).sum())
            hess += float((w * p * (1.0 - p)).sum())
        return f, g, hess

    h = min(max(h0, -eta_cap), eta_cap)
    for _ in range(cfg.inner_max):
        f0, g, hess = value_grad_hess(h)
        if not np.isfinite(f0):
            raise NumericalError("non-finite objective in coefficient update")
        step = g / max(hess, 1e-12)
        moved = False
        for _half in range(30):
            # separated data would push the logit off to infinity; the
            # clamp box is the admissible range
            cand = min(max(h + step, -eta_cap), eta_cap)
            if cand == h:
                break
            f1, _, _ = value_grad_hess(cand)
            if np.isfinite(f1) and f1 >= f0 - 1e-12 * (1.0 + abs(f0)):
                if abs(cand - h) < cfg.inner_tol:
                    return cand
                h = cand
                moved = True
                break
            step *= 0.5
        if not moved:
            return h
    return h


def _update_beta_dina(state: FitState) -> np.ndarray:
    """Exact per-item maximization for the conjunctive family.

    In the (non-mastery logit, mastery logit) basis the item objective
    splits into two independent one-dimensional problems; the monotone
    constraint only binds when the unconstrained mastery logit falls below
    the non-mastery one, in which case both share the pooled maximizer.
    """
    cfg = state.config
    X, W = state.x, state.weights
    A = profile_design_matrix(state.q.K)
    beta = state.beta.copy()
    net = X @ state.phi
    pos = core.subset_position(state.q.K)
    for j in range(state.q.J):
        if j in state.frozen_items:
            continue
        required = tuple(np.flatnonzero(state.q.loadings[j]))
        m_j = pos[required]
        mastery = A[:, m_j] > 0.0
        xj = X[:, j:j + 1]
        nb = net[:, j:j + 1]
        lo_cells = (W[:, ~mastery], xj, nb)
        hi_cells = (W[:, mastery], xj, nb)
        h0 = _newton_1d(beta[j, 0], [lo_cells], cfg)
        h1 = _newton_1d(beta[j, 0] + beta[j, m_j], [hi_cells], cfg)
        if cfg.monotone_dina and h1 < h0:
            h0 = h1 = _newton_1d(beta[j, 0], [lo_cells, hi_cells], cfg)
        beta[j, 0] = h0
        beta[j, m_j] = h1 - h0
    return beta


def update_beta(state: FitState) -> np.ndarray:
    """Damped Newton maximization of the weighted log pseudo-likelihood
    per free coefficient, holding the interaction matrix and prior fixed.

    Linear predictors are clamped so conditional probabilities stay inside
    [prob_clamp, 1-prob_clamp]; under the monotone option, guess/slip
    interaction coefficients are kept nonnegative.  The conjunctive family
    solves each item exactly in a separable basis; the general family
    cycles coordinates until max change < inner_tol.
    """
    if state.family == "dina":
        return _update_beta_dina(state)
    cfg = state.config
    X = state.x
    W = state.weights
    K = state.q.K
    A = profile_design_matrix(K)
    eta_cap = -logit(cfg.prob_clamp)
    beta = state.beta.copy()
    net = X @ state.phi

    for j in range(state.q.J):
        if j in state.frozen_items:
            continue
        coords = np.flatnonzero(state.mask[j])
        xj = X[:, j:j + 1]
        eta = net[:, j:j + 1] + (A @ beta[j])[None, :]    # (N, 2^K)
        for _ in range(cfg.inner_max):
            worst = 0.0
            for c in coords:
                support = A[:, c] > 0.0                   # classes the coord acts on
                eta_s = eta[:, support]
                ec = np.clip(eta_s, -eta_cap, eta_cap)
                P = expit(ec)
                Ws = W[:, support]
                grad = float((Ws * (xj - P)).sum())
                hess = float((Ws * P * (1.0 - P)).sum())
                if hess < 1e-12:
                    continue
                f0 = float((Ws * (xj * ec - log1pexp(ec))).sum())
                if not np.isfinite(f0):
                    raise NumericalError(f"non-finite objective at item {j}")
                step = grad / hess
                old = beta[j, c]
                new = old
                for _half in range(30):
                    cand = min(max(old + step, -2 * eta_cap), 2 * eta_cap)
                    if cand == old:
                        break
                    ec1 = np.clip(eta_s + (cand - old), -eta_cap, eta_cap)
                    f1 = float((Ws * (xj * ec1 - log1pexp(ec1))).sum())
                    if not np.isfinite(f1):
                        raise NumericalError(f"non-finite objective at item {j}")
                    if f1 >= f0 - 1e-12 * (1.0 + abs(f0)):
                        new = cand
                        break
                    step *= 0.5
                if new != old:
                    eta[:, support] += new - old
                    beta[j, c] = new
                    worst = max(worst, abs(new - old))
            if worst < cfg.inner_tol:
                break
    return beta


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u > css / idx)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def _pi_coupled_objective(pi, W, X, beta, phi, K):
    A = profile_design_matrix(K)
    class_logits = beta @ A.T
    net = X @ phi
    eta = net[:, :, None] + class_logits[None, :, :]
    # log of the profile-posterior numerator with item j's response removed
    loge = (X @ class_logits)[:, None, :] \
        - X[:, :, None] * class_logits[None, :, :] + log1pexp(eta)

    def objective(p):
        lp = np.log(np.clip(p, 1e-300, None))
        scores = lp[None, None, :] + loge
        m = scores.max(axis=2)
        lse = m + np.log(np.exp(scores - m[:, :, None]).sum(axis=2))
        return float(X.shape[1] * (W.sum(axis=0) @ lp) - lse.sum())

    def gradient(p):
        lp = np.log(np.clip(p, 1e-300, None))
        scores = lp[None, None, :] + loge
        m = scores.max(axis=2)
        lse = m + np.log(np.exp(scores - m[:, :, None]).sum(axis=2))
        resp = np.exp(scores - lse[:, :, None]).sum(axis=(0, 1))
        return (X.shape[1] * W.sum(axis=0) - resp) / np.clip(p, 1e-300, None)

    return objective, gradient


def update_pi(state: FitState) -> np.ndarray:
    """Class-prior update.

    Default: posterior mean (standard mixture M-step).  With
    ``pi_exact``: projected gradient ascent on the coupled objective that
    keeps the profile-posterior denominator, 25 steps with backtracking.
    """
    W = state.weights
    if not state.config.pi_exact:
        pi = W.mean(axis=0)
        return pi / pi.sum()

    objective, gradient = _pi_coupled_objective(
        state.pi, W, state.x, state.beta, state.phi, state.q.K)
    pi = state.pi.copy()
    f = objective(pi)
    for _ in range(25):
        g = gradient(pi)
        t = 1.0 / (np.abs(g).max() + 1e-12)
        improved = False
        for _half in range(40):
            cand = _project_simplex(pi + t * g)
            cand = np.clip(cand, 1e-10, None)
            cand /= cand.sum()
            fc = objective(cand)
            if fc > f:
                pi, f = cand, fc
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return pi


# ---------------------------------------------------------------------------
# full fits
# ---------------------------------------------------------------------------

def log_pseudo_likelihood(beta, phi, pi, x) -> float:
    """Marginal log pseudo-likelihood sum_i log sum_a pi_a prod_j f(x_ij | rest, a)."""
    beta = beta.beta if isinstance(beta, ItemCoefficients) else np.asarray(beta, float)
    phi = phi.phi if isinstance(phi, DesignMatrix) else np.asarray(phi, float)
    pi = pi.probs if isinstance(pi, ClassPrior) else np.asarray(pi, float)
    X = _as_x(x)
    K = pi.size.bit_length() - 1
    class_logits = beta @ profile_design_matrix(K).T
    net = X @ phi
    eta = net[:, :, None] + class_logits[None, :, :]
    sp = log1pexp(eta).sum(axis=1)                        # (N, 2^K)
    with np.errstate(divide="ignore"):
        scores = np.where(pi > 0, np.log(pi), -np.inf)[None, :] \
            + X @ class_logits - sp
    m = scores.max(axis=1)
    lse = m + np.log(np.exp(scores - m[:, None]).sum(axis=1))
    return float(((net * X).sum(axis=1) + lse).sum())


@dataclass
class PathPoint:
    lambda_: float
    bic: float
    n_edges: int
    log_pseudo_likelihood: float
    converged: bool
    n_outer_iters: int

    def to_dict(self) -> dict:
        return {
            "lambda": self.lambda_, "bic": self.bic, "n_edges": self.n_edges,
            "log_pseudo_likelihood": self.log_pseudo_likelihood,
            "converged": self.converged, "n_outer_iters": self.n_outer_iters,
        }


@dataclass
class FitResult:
    model: GdcmModel
    lambda_: float | None
    bic: float
    n_edges: int
    log_pseudo_likelihood: float
    converged: bool
    n_outer_iters: int
    path: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> PathPoint:
        return PathPoint(self.lambda_, self.bic, self.n_edges,
                         self.log_pseudo_likelihood, self.converged,
                         self.n_outer_iters)


def n_free_parameters(mask: np.ndarray, n_edges: int) -> int:
    """Item coefficients plus selected edges (the prior is not counted)."""
    return int(mask.sum()) + n_edges


def count_edges(phi: np.ndarray) -> int:
    iu = np.triu_indices(phi.shape[0], k=1)
    return int((phi[iu] != 0.0).sum())


def _initial_params(X, q: QMatrix, family: str, config: FitConfig):
    J, K = q.J, q.K
    C = core.n_classes(K)
    means = X.mean(axis=0)
    frozen = tuple(int(j) for j in range(J) if means[j] in (0.0, 1.0))
    beta = np.zeros((J, C))
    if family == "dina":
        for j in range(J):
            beta[j] = core.dina_to_beta(0.2, 0.2, q.loadings[j])
    else:
        clipped = np.clip(means, config.prob_clamp, 1.0 - config.prob_clamp)
        beta[:, 0] = logit(clipped)
    cap = logit(1.0 - config.prob_clamp)
    for j in frozen:
        beta[j] = 0.0
        beta[j, 0] = cap if means[j] == 1.0 else -cap
    phi = np.zeros((J, J))
    pi = np.full(C, 1.0 / C)
    return beta, phi, pi, frozen


def fit_fixed_lambda(x, q, config: FitConfig, lam: float, family: str = "dina",
                     graph: bool = True, init=None) -> FitResult:
    """One penalized fit at a fixed penalty (``graph=False`` pins phi at 0)."""
    X = _as_x(x)
    qm = _as_q(q)
    if X.shape[1] != qm.J:
        raise ValueError(
            f"responses have {X.shape[1]} items but Q has {qm.J} rows")
    if graph and (lam is None or lam < 0):
        raise ValueError("penalty must be nonnegative")
    mask = core.family_mask(family, qm)
    beta0, phi0, pi0, frozen = _initial_params(X, qm, family, config)
    if init is not None:
        beta0, phi0, pi0 = (np.array(init[0]), np.array(init[1]), np.array(init[2]))
    state = FitState(x=X, q=qm, family=family, mask=mask, config=config,
                     beta=beta0, phi=phi0, pi=pi0, frozen_items=frozen)

    converged = False
    for outer in range(1, config.outer_max + 1):
        state.n_outer = outer
        state.refresh_weights()
        assert np.allclose(state.weights.sum(axis=1), 1.0, atol=1e-10)
        prev = (state.beta.copy(), state.phi.copy(), state.pi.copy())
        if graph:
            update_phi(state, lam)
            assert (state.phi == state.phi.T).all() and not np.diag(state.phi).any()
        state.beta = update_beta(state)
        state.pi = update_pi(state)
        delta = max(
            np.abs(state.beta - prev[0]).max(),
            np.abs(state.phi - prev[1]).max(),
            np.abs(state.pi - prev[2]).max(),
        )
        state.trace.append(delta)
        if delta < config.outer_tol:
            converged = True
            break

    ll = log_pseudo_likelihood(state.beta, state.phi, state.pi, X)
    edges = count_edges(state.phi)
    bic = -2.0 * ll + n_free_parameters(mask, edges) * np.log(X.shape[0])
    pi_final = state.pi / state.pi.sum()
    model = GdcmModel(
        q=qm,
        beta=ItemCoefficients(state.beta, mask),
        phi=DesignMatrix(state.phi),
        prior=ClassPrior(pi_final),
        family=family,
    )
    result = FitResult(
        model=model, lambda_=(lam if graph else None), bic=float(bic),
        n_edges=edges, log_pseudo_likelihood=float(ll), converged=converged,
        n_outer_iters=state.n_outer,
        diagnostics={
            "frozen_items": list(frozen),
            "skipped_phi_coordinates": sorted(state.skipped_phi),
        },
    )
    result.path = [result.summary()]
    return result


def _lambda_max_from_fit(X, result: FitResult, config: FitConfig) -> float:
    """Smallest penalty that keeps every coordinate at zero when expanding
    around the graph-free fit.

    The maximal pooled numerator is inflated by 1% so that boundary fits
    stay empty despite the small posterior-weight drift of the first few
    alternations after the warm start.
    """
    m = result.model
    W = _pseudo_posterior(m.beta.beta, m.phi.phi, m.prior.probs, X)
    quad = PhiQuadratic(X, W, m.beta.beta, np.zeros_like(m.phi.phi), config,
                        tuple(result.diagnostics.get("frozen_items", ())))
    num = quad.xt_score + quad.xt_score.T
    iu = np.triu_indices(m.J, k=1)
    allowed = quad.allowed[iu]
    vals = np.abs(num[iu])[allowed]
    return float(max(vals.max(initial=0.0) * 1.01, 1e-8))


def lambda_max(x, q, config: FitConfig, family: str = "dina") -> float:
    X = _as_x(x)
    dcm = fit_fixed_lambda(X, q, config, lam=None, family=family, graph=False)
    return _lambda_max_from_fit(X, dcm, config)


def fit_path(x, q, config: FitConfig, family: str = "dina") -> FitResult:
    """BIC-selected fit over a warm-started decreasing penalty grid.

    The grid runs geometrically from the smallest all-zero penalty down to
    ``path_min_ratio`` of it; ties in BIC go to the sparser (larger
    penalty) fit.  The graph-free fit seeds the first path point.  Once
    the BIC has risen for ``path_bic_patience`` consecutive grid points
    the remaining (denser, slower) fits cannot be selected and the
    descent stops early.
    """
    X = _as_x(x)
    qm = _as_q(q)
    dcm = fit_fixed_lambda(X, qm, config, lam=None, family=family, graph=False)
    if isinstance(config.lambda_, (list, tuple, np.ndarray)):
        grid = np.sort(np.asarray(config.lambda_, dtype=float))[::-1]
        if (grid <= 0).any():
            raise ValueError("penalty grid must be positive")
    else:
        lam_hi = _lambda_max_from_fit(X, dcm, config)
        grid = np.geomspace(lam_hi, config.path_min_ratio * lam_hi,
                            config.path_length)

    warm = (dcm.model.beta.beta, dcm.model.phi.phi, dcm.model.prior.probs)
    best = None
    points = []
    rises = 0
    for lam in grid:
        res = fit_fixed_lambda(X, qm, config, lam=float(lam), family=family,
                               graph=True, init=warm)
        warm = (res.model.beta.beta, res.model.phi.phi, res.model.prior.probs)
        points.append(res.summary())
        if best is None or res.bic < best.bic:
            best = res
            rises = 0
        else:
            rises += 1
            if rises >= config.path_bic_patience:
                break
    best.path = points
    return best


def fit(x, q, config: FitConfig, family: str = "dina", graph: bool = True) -> FitResult:
    """Dispatch on the configured penalty: path selection or a fixed value."""
    if not graph:
        return fit_fixed_lambda(x, q, config, lam=None, family=family, graph=False)
    if isinstance(config.lambda_, str):
        if config.lambda_ != "auto":
            raise ValueError(f"unknown penalty spec {config.lambda_!r}")
        return fit_path(x, q, config, family=family)
    if isinstance(config.lambda_, (list, tuple, np.ndarray)):
        return fit_path(x, q, config, family=family)
    return fit_fixed_lambda(x, q, config, lam=float(config.lambda_),
                            family=family, graph=True)


# ---------------------------------------------------------------------------
# result serialization
# ---------------------------------------------------------------------------

def fit_result_to_dict(result: FitResult) -> dict:
    doc = core.model_to_dict(result.model)
    doc.update({
        "lambda": result.lambda_,
        "bic": result.bic,
        "log_pseudo_likelihood": result.log_pseudo_likelihood,
        "n_edges": result.n_edges,
        "converged": result.converged,
        "n_outer_iters": result.n_outer_iters,
        "path": [p.to_dict() for p in result.path],
        "diagnostics": result.diagnostics,
    })
    return doc


def fit_result_from_dict(doc: dict) -> FitResult:
    model = core.model_from_dict(doc)
    return FitResult(
        model=model,
        lambda_=doc["lambda"],
        bic=doc["bic"],
        n_edges=doc["n_edges"],
        log_pseudo_likelihood=doc["log_pseudo_likelihood"],
        converged=doc["converged"],
        n_outer_iters=doc["n_outer_iters"],
        path=[PathPoint(p["lambda"], p["bic"], p["n_edges"],
                        p["log_pseudo_likelihood"], p["converged"],
                        p["n_outer_iters"]) for p in doc.get("path", [])],
        diagnostics=doc.get("diagnostics", {}),
    )


def save_fit_result(result: FitResult, path: str):
    core.write_json_atomic(fit_result_to_dict(result), path)


def load_fit_result(path: str) -> FitResult:
    with open(path) as fh:
        return fit_result_from_dict(json.load(fh))
