import itertools

import mpmath
import numpy as np
import pytest
from scipy import optimize

from gdcm import core, estimate, simulate
from gdcm.estimate import (
    FitConfig,
    FitState,
    fit_fixed_lambda,
    fit_path,
    lambda_max,
    log_pseudo_likelihood,
    phi_coordinate_update,
    posterior_weights,
    quad_approx,
    soft_threshold,
    update_beta,
    update_phi,
    update_pi,
)
import helpers


def _toy_state(seed=42, N=60, J=4, K=1, phi_edges=((0, 1, 0.3), (2, 3, -0.2))):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(N, J)).astype(float)
    q = core.QMatrix(np.ones((J, K), dtype=int))
    cfg = FitConfig()
    beta = np.vstack([core.dina_to_beta(0.25, 0.15, q.loadings[j])
                      for j in range(J)])
    phi = np.zeros((J, J))
    for j, jp, v in phi_edges:
        phi[j, jp] = phi[jp, j] = v
    pi = np.full(core.n_classes(K), 1.0 / core.n_classes(K))
    state = FitState(x=X, q=q, family="dina", mask=core.family_mask("dina", q),
                     config=cfg, beta=beta, phi=phi, pi=pi)
    state.refresh_weights()
    return state


# ---------------------------------------------------------------------------
# posterior weights
# ---------------------------------------------------------------------------

def test_posterior_weights_flat_coefficients():
    pi = np.array([0.2, 0.3, 0.1, 0.4])
    x = np.array([1, 0, 1, 1, 0])
    w = posterior_weights(np.zeros((5, 4)), pi, x)
    assert np.allclose(w, pi, atol=1e-15)

    w_uniform = posterior_weights(np.zeros((5, 4)), np.full(4, 0.25), x)
    assert np.allclose(w_uniform, 0.25, atol=1e-15)


def test_posterior_weights_match_hand_bayes():
    # two classes, two items: Bayes rule over class-conditional Bernoullis
    q = core.QMatrix([[1], [1]])
    params = core.DinaItemParams(np.array([0.2, 0.3]), np.array([0.1, 0.15]))
    beta = core.dina_coefficients(params, q)
    pi = np.array([0.6, 0.4])
    for x in itertools.product((0, 1), repeat=2):
        like0 = np.prod([p ** xi * (1 - p) ** (1 - xi)
                         for p, xi in zip(params.guess, x)])
        like1 = np.prod([(1 - s) ** xi * s ** (1 - xi)
                         for s, xi in zip(params.slip, x)])
        want = np.array([pi[0] * like0, pi[1] * like1])
        want /= want.sum()
        got = posterior_weights(beta, pi, np.array(x))
        assert np.allclose(got, want, atol=1e-12)


def test_posterior_weights_rows_sum_to_one():
    rng = np.random.default_rng(8)
    X = rng.integers(0, 2, (200, 6)).astype(float)
    beta = rng.normal(size=(6, 4))
    pi = rng.dirichlet(np.ones(4))
    w = posterior_weights(beta, pi, X)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-10)
    assert (w >= 0).all()


def test_posterior_weights_rejects_empty_prior():
    with pytest.raises(ValueError):
        posterior_weights(np.zeros((2, 2)), np.zeros(2), np.array([1, 0]))


# ---------------------------------------------------------------------------
# local quadratic pieces
# ---------------------------------------------------------------------------

def test_quad_approx_half_probability():
    # beta = 0, no edges: P = 1/2, weight 1/4, working response pred + 2(x-P)...
    q = core.QMatrix([[1], [1]])
    beta = core.ItemCoefficients(np.zeros((2, 2)), core.dina_mask(q))
    model = core.GdcmModel(q, beta, core.DesignMatrix(np.zeros((2, 2))),
                           core.ClassPrior([0.5, 0.5]))
    omega, y = quad_approx(model, 0, np.array([1.0, 0.0]),
                           core.AttributeProfile.from_index(0, 1))
    assert omega == pytest.approx(0.25)
    assert y == pytest.approx(0.0 + (1 - 0.5) / 0.25)  # predictor 0, then +2


def test_quad_approx_floors_extreme_weight():
    q = core.QMatrix([[1], [1]])
    raw = np.zeros((2, 2))
    raw[0] = core.dina_to_beta(1 - 1e-12, 1e-12, [1])
    beta = core.ItemCoefficients(raw, core.dina_mask(q))
    model = core.GdcmModel(q, beta, core.DesignMatrix(np.zeros((2, 2))),
                           core.ClassPrior([0.5, 0.5]))
    omega, y = quad_approx(model, 0, np.array([1.0, 1.0]),
                           core.AttributeProfile.from_index(1, 1))
    assert omega == pytest.approx(1e-6)
    assert np.isfinite(y)


def test_quad_approx_matches_high_precision_derivatives():
    # the quadratic's slope/curvature at the expansion point must equal the
    # true conditional log-density's, computed with mpmath
    rng = np.random.default_rng(3)
    mpmath.mp.dps = 40
    for _ in range(10):
        model = helpers.random_model(rng, J=4, K=2, edge_prob=0.5)
        j = int(rng.integers(4))
        x = rng.integers(0, 2, 4).astype(float)
        a = int(rng.integers(4))
        alpha = core.AttributeProfile.from_index(a, 2)
        omega, y = quad_approx(model, j, x, alpha)
        dv = core.design_vector(alpha.bits)
        t0 = float(model.beta.beta[j] @ dv.entries + model.phi.phi[j] @ x)
        xj = int(x[j])

        def logf(t):
            return xj * t - mpmath.log(1 + mpmath.e ** t)

        h = mpmath.mpf("1e-12")
        d1 = (logf(t0 + h) - logf(t0 - h)) / (2 * h)
        d2 = (logf(t0 + h) - 2 * logf(t0) + logf(t0 - h)) / h ** 2
        # quadratic -omega/2 (t - y)^2 has slope omega (y - t0) and curvature -omega
        assert abs(float(d1) - omega * (y - t0)) < 1e-8
        assert abs(float(d2) + omega) < 1e-8


def test_soft_threshold_piecewise():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(1.0, 1.0) == 0.0
    z = soft_threshold(-0.3, 0.5)
    assert z == 0.0 and not np.signbit(z)  # exact positive zero
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


# ---------------------------------------------------------------------------
# coordinate update vs independent 1-D maximization
# ---------------------------------------------------------------------------

def _brute_penalized_quadratic(state, expansion_phi, c, j, jp, lam):
    """Independent evaluation of the penalized local quadratic at
    phi[j,jp] = c, extended precision."""
    LD = np.longdouble
    cfg = state.config
    X = state.x.astype(LD)
    W = state.weights.astype(LD)
    A = core.profile_design_matrix(state.q.K).astype(LD)
    beta = state.beta.astype(LD)
    phi_c = state.phi.astype(LD).copy()
    phi_c[j, jp] = phi_c[jp, j] = LD(c)
    exp_phi = expansion_phi.astype(LD)
    N, J = X.shape
    val = LD(0)
    for i in range(N):
        for a in range(W.shape[1]):
            dv = A[a]
            for jj in range(J):
                eta_ref = beta[jj] @ dv + exp_phi[jj] @ X[i]
                P = 1 / (1 + np.exp(-eta_ref))
                om = max(P * (1 - P), LD(cfg.weight_floor))
                yy = eta_ref + (X[i, jj] - P) / om
                eta_new = beta[jj] @ dv + phi_c[jj] @ X[i]
                val += LD(-0.5) * W[i, a] * om * (eta_new - yy) ** 2
    iu = np.triu_indices(J, k=1)
    return val / N - LD(lam) * np.abs(phi_c[iu]).sum()


def _golden_max(f, lo, hi, iters=160):
    LD = np.longdouble
    gr = (np.sqrt(LD(5)) - 1) / 2
    a, b = LD(lo), LD(hi)
    c = b - gr * (b - a)
    d = a + gr * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = f(d)
    return float((a + b) / 2)


def test_phi_coordinate_update_matches_golden_section():
    state = _toy_state()
    expansion = state.phi.copy()
    state.refresh_quadratic()
    for (j, jp, lam) in [(0, 1, 0.05), (2, 3, 0.0), (0, 2, 0.02), (1, 3, 0.5)]:
        got = phi_coordinate_update(state, j, jp, lam)
        oracle = _golden_max(
            lambda c: _brute_penalized_quadratic(state, expansion, c, j, jp, lam),
            -4.0, 4.0)
        assert abs(got - oracle) <= 1e-8
        assert state.phi[j, jp] == state.phi[jp, j] == got


def test_phi_coordinate_update_thresholds_to_zero():
    state = _toy_state(phi_edges=())
    state.refresh_quadratic()
    num = state.quad._numerators()
    lam = abs(num[0, 1]) * 1.001
    assert phi_coordinate_update(state, 0, 1, lam) == 0.0


def test_phi_coordinate_update_wls_at_zero_penalty():
    # J=2: the unpenalized update is the pooled weighted-least-squares
    # slope of the working responses on the other item
    state = _toy_state(seed=9, N=40, J=2, K=1, phi_edges=())
    state.refresh_quadratic()
    X, W = state.x, state.weights
    A = core.profile_design_matrix(1)
    num = den = 0.0
    for i in range(40):
        for a in range(2):
            dv = A[a]
            for (jj, other) in ((0, 1), (1, 0)):
                eta = float(state.beta[jj] @ dv)  # phi = 0 at expansion
                P = 1 / (1 + np.exp(-eta))
                om = max(P * (1 - P), state.config.weight_floor)
                y = eta + (X[i, jj] - P) / om
                num += W[i, a] * om * X[i, other] * (y - eta)
                den += W[i, a] * om * X[i, other] ** 2
    want = num / den
    got = phi_coordinate_update(state, 0, 1, 0.0)
    assert got == pytest.approx(want, abs=1e-10)


def test_phi_coordinate_update_skips_empty_column():
    state = _toy_state(seed=5, N=30, J=4)
    state.x = state.x.copy()
    state.x[:, [1, 2]] = 0.0
    state.refresh_weights()
    state.refresh_quadratic()
    before = state.phi[1, 2]
    got = phi_coordinate_update(state, 1, 2, 0.1)
    assert got == before
    assert (1, 2) in state.skipped_phi


# ---------------------------------------------------------------------------
# full interaction-matrix update
# ---------------------------------------------------------------------------

def test_update_phi_zero_on_independent_data():
    cfg_sim = simulate.sim_config(2, 400, "null", J=6, seed=14, burn_in=20)
    x, truth = simulate.simulate_dataset(cfg_sim)
    state = _state_from_data(x, truth)
    update_phi(state, lam=1.0)
    assert (state.phi == 0).all()


def _state_from_data(x, truth, cfg=None):
    cfg = cfg or FitConfig()
    X = x.x.astype(float)
    q = truth.model.q
    beta0, phi0, pi0, frozen = estimate._initial_params(X, q, "dina", cfg)
    state = FitState(x=X, q=q, family="dina", mask=core.family_mask("dina", q),
                     config=cfg, beta=beta0, phi=phi0, pi=pi0,
                     frozen_items=frozen)
    state.refresh_weights()
    return state


def test_update_phi_objective_monotone():
    cfg_sim = simulate.sim_config(2, 300, "pair", J=6, seed=15, burn_in=30)
    x, truth = simulate.simulate_dataset(cfg_sim)
    state = _state_from_data(x, truth)
    update_phi(state, lam=0.02)
    trace = np.asarray(state.quad.trace)
    assert (np.diff(trace) >= -1e-9).all()
    assert (state.phi == state.phi.T).all()
    assert not np.diag(state.phi).any()


def test_update_phi_matches_smooth_maximizer_at_zero_penalty():
    # lam = 0 makes the objective a smooth quadratic; compare the
    # coordinate solution to a quasi-Newton maximizer over the 6 free
    # coordinates of a J=4 problem
    state = _toy_state(seed=21, N=80, J=4, K=1,
                       phi_edges=((0, 1, 0.4), (1, 2, -0.3)))
    expansion = state.phi.copy()
    quad_state = _toy_state(seed=21, N=80, J=4, K=1,
                            phi_edges=((0, 1, 0.4), (1, 2, -0.3)))
    update_phi(quad_state, lam=0.0)

    iu = np.triu_indices(4, k=1)

    def negobj(vec):
        phi = np.zeros((4, 4))
        phi[iu] = vec
        phi += phi.T
        # brute evaluation of the quadratic around the expansion point
        X, W = state.x, state.weights
        A = core.profile_design_matrix(1)
        val = 0.0
        for i in range(X.shape[0]):
            for a in range(2):
                dv = A[a]
                for jj in range(4):
                    eta_ref = float(state.beta[jj] @ dv + expansion[jj] @ X[i])
                    P = 1 / (1 + np.exp(-eta_ref))
                    om = max(P * (1 - P), state.config.weight_floor)
                    y = eta_ref + (X[i, jj] - P) / om
                    eta_new = float(state.beta[jj] @ dv + phi[jj] @ X[i])
                    val += -0.5 * W[i, a] * om * (eta_new - y) ** 2
        return -val / X.shape[0]

    res = optimize.minimize(negobj, np.zeros(6), method="L-BFGS-B",
                            options={"ftol": 1e-14, "gtol": 1e-10})
    assert np.abs(quad_state.phi[iu] - res.x).max() <= 1e-4


# ---------------------------------------------------------------------------
# coefficient update
# ---------------------------------------------------------------------------

def test_update_beta_single_class_intercept():
    # all posterior mass on the no-mastery class: the intercept is a plain
    # logistic MLE, the mastery logit is unidentified and left alone
    rng = np.random.default_rng(30)
    N, J = 400, 3
    X = (rng.random((N, J)) < 0.3).astype(float)
    q = core.QMatrix(np.ones((J, 1), dtype=int))
    cfg = FitConfig()
    beta0 = np.vstack([core.dina_to_beta(0.2, 0.2, [1])] * J)
    state = FitState(x=X, q=q, family="dina", mask=core.family_mask("dina", q),
                     config=cfg, beta=beta0, phi=np.zeros((J, J)),
                     pi=np.array([1.0, 0.0]))
    state.weights = np.column_stack([np.ones(N), np.zeros(N)])
    new = update_beta(state)
    for j in range(J):
        assert new[j, 0] == pytest.approx(core.logit(X[:, j].mean()), abs=1e-6)


def test_update_beta_monotone_projection():
    # force data where the unconstrained mastery logit would fall below
    # the non-mastery one; the pooled solution must satisfy the bound
    rng = np.random.default_rng(31)
    N = 300
    X = np.column_stack([
        (rng.random(N) < 0.8).astype(float),
        (rng.random(N) < 0.5).astype(float),
    ])
    # mastery indicator anti-correlated with success on item 0
    w1 = np.where(X[:, 0] > 0, 0.2, 0.8)
    state = FitState(
        x=X, q=core.QMatrix(np.ones((2, 1), dtype=int)), family="dina",
        mask=core.family_mask("dina", core.QMatrix(np.ones((2, 1), dtype=int))),
        config=FitConfig(), beta=np.zeros((2, 2)), phi=np.zeros((2, 2)),
        pi=np.array([0.5, 0.5]))
    state.weights = np.column_stack([1 - w1, w1])
    new = update_beta(state)
    assert new[0, 1] >= 0.0


def test_update_beta_stationary_gradient():
    cfg_sim = simulate.sim_config(2, 500, "pair", J=6, seed=33, burn_in=30)
    x, truth = simulate.simulate_dataset(cfg_sim)
    cfg = FitConfig()
    res = fit_fixed_lambda(x, truth.model.q, cfg, lam=0.05)
    X = x.x.astype(float)
    state = FitState(x=X, q=truth.model.q, family="dina",
                     mask=core.family_mask("dina", truth.model.q), config=cfg,
                     beta=res.model.beta.beta.copy(), phi=res.model.phi.phi.copy(),
                     pi=res.model.prior.probs.copy())
    state.refresh_weights()
    state.beta = update_beta(state)  # one more sweep from the fixed point
    A = core.profile_design_matrix(2)
    W = state.weights
    eta_cap = -core.logit(cfg.prob_clamp)

    def weighted_pl(beta):
        logits = beta @ A.T
        eta = np.clip((X @ state.phi)[:, :, None] + logits[None, :, :],
                      -eta_cap, eta_cap)
        terms = X[:, :, None] * eta - np.logaddexp(0.0, eta)
        return float(np.einsum("na,nja->", W, terms))

    h = 1e-5
    for j in range(6):
        for c in np.flatnonzero(state.mask[j]):
            val = state.beta[j, c]
            if abs(val) >= eta_cap - 1e-9 or (c != 0 and val <= 1e-9):
                continue  # clamped or at the monotone boundary
            bp, bm = state.beta.copy(), state.beta.copy()
            bp[j, c] += h
            bm[j, c] -= h
            grad = (weighted_pl(bp) - weighted_pl(bm)) / (2 * h)
            assert abs(grad) <= 1e-4, (j, c, grad)


def test_analytic_gradient_matches_central_differences():
    # the Newton numerator sum_ia W_ia a_c (x_ij - P_ija) against central
    # differences of the weighted objective at random points
    rng = np.random.default_rng(35)
    N, J, K = 120, 5, 2
    X = rng.integers(0, 2, (N, J)).astype(float)
    W = rng.dirichlet(np.ones(4), size=N)
    phi = np.zeros((J, J))
    phi[0, 1] = phi[1, 0] = 0.4
    A = core.profile_design_matrix(K)
    net = X @ phi
    for _ in range(10):
        beta = rng.normal(scale=0.7, size=(J, 4))
        j = int(rng.integers(J))
        c = int(rng.integers(4))

        def obj(b):
            eta = net[:, j][:, None] + (A @ b)[None, :]
            return float((W * (X[:, j][:, None] * eta
                               - np.logaddexp(0.0, eta))).sum())

        eta = net[:, j][:, None] + (A @ beta[j])[None, :]
        P = 1 / (1 + np.exp(-eta))
        analytic = float((W * A[:, c][None, :] * (X[:, j][:, None] - P)).sum())
        h = 1e-5
        bp, bm = beta[j].copy(), beta[j].copy()
        bp[c] += h
        bm[c] -= h
        fd = (obj(bp) - obj(bm)) / (2 * h)
        assert abs(analytic - fd) <= 1e-6 * max(1.0, abs(fd))


def test_update_beta_general_family():
    rng = np.random.default_rng(40)
    N, J, K = 300, 4, 1
    X = rng.integers(0, 2, (N, J)).astype(float)
    q = core.QMatrix(np.ones((J, K), dtype=int))
    cfg = FitConfig()
    state = FitState(x=X, q=q, family="general",
                     mask=core.family_mask("general", q), config=cfg,
                     beta=np.zeros((J, 2)), phi=np.zeros((J, J)),
                     pi=np.array([0.5, 0.5]))
    state.refresh_weights()
    new = update_beta(state)
    assert np.isfinite(new).all()
    # flat prior and zero coefficients give symmetric weights, so the
    # intercept should move toward the item mean logit
    again = update_beta(state)
    assert np.allclose(new, again)


# ---------------------------------------------------------------------------
# prior update
# ---------------------------------------------------------------------------

def test_update_pi_point_mass_and_flat():
    state = _toy_state()
    state.weights = np.zeros_like(state.weights)
    state.weights[:, 1] = 1.0
    pi = update_pi(state)
    assert np.allclose(pi, [0.0, 1.0])

    state2 = _toy_state(phi_edges=())
    state2.beta = np.zeros_like(state2.beta)
    state2.pi = np.array([0.5, 0.5])
    state2.refresh_weights()
    assert np.allclose(update_pi(state2), [0.5, 0.5], atol=1e-12)


def test_update_pi_exact_matches_grid_search():
    state = _toy_state(seed=18, N=4, J=4, K=1, phi_edges=())
    state.config = FitConfig(pi_exact=True)
    state.refresh_weights()
    got = update_pi(state)

    objective, _ = estimate._pi_coupled_objective(
        state.pi, state.weights, state.x, state.beta, state.phi, 1)
    grid = np.linspace(1e-4, 1 - 1e-4, 2001)
    vals = [objective(np.array([p, 1 - p])) for p in grid]
    best = grid[int(np.argmax(vals))]
    assert abs(got[0] - best) <= 1e-3


# ---------------------------------------------------------------------------
# full fits
# ---------------------------------------------------------------------------

def test_fit_huge_penalty_matches_graph_free():
    cfg_sim = simulate.sim_config(2, 300, "pair", J=6, seed=50, burn_in=30)
    x, truth = simulate.simulate_dataset(cfg_sim)
    cfg = FitConfig()
    res_pen = fit_fixed_lambda(x, truth.model.q, cfg, lam=1e9)
    res_off = fit_fixed_lambda(x, truth.model.q, cfg, lam=None, graph=False)
    assert res_pen.n_edges == 0
    assert np.abs(res_pen.model.beta.beta - res_off.model.beta.beta).max() <= 1e-6
    assert np.abs(res_pen.model.prior.probs - res_off.model.prior.probs).max() <= 1e-6


def test_fit_beats_random_restarts():
    rng = np.random.default_rng(60)
    X = rng.integers(0, 2, (10, 4)).astype(float)
    q = core.QMatrix(np.ones((4, 1), dtype=int))
    cfg = FitConfig()
    res = fit_fixed_lambda(X, q, cfg, lam=0.0)
    ours = log_pseudo_likelihood(res.model.beta.beta, res.model.phi.phi,
                                 res.model.prior.probs, X)
    iu = np.triu_indices(4, k=1)
    for _ in range(200):
        beta = np.vstack([core.dina_to_beta(rng.uniform(0.01, 0.99),
                                            rng.uniform(0.01, 0.99), [1])
                          for _ in range(4)])
        phi = np.zeros((4, 4))
        phi[iu] = rng.uniform(-1, 1, 6)
        phi += phi.T
        pi = rng.dirichlet(np.ones(2))
        ll = log_pseudo_likelihood(beta, phi, pi, X)
        assert ours >= ll - 1e-9


def test_fit_respects_invariants_and_flags():
    cfg_sim = simulate.sim_config(2, 200, "pair", J=6, seed=51, burn_in=30)
    x, truth = simulate.simulate_dataset(cfg_sim)
    res = fit_fixed_lambda(x, truth.model.q, FitConfig(), lam=0.05)
    phi = res.model.phi.phi
    assert (phi == phi.T).all() and not np.diag(phi).any()
    assert res.model.prior.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert res.converged
    assert res.n_edges == estimate.count_edges(phi)


def test_fit_freezes_constant_item():
    rng = np.random.default_rng(52)
    X = rng.integers(0, 2, (150, 5)).astype(float)
    X[:, 2] = 1.0
    q = core.QMatrix(np.ones((5, 1), dtype=int))
    res = fit_fixed_lambda(X, q, FitConfig(), lam=0.01)
    assert 2 in res.diagnostics["frozen_items"]
    assert (res.model.phi.phi[2] == 0).all()
    g, s = core.beta_to_dina(res.model.beta.beta[2], [1])
    assert s <= 1e-7  # pinned at the clamp


def test_fit_dimension_mismatch_raises():
    X = np.zeros((10, 4), dtype=int)
    X[0] = 1
    q = core.QMatrix(np.ones((5, 1), dtype=int))
    with pytest.raises(ValueError):
        fit_fixed_lambda(X, q, FitConfig(), lam=0.1)


# ---------------------------------------------------------------------------
# penalty path
# ---------------------------------------------------------------------------

def test_lambda_max_boundary_behaviour():
    cfg_sim = simulate.sim_config(2, 400, "pair", J=6, seed=70, burn_in=50)
    x, truth = simulate.simulate_dataset(cfg_sim)
    cfg = FitConfig()
    lam_hi = lambda_max(x, truth.model.q, cfg)

    dcm = fit_fixed_lambda(x, truth.model.q, cfg, lam=None, graph=False)
    warm = (dcm.model.beta.beta, dcm.model.phi.phi, dcm.model.prior.probs)
    at_max = fit_fixed_lambda(x, truth.model.q, cfg, lam=lam_hi, init=warm)
    assert at_max.n_edges == 0

    # just below the largest numerator at least one coordinate enters
    state = FitState(x=x.x.astype(float), q=truth.model.q, family="dina",
                     mask=core.family_mask("dina", truth.model.q), config=cfg,
                     beta=dcm.model.beta.beta.copy(),
                     phi=np.zeros((6, 6)), pi=dcm.model.prior.probs.copy())
    state.refresh_weights()
    state.refresh_quadratic()
    num = state.quad._numerators()
    iu = np.triu_indices(6, k=1)
    largest = np.abs(num[iu]).max()
    assert lam_hi == pytest.approx(1.01 * largest, rel=1e-12)
    update_phi(state, lam=0.99 * largest)
    assert estimate.count_edges(state.phi) >= 1


def test_fit_path_selects_by_bic_and_reports_path():
    cfg_sim = simulate.sim_config(2, 500, "pair", J=6, seed=71, burn_in=50)
    x, truth = simulate.simulate_dataset(cfg_sim)
    cfg = FitConfig(path_length=8)
    res = fit_path(x, truth.model.q, cfg)
    assert len(res.path) >= 2
    bics = [p.bic for p in res.path]
    assert res.bic == min(bics)
    lams = [p.lambda_ for p in res.path]
    assert lams == sorted(lams, reverse=True)
    # weak path monotonicity: edge count non-increasing in the penalty
    edges = [p.n_edges for p in res.path]
    assert all(e2 >= e1 for e1, e2 in zip(edges, edges[1:]))


def test_fit_path_explicit_grid():
    cfg_sim = simulate.sim_config(2, 200, "pair", J=6, seed=72, burn_in=30)
    x, truth = simulate.simulate_dataset(cfg_sim)
    cfg = FitConfig(lambda_=[0.2, 0.05, 0.1])
    res = estimate.fit(x, truth.model.q, cfg)
    assert [p.lambda_ for p in res.path[:3]] == [0.2, 0.1, 0.05]


def test_fit_known_class_oracle_comparison():
    # conditionally independent data: marginal-likelihood fit vs the
    # known-class per-item logistic estimates (group means)
    cfg_sim = simulate.sim_config(2, 5000, "null", J=8, seed=73, burn_in=20)
    x, truth = simulate.simulate_dataset(cfg_sim)
    res = fit_fixed_lambda(x, truth.model.q, FitConfig(), lam=None, graph=False)
    fitted = core.dina_params(res.model.beta, res.model.q)
    mastery = (truth.model.q.loadings @ (1 - truth.alpha.T) == 0)
    X = x.x.astype(float)
    for j in range(8):
        g_oracle = X[~mastery[j], j].mean()
        s_oracle = 1.0 - X[mastery[j], j].mean()
        assert abs(fitted.guess[j] - g_oracle) <= 0.02
        assert abs(fitted.slip[j] - s_oracle) <= 0.02


def test_fit_result_json_round_trip(tmp_path):
    cfg_sim = simulate.sim_config(2, 150, "pair", J=6, seed=74, burn_in=20)
    x, truth = simulate.simulate_dataset(cfg_sim)
    res = fit_path(x, truth.model.q, FitConfig(path_length=4))
    path = tmp_path / "fit.json"
    estimate.save_fit_result(res, str(path))
    back = estimate.load_fit_result(str(path))
    assert back.lambda_ == res.lambda_
    assert back.bic == res.bic
    assert back.n_edges == res.n_edges
    assert (back.model.phi.phi == res.model.phi.phi).all()
    assert len(back.path) == len(res.path)


def test_fit_is_deterministic():
    cfg_sim = simulate.sim_config(2, 200, "pair", J=6, seed=75, burn_in=20)
    x, truth = simulate.simulate_dataset(cfg_sim)
    r1 = fit_fixed_lambda(x, truth.model.q, FitConfig(), lam=0.05)
    r2 = fit_fixed_lambda(x, truth.model.q, FitConfig(), lam=0.05)
    assert (r1.model.beta.beta == r2.model.beta.beta).all()
    assert (r1.model.phi.phi == r2.model.phi.phi).all()
