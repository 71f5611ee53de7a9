"""Shared builders for small random model instances."""

import numpy as np

from gdcm import core


def random_q(rng, J, K):
    """Random loading matrix with no all-zero row."""
    codes = rng.integers(1, 1 << K, size=J)
    return core.QMatrix((codes[:, None] >> np.arange(K)[None, :]) & 1)


def random_model(rng, J, K, edge_prob=0.3, edge_scale=1.0, family="dina"):
    """Small random instance with sparse symmetric interactions."""
    q = random_q(rng, J, K)
    if family == "dina":
        params = core.DinaItemParams(
            guess=rng.uniform(0.05, 0.35, size=J),
            slip=rng.uniform(0.05, 0.35, size=J),
        )
        beta = core.dina_coefficients(params, q)
    else:
        raw = rng.normal(scale=0.8, size=(J, core.n_classes(K)))
        beta = core.ItemCoefficients(raw, core.family_mask("general", q))
    phi = np.zeros((J, J))
    for j in range(J):
        for jp in range(j + 1, J):
            if rng.random() < edge_prob:
                phi[j, jp] = phi[jp, j] = rng.uniform(-1, 1) * edge_scale
    probs = rng.dirichlet(np.ones(core.n_classes(K)))
    probs = probs / probs.sum()
    return core.GdcmModel(
        q=q,
        beta=beta,
        phi=core.DesignMatrix(phi),
        prior=core.ClassPrior(probs),
        family=family,
    )


def pattern_codes(x):
    x = np.asarray(x, dtype=int)
    return x @ (1 << np.arange(x.shape[1]))
