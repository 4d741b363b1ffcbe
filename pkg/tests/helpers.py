"""Shared test utilities: design factories and independent dense oracles.

The oracles deliberately avoid the package's own factorization kernel so
that fast-path results are checked against a second, structurally different
computation (scipy null spaces, dense determinants and solves).
"""

import numpy as np
from scipy.linalg import null_space

from vctest.model import make_design


def indicators(codes, levels):
    z = np.zeros((len(codes), levels))
    z[np.arange(len(codes)), np.asarray(codes)] = 1.0
    return z


def one_way(m=4, r=3, x=None):
    codes = np.repeat(np.arange(m), r)
    n = m * r
    return make_design(np.ones((n, 1)) if x is None else x, [indicators(codes, m)])


def balanced_nested(m=3, n=2, r=2, x=None):
    n_obs = m * n * r
    bi = np.repeat(np.arange(m), n * r)
    pi = np.repeat(np.arange(m * n), r)
    return make_design(
        np.ones((n_obs, 1)) if x is None else x,
        [indicators(bi, m), indicators(pi, m * n)],
    )


def balanced_crossed(m=4, n=3, r=1, x=None):
    ii = np.repeat(np.arange(m), n * r)
    jj = np.tile(np.repeat(np.arange(n), r), m)
    n_obs = m * n * r
    return make_design(
        np.ones((n_obs, 1)) if x is None else x,
        [indicators(ii, m), indicators(jj, n)],
    )


def random_design(rng, max_n=60, max_d=3):
    """Random small design: mixed nested/crossed shapes, optional covariate."""
    kind = rng.integers(0, 3)
    if kind == 0:
        m, n, r = rng.integers(2, 5), rng.integers(2, 4), rng.integers(1, 4)
        while m * n * r > max_n:
            r = max(1, r - 1)
            n = max(2, n - 1)
            m = max(2, m - 1)
        builder = balanced_nested
        args = (int(m), int(n), int(r))
    elif kind == 1:
        m, n = rng.integers(2, 7), rng.integers(2, 6)
        builder = balanced_crossed
        args = (int(m), int(n), 1)
    else:
        m, r = rng.integers(3, 9), rng.integers(2, 6)
        builder = one_way
        args = (int(m), int(r))
    design = builder(*args)
    if rng.random() < 0.5:
        x = np.column_stack([np.ones(design.n), rng.normal(size=design.n)])
        design = builder(*args, x=x)
    if design.d > max_d:
        raise AssertionError("factory produced too many components")
    return design


def dense_sigma(design, tau):
    s = np.eye(design.n)
    for t, z in zip(tau, design.z_blocks):
        s += t * (z @ z.T)
    return s


def dense_nrll(design, y, tau):
    """Direct dense evaluation of the objective via an explicit residual basis."""
    u = null_space(design.x.T)
    w = u.T @ dense_sigma(design, tau) @ u
    sign, logdet = np.linalg.slogdet(w)
    if sign <= 0:
        return np.inf
    q = u.T @ y
    q = q / np.linalg.norm(q)
    return logdet + (design.n - design.p) * np.log(q @ np.linalg.solve(w, q))


def tau_inside(rng, design, lo=-1.0, hi=1.5, margin=1e-6):
    """Rejection-sample tau inside the parameter space (dense eigen check)."""
    for _ in range(500):
        tau = rng.uniform(lo, hi, size=design.d)
        if np.min(np.linalg.eigvalsh(dense_sigma(design, tau))) > margin:
            return tau
    raise RuntimeError("failed to sample a feasible tau")


def simulate_dense(rng, design, tau, beta=None, sigma2=1.0):
    """Draw y ~ N(X beta, sigma2 * Sigma(tau)) via a dense factor."""
    c = np.linalg.cholesky(dense_sigma(design, tau))
    mean = design.x @ (np.zeros(design.p) if beta is None else np.asarray(beta))
    return mean + np.sqrt(sigma2) * (c @ rng.standard_normal(design.n))
