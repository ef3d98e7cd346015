"""Independent reference implementations used to check the engine.

Everything here is deliberately written from different math than the
package: direct quadrature instead of Laplace, raw formula translations
instead of shared helpers. Slow and dense is fine; these only run on small
fixtures.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize
from scipy.special import logsumexp, roots_hermite


def bernoulli_loglik_quad(y, eta_fixed, z_cols, sigma, limit=12.0):
    """Exact per-group marginal loglik by brute-force 1-D integration.

    One scalar random effect b ~ N(0, sigma^2) shared by all observations in
    the group: integral of prod_i p_i(b)^y (1-p_i(b))^(1-y) * phi(b) db.
    `z_cols` holds the random-effect covariate values (1s for an intercept).
    """
    y = np.asarray(y, dtype=float)
    eta_fixed = np.asarray(eta_fixed, dtype=float)
    z_cols = np.asarray(z_cols, dtype=float)

    def integrand(b):
        eta = eta_fixed + z_cols * b
        loglik = np.sum(y * eta - np.logaddexp(0.0, eta))
        return math.exp(loglik) * math.exp(-0.5 * (b / sigma) ** 2) / (
            sigma * math.sqrt(2 * math.pi))

    val, _ = quad(integrand, -limit * sigma, limit * sigma, limit=200)
    return math.log(val)


def _group_loglik_aghq(y, eta_fixed, z_cols, sigma, nodes, weights):
    """Adaptive Gauss-Hermite marginal loglik for one group, in log space."""
    y = np.asarray(y, dtype=float)
    eta_fixed = np.asarray(eta_fixed, dtype=float)
    z_cols = np.asarray(z_cols, dtype=float)

    def h(b):
        eta = eta_fixed + z_cols * b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta))
                     - 0.5 * (b / sigma) ** 2)

    def h_grad(b):
        eta = eta_fixed + z_cols * b
        p = 1.0 / (1.0 + np.exp(-eta))
        return float(np.sum((y - p) * z_cols) - b / sigma ** 2)

    def h_hess(b):
        eta = eta_fixed + z_cols * b
        p = 1.0 / (1.0 + np.exp(-eta))
        return float(-np.sum(p * (1 - p) * z_cols ** 2) - 1.0 / sigma ** 2)

    # Newton for the conditional mode
    m = 0.0
    for _ in range(100):
        step = h_grad(m) / h_hess(m)
        m -= step
        if abs(step) < 1e-12:
            break
    s_hat = 1.0 / math.sqrt(-h_hess(m))

    # sum_k w_k exp(t_k^2) exp(h(m + sqrt(2) s t_k)) * sqrt(2) s / (sigma sqrt(2 pi))
    logs = []
    for t, w in zip(nodes, weights):
        b = m + math.sqrt(2.0) * s_hat * t
        logs.append(math.log(w) + t * t + h(b))
    return logsumexp(logs) + math.log(math.sqrt(2.0) * s_hat) \
        - math.log(sigma * math.sqrt(2 * math.pi))


def bernoulli_loglik_aghq(y, X, beta, groups, z_cols, sigma, n_nodes=15):
    """AGHQ marginal loglik for a scalar-random-effect logistic GLMM.

    `groups` are integer labels; observations in different groups are
    independent so the total is a sum of per-group 1-D integrals.
    """
    nodes, weights = roots_hermite(n_nodes)
    eta_fixed = np.asarray(X) @ np.asarray(beta)
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups)
    z_cols = np.asarray(z_cols, dtype=float)
    total = 0.0
    for g in np.unique(groups):
        sel = groups == g
        total += _group_loglik_aghq(y[sel], eta_fixed[sel], z_cols[sel],
                                    sigma, nodes, weights)
    return total


def fit_bernoulli_aghq(y, X, groups, z_cols, n_nodes=15):
    """Maximize the AGHQ loglik over (beta, log sigma). Reference fitter."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]

    def negll(params):
        beta, log_sigma = params[:p], params[p]
        sigma = math.exp(log_sigma)
        return -bernoulli_loglik_aghq(y, X, beta, groups, z_cols, sigma,
                                      n_nodes)

    x0 = np.zeros(p + 1)
    res = minimize(negll, x0, method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 5000,
                            "maxfev": 8000})
    beta = res.x[:p]
    sigma = math.exp(res.x[p])
    return beta, sigma, -res.fun


def gaussian_loglik_direct(y, X, beta, Z, G, sigma_e):
    """Gaussian marginal loglik via the full dense covariance matrix."""
    y = np.asarray(y, dtype=float)
    n = y.size
    V = sigma_e ** 2 * np.eye(n) + np.asarray(Z) @ G @ np.asarray(Z).T
    r = y - np.asarray(X) @ beta
    sign, logdet = np.linalg.slogdet(V)
    assert sign > 0
    return float(-0.5 * (n * math.log(2 * math.pi) + logdet
                         + r @ np.linalg.solve(V, r)))


def reml_criterion_direct(y, X, Z, G_rel, sigma2):
    """Direct REML -2 loglik for checking the profiled criterion.

    G_rel is the random-effect covariance RELATIVE to sigma2 (the profiled
    parameterization): Var(b) = sigma2 * G_rel.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    V = sigma2 * (np.eye(n) + np.asarray(Z) @ G_rel @ np.asarray(Z).T)
    Vinv = np.linalg.inv(V)
    XtVX = X.T @ Vinv @ X
    beta = np.linalg.solve(XtVX, X.T @ Vinv @ y)
    r = y - X @ beta
    _, logdet_v = np.linalg.slogdet(V)
    _, logdet_x = np.linalg.slogdet(XtVX)
    return float(logdet_v + logdet_x + r @ Vinv @ r
                 + (n - p) * math.log(2 * math.pi))


def wilson_cc_reference(k, n, level=0.95):
    """Continuity-corrected Wilson interval, drawn straight from the formula
    in Newcombe (1998), eq. 4 — the prop.test construction."""
    from scipy.stats import norm
    z = norm.ppf(0.5 + level / 2)
    p = k / n
    q = 1 - p
    z2 = z * z
    lo = (2 * n * p + z2 - 1 - z * math.sqrt(z2 - 2 - 1 / n + 4 * p * (n * q + 1))) \
        / (2 * (n + z2))
    hi = (2 * n * p + z2 + 1 + z * math.sqrt(z2 + 2 - 1 / n + 4 * p * (n * q - 1))) \
        / (2 * (n + z2))
    return max(0.0, lo), min(1.0, hi)


def vacuum_range_ft(v_mph, angle_deg, g=9.80665):
    """Projectile range in vacuum from ground level, in feet."""
    v = v_mph * 0.44704
    theta = math.radians(angle_deg)
    return (v * v * math.sin(2 * theta) / g) * 3.2808398950131235
