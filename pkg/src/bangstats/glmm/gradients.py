"""Analytic gradients of the marginal log-likelihood.

Dense reference implementations used to validate the engine: the finite
difference of `loglik` must agree with these to tight relative tolerance.
The Bernoulli case differentiates the Laplace approximation exactly,
including the dependence of the conditional mode u* and of the Hessian
determinant on the parameters (the "envelope" terms), so agreement with
finite differences is a sharp test rather than an asymptotic one.

Parameterization matches the fitter: theta is the flat log-Cholesky vector
for the per-term factors of the response-scale covariance blocks, and the
Gaussian residual scale enters as log(sigma_e).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .design import DesignBundle
from .fit import FitOptions, ThetaStructure, _pirls
from .modelspec import Family


def _dfactors(struct: ThetaStructure, theta: np.ndarray) -> list[list[np.ndarray]]:
    """d(block factor)/d(theta_k) for every theta entry, grouped by block."""
    factors = struct.factors(theta)
    out = []
    for blk, sl, L in zip(struct.blocks, struct.slices, factors):
        k = blk.k
        derivs = []
        if blk.correlated:
            for i in range(k):
                for j in range(i + 1):
                    D = np.zeros((k, k))
                    D[i, j] = L[i, i] if i == j else 1.0
                    derivs.append(D)
        else:
            for i in range(k):
                D = np.zeros((k, k))
                D[i, i] = L[i, i]
                derivs.append(D)
        out.append(derivs)
    return out


def _expand_block(struct: ThetaStructure, block_idx: int, D: np.ndarray,
                  ) -> np.ndarray:
    """Lift a per-block k x k derivative to the full q x q Lambda pattern."""
    q = sum(b.k * b.n_levels for b in struct.blocks)
    full = np.zeros((q, q))
    blk = struct.blocks[block_idx]
    off = blk.col_offset
    for lev in range(blk.n_levels):
        s = off + lev * blk.k
        full[s:s + blk.k, s:s + blk.k] = D
    return full


def loglik_theta(bundle: DesignBundle, beta: np.ndarray, theta: np.ndarray,
                 sigma_e: float | None = None,
                 options: FitOptions | None = None) -> float:
    """The public loglik re-expressed over (beta, theta, sigma_e)."""
    from .fit import loglik
    struct = ThetaStructure(bundle.blocks)
    factors = struct.factors(np.asarray(theta, float))
    cov = [L @ L.T for L in factors]
    return loglik(bundle, beta, cov, sigma_e=sigma_e, options=options)


def loglik_gradient(bundle: DesignBundle, beta: np.ndarray, theta: np.ndarray,
                    sigma_e: float | None = None) -> dict:
    """Gradient of the marginal log-likelihood at (beta, theta, sigma_e).

    Returns {"beta": ..., "theta": ..., "log_sigma_e": ...} with the last
    entry None for the Bernoulli family. Dense implementation intended for
    small validation instances.
    """
    beta = np.asarray(beta, dtype=float)
    theta = np.asarray(theta, dtype=float)
    struct = ThetaStructure(bundle.blocks)
    if bundle.spec.family is Family.BERNOULLI_LOGIT:
        return _bernoulli_gradient(bundle, beta, theta, struct)
    if sigma_e is None or sigma_e <= 0:
        raise ValueError("Gaussian gradient needs sigma_e > 0")
    return _gaussian_gradient(bundle, beta, theta, float(sigma_e), struct)


def _theta_derivative_mats(struct, theta):
    per_block = _dfactors(struct, theta)
    mats = []
    for b_idx, derivs in enumerate(per_block):
        for D in derivs:
            mats.append(_expand_block(struct, b_idx, D))
    return mats


def _gaussian_gradient(bundle, beta, theta, sigma_e, struct):
    X = bundle.X
    Z = bundle.Z.toarray()
    y = bundle.y
    n = bundle.n
    s2 = sigma_e ** 2
    Lam = struct.lambda_matrix(theta).toarray()
    V = s2 * np.eye(n) + Z @ (Lam @ Lam.T) @ Z.T
    Vinv = np.linalg.inv(V)
    r = y - X @ beta
    Vr = Vinv @ r

    g_beta = X.T @ Vr

    w = Z.T @ Vr                      # q
    T = Z.T @ Vinv @ Z                # q x q
    g_theta = np.zeros(struct.n_params)
    for k_idx, dLam in enumerate(_theta_derivative_mats(struct, theta)):
        dG = dLam @ Lam.T + Lam @ dLam.T
        g_theta[k_idx] = 0.5 * (w @ dG @ w - float(np.sum(dG * T)))

    g_log_sigma = s2 * (float(Vr @ Vr) - float(np.trace(Vinv)))
    return {"beta": g_beta, "theta": g_theta, "log_sigma_e": g_log_sigma}


def _bernoulli_gradient(bundle, beta, theta, struct):
    X = bundle.X
    Z = bundle.Z.toarray()
    y = bundle.y
    n, q = bundle.n, bundle.q
    Lam = struct.lambda_matrix(theta).toarray()
    ZL = Z @ Lam
    offset = X @ beta
    res = _pirls(np.zeros((n, 0)), y, bundle.Z @ struct.lambda_matrix(theta),
                 offset, None, None, 1e-12, 200)
    u = res.u
    eta = res.eta
    mu = expit(eta)
    g_res = y - mu
    W = mu * (1.0 - mu)

    H = ZL.T @ (ZL * W[:, None]) + np.eye(q)
    Hinv = np.linalg.inv(H)
    # c_i = [ZL Hinv ZL']_ii and s_i = c_i * dW/deta
    C = ZL @ Hinv
    c = np.einsum("ij,ij->i", C, ZL)
    s = c * W * (1.0 - 2.0 * mu)

    ZLs = ZL.T @ s
    g_beta = X.T @ g_res - 0.5 * X.T @ s \
        + 0.5 * X.T @ (W * (ZL @ (Hinv @ ZLs)))

    P = Hinv @ (ZL.T @ (Z * W[:, None]))      # q x q vs Z columns
    g_theta = np.zeros(struct.n_params)
    for k_idx, dLam in enumerate(_theta_derivative_mats(struct, theta)):
        v = Z @ (dLam @ u)                     # d(eta)/d(theta_k) at fixed u
        dZL = Z @ dLam
        direct = float(g_res @ v) - 0.5 * float(s @ v)
        trace = -float(np.sum(P * dLam.T))     # -tr(Hinv ZL' W Z dLam)
        du = Hinv @ (dZL.T @ g_res - ZL.T @ (W * v))
        envelope = -0.5 * float(ZLs @ du)
        g_theta[k_idx] = direct + trace + envelope
    return {"beta": g_beta, "theta": g_theta, "log_sigma_e": None}
