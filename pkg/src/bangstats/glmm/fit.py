"""Mixed-model estimation: Laplace-approximated logistic GLMM and Gaussian REML.

Both families share one structure. Random effects are spherical, b = Λ(θ)u
with u ~ N(0, I) (times σ² for the Gaussian family), where Λ is block
diagonal from per-term log-Cholesky factors. For the Bernoulli-logit family
the inner problem solves penalized IRLS jointly for (β, u) at fixed θ and the
outer problem minimizes the Laplace deviance

    pdev*(θ) + log det(Λ'Z'WZΛ + I)

over θ by quasi-Newton with numerical gradients. For the Gaussian family β,
u, and the residual variance all profile out in closed form, leaving the
standard profiled (RE)ML criterion over θ alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.special import expit

from .design import DesignBundle, RandomBlockInfo, rebuild_x, rebuild_z
from .modelspec import Family, ModelSpec

log = logging.getLogger(__name__)

BOUNDARY_LOG_SD = np.log(1e-6)   # optimizer-scale threshold for a zero variance


class FitError(ValueError):
    pass


class PredictScale(Enum):
    LINEAR = "linear"
    RESPONSE = "response"


@dataclass(frozen=True)
class FitOptions:
    max_outer: int = 500
    outer_tol_obj: float = 1e-8
    outer_tol_param: float = 1e-6
    max_pirls: int = 100
    pirls_tol: float = 1e-10
    theta0: np.ndarray | None = None
    fix_theta: np.ndarray | None = None   # skip the outer optimization entirely
    reml: bool = True                     # Gaussian family only
    polish: bool = True                   # Newton cleanup after quasi-Newton
    grad_tol: float = 2e-3                # |grad|_inf acceptance when not polishing


@dataclass(frozen=True)
class ConvergenceRecord:
    converged: bool
    n_outer: int
    n_evals: int
    final_objective: float
    grad_norm: float
    message: str


@dataclass(frozen=True)
class VarianceComponent:
    group: str
    effect_labels: tuple[str, ...]
    sd: tuple[float, ...]
    corr: tuple[tuple[float, ...], ...]
    cov: tuple[tuple[float, ...], ...]
    boundary: tuple[bool, ...]


class ThetaStructure:
    """Flat optimizer vector <-> per-block lower-triangular Cholesky factors.

    Per correlated block of size k the vector stores the lower triangle
    row-major with diagonal entries on the log scale; uncorrelated blocks
    store only the k log-diagonal entries.
    """

    def __init__(self, blocks: Sequence[RandomBlockInfo]):
        self.blocks = tuple(blocks)
        self.slices: list[slice] = []
        self._diag_idx: list[int] = []
        n = 0
        for blk in self.blocks:
            k = blk.k
            count = k * (k + 1) // 2 if blk.correlated else k
            self.slices.append(slice(n, n + count))
            if blk.correlated:
                pos = n
                for i in range(k):
                    for j in range(i + 1):
                        if i == j:
                            self._diag_idx.append(pos)
                        pos += 1
            else:
                self._diag_idx.extend(range(n, n + k))
            n += count
        self.n_params = n

    def start(self) -> np.ndarray:
        return np.zeros(self.n_params)

    def factors(self, theta: np.ndarray) -> list[np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise FitError(f"theta has length {theta.size}, expected {self.n_params}")
        out = []
        for blk, sl in zip(self.blocks, self.slices):
            k = blk.k
            vals = theta[sl]
            L = np.zeros((k, k))
            if blk.correlated:
                pos = 0
                for i in range(k):
                    for j in range(i + 1):
                        L[i, j] = np.exp(vals[pos]) if i == j else vals[pos]
                        pos += 1
            else:
                L[np.diag_indices(k)] = np.exp(vals)
            out.append(L)
        return out

    def from_factors(self, factors: Sequence[np.ndarray]) -> np.ndarray:
        theta = np.zeros(self.n_params)
        for blk, sl, L in zip(self.blocks, self.slices, factors):
            k = blk.k
            vals = []
            if blk.correlated:
                for i in range(k):
                    for j in range(i + 1):
                        vals.append(np.log(L[i, i]) if i == j else L[i, j])
            else:
                vals = list(np.log(np.diag(L)))
            theta[sl] = vals
        return theta

    def lambda_matrix(self, theta: np.ndarray) -> sparse.csc_matrix:
        mats = []
        for blk, L in zip(self.blocks, self.factors(theta)):
            eye = sparse.identity(blk.n_levels, format="csc")
            if blk.k == 1:
                mats.append(eye * float(L[0, 0]))
            else:
                mats.append(sparse.kron(eye, sparse.csc_matrix(L), format="csc"))
        if not mats:
            return sparse.csc_matrix((0, 0))
        return sparse.block_diag(mats, format="csc")

    def at_boundary(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray([theta[i] <= BOUNDARY_LOG_SD for i in self._diag_idx])


@dataclass
class PirlsResult:
    beta: np.ndarray
    u: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    W: np.ndarray
    pdev: float
    converged: bool
    n_iter: int


def _pdev_bernoulli(y, eta, u):
    # -2 * conditional loglik + penalty, stable for large |eta|
    return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - y * eta)) + float(u @ u)


def _solve_spd(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve with an escalating jitter retry.

    Extreme theta probes during line searches mix weight scales badly
    enough that rounding can push M off positive definite; a relative
    ridge keeps those probe evaluations finite instead of crashing.
    """
    try:
        return cho_solve(cho_factor(M, lower=True), rhs)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.max(np.abs(np.diag(M)))) + 1.0
    eps = 1e-12
    for _ in range(4):
        try:
            return cho_solve(cho_factor(
                M + eps * scale * np.eye(M.shape[0]), lower=True), rhs)
        except np.linalg.LinAlgError:
            eps *= 1e3
    raise np.linalg.LinAlgError("normal equations not positive definite")


def _pirls(X, y, ZL, offset, beta0, u0, tol, max_iter):
    """Joint penalized IRLS for (beta, u) at fixed theta.

    X may have zero columns (fixed beta via the offset). Step-halving keeps
    the penalized deviance monotone; convergence is a relative change of
    `tol` in the penalized deviance.
    """
    n, p = X.shape
    q = ZL.shape[1]
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, float).copy()
    u = np.zeros(q) if u0 is None else np.asarray(u0, float).copy()
    eta = offset + X @ beta + ZL @ u
    pdev = _pdev_bernoulli(y, eta, u)
    if p + q == 0:
        mu = expit(eta)
        return PirlsResult(beta=beta, u=u, eta=eta, mu=mu,
                           W=np.maximum(mu * (1 - mu), 1e-10), pdev=pdev,
                           converged=True, n_iter=0)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        W = np.maximum(mu * (1.0 - mu), 1e-10)
        z = (eta - offset) + (y - mu) / W
        Wz = W * z
        ZLw = ZL.multiply(W[:, None]).tocsc()
        A = (ZL.T @ ZLw).toarray()
        A[np.diag_indices(q)] += 1.0
        if p:
            XtWX = X.T @ (X * W[:, None])
            XtWZL = (ZLw.T @ X).T
            M = np.block([[XtWX, XtWZL], [XtWZL.T, A]])
            rhs = np.concatenate([X.T @ Wz, ZL.T @ Wz])
        else:
            M = A
            rhs = ZL.T @ Wz
        sol = _solve_spd(M, rhs)
        step_b = sol[:p] - beta
        step_u = sol[p:] - u
        lam = 1.0
        while True:
            beta_try = beta + lam * step_b
            u_try = u + lam * step_u
            eta_try = offset + X @ beta_try + ZL @ u_try
            pdev_try = _pdev_bernoulli(y, eta_try, u_try)
            if pdev_try <= pdev + 1e-12 * (abs(pdev) + 1.0) or lam <= 1e-9:
                break
            lam *= 0.5
        if pdev_try > pdev + 1e-12 * (abs(pdev) + 1.0):
            break  # stalled even at the smallest step; keep previous point
        delta = pdev - pdev_try
        beta, u, eta, pdev = beta_try, u_try, eta_try, pdev_try
        if delta < tol * (abs(pdev) + 1.0):
            converged = True
            break
    mu = expit(eta)
    W = np.maximum(mu * (1.0 - mu), 1e-10)
    return PirlsResult(beta=beta, u=u, eta=eta, mu=mu, W=W, pdev=pdev,
                       converged=converged, n_iter=it)


def _logdet_chol(M: np.ndarray) -> tuple[float, tuple]:
    cf = cho_factor(M, lower=True)
    return 2.0 * float(np.sum(np.log(np.diag(cf[0])))), cf


def _logdet_chol_safe(M: np.ndarray) -> tuple[float, tuple]:
    """_logdet_chol with the same jitter ladder as _solve_spd."""
    try:
        return _logdet_chol(M)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.max(np.abs(np.diag(M)))) + 1.0
    eps = 1e-12
    for _ in range(4):
        try:
            return _logdet_chol(M + eps * scale * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            eps *= 1e3
    raise np.linalg.LinAlgError("profiled system not positive definite")


def _theta_wall(struct: "ThetaStructure", theta: np.ndarray) -> float | None:
    """Monotone penalty for absurd theta probes (log-sd or factor > e^12).

    Line searches occasionally test points far past anything data-driven;
    evaluating the objective there mixes weight scales badly enough to
    break the Cholesky factorizations, so turn back early instead.
    """
    diag = set(struct._diag_idx)
    worst = -np.inf
    for i, v in enumerate(np.asarray(theta, float)):
        if np.isfinite(v):
            worst = max(worst, v if i in diag else abs(v))
    if worst > 12.0:
        return 1e10 * (1.0 + worst - 12.0)
    return None


class _BernoulliObjective:
    """Laplace -2 log-likelihood profiled over (beta, u) via PIRLS."""

    def __init__(self, bundle: DesignBundle, struct: ThetaStructure,
                 opts: FitOptions, offset: np.ndarray | None = None,
                 fixed_beta: np.ndarray | None = None):
        self.bundle = bundle
        self.struct = struct
        self.opts = opts
        self.offset = np.zeros(bundle.n) if offset is None else offset
        self.fixed_beta = fixed_beta
        if fixed_beta is not None:
            self.offset = self.offset + bundle.X @ fixed_beta
        self._X = (bundle.X if fixed_beta is None
                   else np.zeros((bundle.n, 0)))
        self.warm_beta = None
        self.warm_u = None
        self.last: dict = {}
        self.n_evals = 0

    def __call__(self, theta: np.ndarray) -> float:
        self.n_evals += 1
        wall = _theta_wall(self.struct, theta)
        if wall is not None:
            return wall
        Lam = self.struct.lambda_matrix(theta)
        ZL = (self.bundle.Z @ Lam).tocsc()
        res = _pirls(self._X, self.bundle.y, ZL, self.offset,
                     self.warm_beta, self.warm_u,
                     self.opts.pirls_tol, self.opts.max_pirls)
        q = ZL.shape[1]
        H = (ZL.T @ ZL.multiply(res.W[:, None])).toarray()
        H[np.diag_indices(q)] += 1.0
        logdet, _ = _logdet_chol_safe(H)
        self.warm_beta, self.warm_u = res.beta, res.u
        self.last = {"theta": np.array(theta), "pirls": res, "ZL": ZL,
                     "logdet": logdet}
        return res.pdev + logdet


class _GaussianObjective:
    """Profiled (RE)ML deviance for the Gaussian family.

    Cross-products with Z and X are computed once; each theta evaluation is
    O(q^3) dense work on the q x q system.
    """

    def __init__(self, bundle: DesignBundle, struct: ThetaStructure,
                 reml: bool):
        X, y, Z = bundle.X, bundle.y, bundle.Z
        self.struct = struct
        self.reml = reml
        self.n, self.p = X.shape
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        self.ZtX = np.asarray(Z.T @ X)
        self.Zty = np.asarray(Z.T @ y).ravel()
        self.ZtZ = (Z.T @ Z).tocsc()
        self.last: dict = {}
        self.n_evals = 0

    def __call__(self, theta: np.ndarray) -> float:
        self.n_evals += 1
        wall = _theta_wall(self.struct, theta)
        if wall is not None:
            return wall
        n, p = self.n, self.p
        Lam = self.struct.lambda_matrix(theta)
        q = Lam.shape[0]
        A = (Lam.T @ self.ZtZ @ Lam).toarray()
        A[np.diag_indices(q)] += 1.0
        B = np.asarray(Lam.T @ self.ZtX).reshape(q, p)
        by = np.asarray(Lam.T @ self.Zty).ravel()
        logdet1, cfH = _logdet_chol_safe(A) if q else (0.0, None)
        if q:
            HinvB = cho_solve(cfH, B)
            Hinv_by = cho_solve(cfH, by)
        else:
            HinvB = np.zeros((0, p))
            Hinv_by = np.zeros(0)
        Sb = self.XtX - B.T @ HinvB
        logdet2, cfS = _logdet_chol_safe(Sb)
        beta = cho_solve(cfS, self.Xty - B.T @ Hinv_by)
        u = cho_solve(cfH, by - B @ beta) if q else np.zeros(0)
        r2 = self.yty - (self.Xty @ beta + by @ u)
        r2 = max(float(r2), np.finfo(float).tiny)
        if self.reml:
            dof = n - p
            crit = logdet1 + logdet2 + dof * (1.0 + np.log(2.0 * np.pi * r2 / dof))
        else:
            crit = logdet1 + n * (1.0 + np.log(2.0 * np.pi * r2 / n))
        self.last = {"theta": np.array(theta), "beta": beta, "u": u, "r2": r2,
                     "Sb": Sb, "cfS": cfS, "logdet1": logdet1,
                     "logdet2": logdet2}
        return float(crit)


def _fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = hi
        g[i] = (f(x + e) - f(x - e)) / (2.0 * hi)
    return g


def _fd_hessian(f, x, f0, h=5e-4):
    d = x.size
    H = np.zeros((d, d))
    steps = [h * max(1.0, abs(x[i])) for i in range(d)]
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = steps[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return H


def _minimize_outer(objective, x0, opts: FitOptions) -> tuple[np.ndarray, ConvergenceRecord]:
    """Quasi-Newton over theta, with an optional Newton polish.

    Convergence is declared on the spec rule: relative objective change
    below outer_tol_obj and parameter change below outer_tol_param between
    successive accepted iterates.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.size == 0:
        f0 = objective(x0)
        return x0, ConvergenceRecord(True, 0, 1, f0, 0.0, "no variance parameters")

    f0 = objective(x0)
    # central differences keep the numerical gradient noise well below gtol
    gtol = max(1e-6, 3e-8 * (1.0 + abs(f0)))
    res = minimize(objective, x0, method="BFGS", jac="3-point",
                   options={"maxiter": opts.max_outer, "gtol": gtol})
    x, fval = np.asarray(res.x, float), float(res.fun)
    n_outer = int(res.nit)
    grad_norm = float(np.max(np.abs(res.jac))) if res.jac is not None else np.inf
    converged = bool(res.success)
    message = str(res.message)

    if opts.polish:
        for it in range(12):
            g = _fd_gradient(objective, x)
            f_here = objective(x)
            Hm = _fd_hessian(objective, x, f_here)
            # regularize: the profiled surface can be flat near a boundary
            w, V = np.linalg.eigh(Hm)
            w = np.maximum(np.abs(w), 1e-4)
            step = -V @ ((V.T @ g) / w)
            norm = np.max(np.abs(step))
            if norm > 1.0:
                step *= 1.0 / norm
            lam, f_new, x_new = 1.0, f_here, x
            for _ in range(20):
                cand = x + lam * step
                f_cand = objective(cand)
                if f_cand < f_here:
                    f_new, x_new = f_cand, cand
                    break
                lam *= 0.5
            dx = np.max(np.abs(x_new - x)) if x_new is not x else 0.0
            df = abs(f_here - f_new)
            x, fval = x_new, min(f_new, f_here)
            n_outer += 1
            grad_norm = float(np.max(np.abs(g)))
            # a collapsed variance component leaves the profiled surface
            # flat, so the iterate can drift along the plateau forever;
            # a stationary objective with a tiny gradient is converged
            if df < opts.outer_tol_obj * (abs(fval) + 1.0) and (
                    dx < opts.outer_tol_param or grad_norm <= opts.grad_tol):
                converged = True
                message = "converged (objective and parameter tolerances met)"
                break
        else:
            converged = False
            message = "polish iterations exhausted before tolerances met"
    else:
        # no polish: trust the quasi-Newton result if its gradient is small
        if not converged and grad_norm <= opts.grad_tol:
            converged = True
            message = f"{message} (gradient {grad_norm:.2e} within tolerance)"

    if n_outer >= opts.max_outer:
        converged = False
        message = "maximum outer iterations reached"
    return x, ConvergenceRecord(converged=converged, n_outer=n_outer,
                                n_evals=getattr(objective, "n_evals", -1),
                                final_objective=float(fval),
                                grad_norm=grad_norm, message=message)


_SNAP_LOG_SD = np.log(1e-3)


def _snap_boundary(objective, struct: ThetaStructure, theta: np.ndarray,
                   opts: FitOptions) -> np.ndarray:
    """Pin collapsed standard deviations to the boundary threshold.

    On the log scale the profiled objective flattens exponentially as a
    standard deviation heads toward zero, so the outer optimizer stalls on
    the plateau well short of it. Any log-diagonal that fell below log(1e-3)
    is probed at the boundary value; the probe is kept only when it costs
    nothing beyond the convergence tolerance.
    """
    collapsed = [i for i in struct._diag_idx if theta[i] < _SNAP_LOG_SD]
    if not collapsed:
        return theta
    cand = theta.copy()
    cand[collapsed] = BOUNDARY_LOG_SD
    f_old = float(objective(theta))
    f_new = float(objective(cand))
    if f_new <= f_old + opts.outer_tol_obj * (abs(f_old) + 1.0):
        return cand
    return theta


@dataclass
class FittedModel:
    spec: ModelSpec
    bundle: DesignBundle
    x_labels: tuple[str, ...]
    beta: np.ndarray
    se_beta: np.ndarray
    vcov_beta: np.ndarray
    theta: np.ndarray
    variance_components: tuple[VarianceComponent, ...]
    sigma_e: float | None
    u: np.ndarray
    eta: np.ndarray
    fitted: np.ndarray
    log_likelihood: float
    reml: bool
    convergence: ConvergenceRecord
    boundary: bool

    @property
    def family(self) -> Family:
        return self.spec.family

    @property
    def converged(self) -> bool:
        return self.convergence.converged

    def theta_structure(self) -> ThetaStructure:
        return ThetaStructure(self.bundle.blocks)

    def lambda_factors(self) -> list[np.ndarray]:
        return self.theta_structure().factors(self.theta)

    def term_index(self, term: str) -> int:
        try:
            return self.x_labels.index(term)
        except ValueError:
            raise KeyError(
                f"unknown term {term!r}; model terms: {list(self.x_labels)}"
            ) from None

    def coefficient_table(self) -> list[dict]:
        from scipy.stats import norm
        rows = []
        for i, lab in enumerate(self.x_labels):
            z = self.beta[i] / self.se_beta[i] if self.se_beta[i] > 0 else np.inf
            rows.append({
                "term": lab,
                "estimate": float(self.beta[i]),
                "se": float(self.se_beta[i]),
                "z": float(z),
                "p": float(2.0 * norm.sf(abs(z))),
            })
        return rows

    def ranef(self, group: str) -> dict:
        """Conditional modes b = Λu keyed by grouping level."""
        struct = self.theta_structure()
        factors = struct.factors(self.theta)
        scale = 1.0  # BLUPs of b need no sigma factor in either family
        for blk, L in zip(self.bundle.blocks, factors):
            if blk.group != group:
                continue
            U = self.u[blk.col_offset:blk.col_offset + blk.n_cols]
            B = U.reshape(blk.n_levels, blk.k) @ (scale * L).T
            return {
                lvl: {eff: float(B[i, j])
                      for j, eff in enumerate(blk.effect_labels)}
                for i, lvl in enumerate(blk.levels)
            }
        raise KeyError(f"model has no random term for group {group!r}")


def _variance_components(blocks, factors, scale2: float, theta, struct,
                         ) -> tuple[VarianceComponent, ...]:
    out = []
    bnd = struct.at_boundary(theta)
    pos = 0
    for blk, L in zip(blocks, factors):
        cov = scale2 * (L @ L.T)
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        denom = np.outer(sd, sd)
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0),
                            0.0)
        np.fill_diagonal(corr, 1.0)
        k = blk.k
        out.append(VarianceComponent(
            group=blk.group, effect_labels=blk.effect_labels,
            sd=tuple(float(s) for s in sd),
            corr=tuple(tuple(float(c) for c in row) for row in corr),
            cov=tuple(tuple(float(c) for c in row) for row in cov),
            boundary=tuple(bool(b) for b in bnd[pos:pos + k]),
        ))
        pos += k
    return tuple(out)


def fit(bundle: DesignBundle, spec: ModelSpec | None = None,
        options: FitOptions | None = None) -> FittedModel:
    """Fit the mixed model described by the bundle's spec.

    The spec argument, when given, must be the very spec the bundle was
    built from; it exists so call sites can be explicit. Non-convergence is
    reported through the convergence record, never by silently returning a
    polished-looking result.
    """
    if spec is not None and spec != bundle.spec:
        raise FitError("spec does not match the one the bundle was built from")
    spec = bundle.spec
    opts = options or FitOptions()
    struct = ThetaStructure(bundle.blocks)

    theta0 = struct.start() if opts.theta0 is None else np.asarray(opts.theta0, float)
    if theta0.shape != (struct.n_params,):
        raise FitError(f"theta0 has length {theta0.size}, expected {struct.n_params}")

    if spec.family is Family.BERNOULLI_LOGIT:
        objective = _BernoulliObjective(bundle, struct, opts)
    elif spec.family is Family.GAUSSIAN_IDENTITY:
        objective = _GaussianObjective(bundle, struct, reml=opts.reml)
    else:
        raise FitError(f"unsupported family {spec.family}")

    if opts.fix_theta is not None:
        theta = np.asarray(opts.fix_theta, dtype=float)
        fval = objective(theta)
        record = ConvergenceRecord(True, 0, 1, fval, 0.0, "theta held fixed")
    else:
        theta, record = _minimize_outer(objective, theta0, opts)
        theta = _snap_boundary(objective, struct, theta, opts)
        fval = objective(theta)  # leave `last` caches at the optimum
        if fval != record.final_objective:
            record = replace(record, final_objective=float(fval))

    factors = struct.factors(theta)
    boundary_flags = struct.at_boundary(theta)

    if spec.family is Family.BERNOULLI_LOGIT:
        return _assemble_bernoulli(bundle, spec, opts, struct, theta, factors,
                                   boundary_flags, objective, record, fval)
    return _assemble_gaussian(bundle, spec, opts, struct, theta, factors,
                              boundary_flags, objective, record, fval)


def _assemble_bernoulli(bundle, spec, opts, struct, theta, factors,
                        boundary_flags, objective, record, fval):
    res: PirlsResult = objective.last["pirls"]
    ZL = objective.last["ZL"]
    X, q = bundle.X, bundle.q
    W = res.W
    ZLw = ZL.multiply(W[:, None]).tocsc()
    H = (ZL.T @ ZLw).toarray()
    H[np.diag_indices(q)] += 1.0
    XtWX = X.T @ (X * W[:, None])
    if q:
        XtWZL = (ZLw.T @ X).T
        cfH = cho_factor(H, lower=True)
        Sb = XtWX - XtWZL @ cho_solve(cfH, XtWZL.T)
    else:
        Sb = XtWX
    vcov = np.linalg.inv(Sb)
    vcov = 0.5 * (vcov + vcov.T)
    se = np.sqrt(np.diag(vcov))
    loglik = -0.5 * fval
    if not res.converged:
        record = replace(record, converged=False,
                         message=record.message + "; inner PIRLS not converged")
    return FittedModel(
        spec=spec, bundle=bundle, x_labels=bundle.x_labels,
        beta=res.beta, se_beta=se, vcov_beta=vcov, theta=theta,
        variance_components=_variance_components(
            bundle.blocks, factors, 1.0, theta, struct),
        sigma_e=None, u=res.u, eta=res.eta, fitted=res.mu,
        log_likelihood=float(loglik), reml=False, convergence=record,
        boundary=bool(boundary_flags.any()),
    )


def _assemble_gaussian(bundle, spec, opts, struct, theta, factors,
                       boundary_flags, objective, record, fval):
    last = objective.last
    beta, u, r2 = last["beta"], last["u"], last["r2"]
    n, p = bundle.n, bundle.p
    dof = (n - p) if opts.reml else n
    sigma2 = r2 / dof
    vcov = sigma2 * cho_solve(last["cfS"], np.eye(p))
    vcov = 0.5 * (vcov + vcov.T)
    se = np.sqrt(np.diag(vcov))
    Lam = struct.lambda_matrix(theta)
    eta = bundle.X @ beta + (bundle.Z @ (Lam @ u) if bundle.q else 0.0)
    return FittedModel(
        spec=spec, bundle=bundle, x_labels=bundle.x_labels,
        beta=beta, se_beta=se, vcov_beta=vcov, theta=theta,
        variance_components=_variance_components(
            bundle.blocks, factors, float(sigma2), theta, struct),
        sigma_e=float(np.sqrt(sigma2)), u=u, eta=np.asarray(eta).ravel(),
        fitted=np.asarray(eta).ravel(),
        log_likelihood=-0.5 * float(fval), reml=opts.reml, convergence=record,
        boundary=bool(boundary_flags.any()),
    )


def loglik(bundle: DesignBundle, beta: np.ndarray,
           cov_blocks: Sequence[np.ndarray] | None = None,
           sigma_e: float | None = None,
           options: FitOptions | None = None) -> float:
    """Marginal log-likelihood at explicit parameter values.

    `cov_blocks` gives one covariance matrix per random term, on the
    response scale (so the Gaussian family's blocks are NOT relative to
    sigma_e). Bernoulli returns the Laplace approximation with u at its
    conditional mode; Gaussian is exact. Raises ValueError when a proposed
    covariance is not positive definite.
    """
    spec = bundle.spec
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (bundle.p,):
        raise FitError(f"beta has length {beta.size}, expected {bundle.p}")
    cov_blocks = list(cov_blocks or [])
    if len(cov_blocks) != len(bundle.blocks):
        raise FitError(f"expected {len(bundle.blocks)} covariance blocks, "
                       f"got {len(cov_blocks)}")
    chols = []
    for blk, C in zip(bundle.blocks, cov_blocks):
        C = np.asarray(C, dtype=float)
        if C.shape != (blk.k, blk.k):
            raise FitError(f"covariance block for {blk.group} has shape "
                           f"{C.shape}, expected {(blk.k, blk.k)}")
        try:
            chols.append(np.linalg.cholesky(C))
        except np.linalg.LinAlgError:
            raise ValueError(
                f"covariance block for {blk.group!r} is not positive definite"
            ) from None

    struct = ThetaStructure(bundle.blocks)
    n, q = bundle.n, bundle.q
    y, X, Z = bundle.y, bundle.X, bundle.Z

    if spec.family is Family.BERNOULLI_LOGIT:
        theta = struct.from_factors(chols)
        Lam = struct.lambda_matrix(theta)
        ZL = (Z @ Lam).tocsc()
        opts = options or FitOptions()
        offset = X @ beta
        res = _pirls(np.zeros((n, 0)), y, ZL, offset, None, None,
                     opts.pirls_tol, opts.max_pirls)
        H = (ZL.T @ ZL.multiply(res.W[:, None])).toarray()
        H[np.diag_indices(q)] += 1.0
        logdet, _ = _logdet_chol_safe(H) if q else (0.0, None)
        return -0.5 * (res.pdev + logdet)

    if sigma_e is None or sigma_e <= 0:
        raise ValueError("Gaussian loglik needs sigma_e > 0")
    s2 = float(sigma_e) ** 2
    r = y - X @ beta
    if q == 0:
        return float(-0.5 * (n * np.log(2 * np.pi * s2) + (r @ r) / s2))
    theta = struct.from_factors(chols)
    Lam = struct.lambda_matrix(theta)
    ZL = (Z @ Lam).tocsc()
    C_ = (ZL.T @ ZL).toarray()
    M = s2 * np.eye(q) + C_
    cf = cho_factor(M, lower=True)
    ZLr = ZL.T @ r
    quad = (r @ r - ZLr @ cho_solve(cf, ZLr)) / s2
    # det(s2*I_n + ZL ZL') = s2^(n-q) * det(s2*I_q + ZL'ZL)
    logdet = (n - q) * np.log(s2) + 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    return float(-0.5 * (n * np.log(2 * np.pi) + logdet + quad))


def blups(model: FittedModel, group: str) -> dict:
    """Conditional modes of the random effects for one grouping factor."""
    return model.ranef(group)


def predict(model: FittedModel, events, scale: PredictScale | str = PredictScale.LINEAR,
            ) -> np.ndarray:
    """Linear predictor (or response-scale prediction) for new events.

    Grouping levels never seen in training contribute 0, i.e. predictions
    for unknown players are population-level.
    """
    scale = PredictScale(scale) if not isinstance(scale, PredictScale) else scale
    X = rebuild_x(model.bundle.x_columns, events)
    eta = X @ model.beta
    if model.bundle.q:
        Z = rebuild_z(model.bundle.blocks, events, X, model.x_labels)
        Lam = model.theta_structure().lambda_matrix(model.theta)
        eta = eta + Z @ (Lam @ model.u)
    eta = np.asarray(eta).ravel()
    if scale is PredictScale.LINEAR or model.family is Family.GAUSSIAN_IDENTITY:
        return eta
    return expit(eta)
