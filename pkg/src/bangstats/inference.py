"""Wald inference, odds ratios, and the parametric bootstrap.

Everything here consumes a FittedModel. The bootstrap simulates new
random effects and responses from the fitted parameters, refits, and
evaluates a user statistic, so it is appropriate for BLUP-derived
quantities where resampling rows would break the grouping structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace as dc_replace

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .glmm.design import DesignBundle
from .glmm.fit import Family, FitOptions, FittedModel, fit

__all__ = [
    "FamilyError", "BootstrapError", "WaldInterval", "OddsRatio",
    "LinearCombo", "PlayerOddsRatio", "BootstrapResult", "wald_interval",
    "odds_ratio", "linear_combo", "player_odds_ratios",
    "parametric_bootstrap", "bootstrap_distributions_export",
]


class FamilyError(TypeError):
    pass


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class WaldInterval:
    term: str
    estimate: float
    se: float
    lower: float
    upper: float
    level: float


@dataclass(frozen=True)
class OddsRatio:
    term: str
    estimate: float
    lower: float
    upper: float
    level: float


@dataclass(frozen=True)
class LinearCombo:
    estimate: float
    se: float
    lower: float
    upper: float
    level: float


@dataclass(frozen=True)
class PlayerOddsRatio:
    player_id: int
    player_name: str
    blup: float
    odds_ratio: float


def _z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))


def wald_interval(model: FittedModel, term: str,
                  level: float = 0.95) -> WaldInterval:
    """estimate ± z·SE for one fixed-effect term."""
    i = model.term_index(term)
    est, se = float(model.beta[i]), float(model.se_beta[i])
    half = _z(level) * se
    return WaldInterval(term=term, estimate=est, se=se,
                        lower=est - half, upper=est + half, level=level)


def odds_ratio(model: FittedModel, term: str,
               level: float = 0.95) -> OddsRatio:
    """Exponentiated coefficient with exponentiated Wald endpoints."""
    if model.family is not Family.BERNOULLI_LOGIT:
        raise FamilyError(
            f"odds ratios need a logit model, got family {model.family.value}")
    w = wald_interval(model, term, level)
    return OddsRatio(term=term, estimate=float(np.exp(w.estimate)),
                     lower=float(np.exp(w.lower)),
                     upper=float(np.exp(w.upper)), level=level)


def linear_combo(model: FittedModel, weights,
                 level: float = 0.95) -> LinearCombo:
    """w'beta with SE from the coefficient covariance.

    `weights` is either a mapping from term label to weight (unnamed terms
    get weight 0) or a full length-p vector.
    """
    p = model.beta.size
    if isinstance(weights, dict):
        w = np.zeros(p)
        for term, val in weights.items():
            w[model.term_index(term)] = float(val)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (p,):
            raise ValueError(
                f"weight vector has length {w.size}, model has {p} terms")
    est = float(w @ model.beta)
    se = float(np.sqrt(w @ model.vcov_beta @ w))
    half = _z(level) * se
    return LinearCombo(estimate=est, se=se, lower=est - half,
                       upper=est + half, level=level)


def player_odds_ratios(model: FittedModel, term: str,
                       group: str = "batter") -> list[PlayerOddsRatio]:
    """exp(fixed effect + per-player BLUP) for a random slope, sorted
    descending by odds ratio."""
    if model.family is not Family.BERNOULLI_LOGIT:
        raise FamilyError(
            f"odds ratios need a logit model, got family {model.family.value}")
    fixed = float(model.beta[model.term_index(term)])
    block = None
    for blk in model.bundle.blocks:
        if blk.group == group and term in blk.effect_labels:
            block = blk
            break
    if block is None:
        raise ValueError(
            f"model has no random {term!r} slope grouped by {group!r}")
    effects = model.ranef(group)
    names = dict(zip(block.levels, block.level_names))
    out = [
        PlayerOddsRatio(player_id=lvl, player_name=names[lvl],
                        blup=effs[term],
                        odds_ratio=float(np.exp(fixed + effs[term])))
        for lvl, effs in effects.items()
    ]
    out.sort(key=lambda r: (-r.odds_ratio, r.player_id))
    return out


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate values for one statistic plus its percentile interval.

    `replicates` always has length B; entries for non-converged replicates
    are NaN, so failures + usable values = B. Interval endpoints are order
    statistics of the usable values.
    """
    name: str
    replicates: np.ndarray
    lower: float
    upper: float
    level: float
    B: int
    seed: int
    failures: int

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    @property
    def usable(self) -> np.ndarray:
        return self.replicates[~np.isnan(self.replicates)]

    def to_json(self, include_replicates: bool = False) -> str:
        doc = {
            "name": self.name,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "B": self.B,
            "seed": self.seed,
            "failures": self.failures,
        }
        if include_replicates:
            doc["replicates"] = [None if np.isnan(v) else float(v)
                                 for v in self.replicates]
        return json.dumps(doc, indent=2)

    def summary_row(self) -> dict:
        return {
            "name": self.name,
            "lower": self.lower,
            "upper": self.upper,
            "level": self.level,
            "B": self.B,
            "seed": self.seed,
            "failures": self.failures,
        }


def _percentile_interval(values: np.ndarray, level: float):
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [alpha, 1.0 - alpha], method="inverted_cdf")
    return float(lo), float(hi)


def _simulate_response(model: FittedModel, bundle: DesignBundle,
                       rng: np.random.Generator) -> np.ndarray:
    """New random effects from the estimated components, then new responses."""
    Lam = model.theta_structure().lambda_matrix(model.theta)
    u_new = rng.standard_normal(bundle.q)
    if model.family is Family.GAUSSIAN_IDENTITY:
        u_new = u_new * model.sigma_e  # Lambda is relative to sigma_e
    eta = bundle.X @ model.beta
    if bundle.q:
        eta = eta + bundle.Z @ (Lam @ u_new)
    if model.family is Family.BERNOULLI_LOGIT:
        return (rng.random(bundle.n) < expit(eta)).astype(float)
    eps = rng.standard_normal(bundle.n) * model.sigma_e
    return eta + eps


def parametric_bootstrap(model: FittedModel, bundle: DesignBundle,
                         statistic, B: int, seed: int,
                         level: float = 0.95, name: str | None = None,
                         refit_options: FitOptions | None = None):
    """Simulate from the fitted model, refit, evaluate `statistic`.

    `statistic` maps a refitted model to a float or to a dict of floats;
    a dict yields one BootstrapResult per key from a single simulation
    pass. Replicate r uses an RNG stream seeded with seed XOR r, so the
    set of replicates is fully determined by (model, bundle, B, seed)
    and independent of evaluation order.
    """
    if not model.converged:
        raise BootstrapError("refusing to bootstrap a non-converged model")
    if B < 2:
        raise ValueError(f"B must be at least 2, got {B}")
    if refit_options is None:
        # warm start at the fitted theta; replicates skip the Newton polish
        refit_options = FitOptions(theta0=model.theta, polish=False,
                                   reml=model.reml)

    values: dict[str, np.ndarray] = {}
    failures = 0
    for r in range(B):
        rng = np.random.default_rng(seed ^ r)
        y_new = _simulate_response(model, bundle, rng)
        try:
            refit = fit(dc_replace(bundle, y=y_new), options=refit_options)
            ok = refit.converged
        except (ValueError, np.linalg.LinAlgError):
            ok = False
        if not ok:
            failures += 1
            for vec in values.values():
                vec[r] = np.nan
            continue
        stat = statistic(refit)
        items = stat.items() if isinstance(stat, dict) else [(None, stat)]
        for key, val in items:
            k = "stat" if key is None else key
            if k not in values:
                values[k] = np.full(B, np.nan)
            values[k][r] = float(val)

    if failures > 0.2 * B:
        raise BootstrapError(
            f"{failures} of {B} bootstrap replicates failed to converge; "
            "inspect the model before trusting resampled intervals")

    def build(key: str, vec: np.ndarray) -> BootstrapResult:
        lo, hi = _percentile_interval(vec[~np.isnan(vec)], level)
        label = key if key != "stat" else (
            name or getattr(statistic, "__name__", "statistic"))
        return BootstrapResult(name=label, replicates=vec, lower=lo,
                               upper=hi, level=level, B=B, seed=seed,
                               failures=failures)

    if set(values) == {"stat"}:
        return build("stat", values["stat"])
    return {k: build(k, v) for k, v in sorted(values.items())}


def bootstrap_distributions_export(results: dict) -> list[dict]:
    """Long-format table for plotting bootstrap sampling distributions.

    `results` maps player name to {"intercept": BootstrapResult,
    "slope": BootstrapResult}. One row per player per usable replicate:
    (player, replicate, intercept, slope).
    """
    rows = []
    for player, pair in results.items():
        ri = pair["intercept"].replicates
        rs = pair["slope"].replicates
        if ri.size != rs.size:
            raise ValueError(
                f"intercept and slope replicate counts differ for {player}")
        for idx in range(ri.size):
            if np.isnan(ri[idx]) or np.isnan(rs[idx]):
                continue
            rows.append({"player": player, "replicate": idx,
                         "intercept": float(ri[idx]),
                         "slope": float(rs[idx])})
    return rows
