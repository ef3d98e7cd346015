"""Synthetic event builders for exercising the mixed-model engine."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from bangstats.glmm import (Covariate, Factor, Family, Indicator, Intercept,
                            ModelSpec, RandomTerm)
from conftest import make_event


def _bern_event(g, y, x, bang=False):
    return make_event(
        batter_id=1000 + g, batter_name=f"B{g:03d}", csp=float(x),
        bang=bool(bang),
        swing=bool(y),
        contact=False if y else None,
        description="swinging_strike" if y else "ball",
    )


def bernoulli_intercept_data(seed, n_groups=20, per_group=50,
                             beta=(-1.0, 0.5), sigma=0.7):
    """Scalar random-intercept logistic data, one grouping factor."""
    rng = np.random.default_rng(seed)
    events = []
    for g in range(n_groups):
        b = sigma * rng.standard_normal()
        x = rng.uniform(0.0, 1.0, size=per_group)
        eta = beta[0] + beta[1] * x + b
        y = rng.random(per_group) < expit(eta)
        events.extend(_bern_event(g, y[i], x[i]) for i in range(per_group))
    spec = ModelSpec(
        name="toy-bern", response="swing", family=Family.BERNOULLI_LOGIT,
        fixed=(Intercept(), Covariate("csp")),
        random=(RandomTerm("batter", ("intercept",)),),
    )
    return events, spec


def bernoulli_slope_data(seed, n_groups=15, per_group=60,
                         beta=(-0.5, 0.8, -0.4), sigma=0.5):
    """Random bang-slope logistic data (the swing-model shape)."""
    rng = np.random.default_rng(seed)
    events = []
    for g in range(n_groups):
        b = sigma * rng.standard_normal()
        for _ in range(per_group):
            x = rng.uniform(0.0, 1.0)
            bang = rng.random() < 0.35
            eta = beta[0] + beta[1] * x + (beta[2] + b) * bang
            y = rng.random() < expit(eta)
            events.append(_bern_event(g, y, x, bang=bang))
    spec = ModelSpec(
        name="toy-slope", response="swing", family=Family.BERNOULLI_LOGIT,
        fixed=(Intercept(), Covariate("csp"), Indicator("bang", label="bang")),
        random=(RandomTerm("batter", ("bang",)),),
    )
    return events, spec


def gaussian_intercept_data(seed, n_groups=30, per_group=8,
                            beta=(80.0, 6.0), sigma_b=2.0, sigma_e=4.0):
    """Random-intercept Gaussian data on the exit-velocity response."""
    rng = np.random.default_rng(seed)
    events = []
    for g in range(n_groups):
        b = sigma_b * rng.standard_normal()
        for _ in range(per_group):
            x = rng.uniform(0.0, 1.0)
            y = beta[0] + beta[1] * x + b + sigma_e * rng.standard_normal()
            events.append(make_event(
                batter_id=1000 + g, batter_name=f"B{g:03d}", csp=float(x),
                swing=True, contact=True, exit_velocity=float(y),
                description="hit_into_play"))
    spec = ModelSpec(
        name="toy-gauss", response="exit_velocity",
        family=Family.GAUSSIAN_IDENTITY,
        fixed=(Intercept(), Covariate("csp")),
        random=(RandomTerm("batter", ("intercept",)),),
        subset="ev",
    )
    return events, spec


def count_factor_events():
    """Six events with counts 0-0, 0-1, 1-0 for dummy-coding enumeration."""
    counts = [(0, 0), (0, 1), (1, 0), (0, 1), (1, 0), (1, 0)]
    groups = ["FA", "SL", "FA", "CH", "FA", "CU"]
    return [make_event(balls=b, strikes=s, csp=0.1 * (i + 1),
                       batter_id=1001 + (i % 2), pitch_group=groups[i],
                       bang=(i % 3 == 0))
            for i, (b, s) in enumerate(counts)]


def swing_style_spec(levels=("0-0", "0-1", "1-0")):
    return ModelSpec(
        name="swing-style", response="swing", family=Family.BERNOULLI_LOGIT,
        fixed=(Intercept(), Covariate("csp"),
               Indicator("pitch_group", "FA", label="fastball"),
               Factor("count", reference="0-0", levels=tuple(levels)),
               Indicator("bang", label="bang")),
        random=(RandomTerm("batter", ("bang",)),),
    )
