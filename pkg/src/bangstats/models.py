"""The three analysis model specifications.

Each spec names its estimation subset: the swing model uses every clean
pitch, the contact model only swings, and the exit-velocity model only
batted balls with a measured launch speed.
"""

from __future__ import annotations

from .glmm.modelspec import (Covariate, Factor, Family, Indicator,
                             Interaction, Intercept, ModelSpec, RandomTerm)

__all__ = ["COUNT_LEVELS", "spec_swing", "spec_contact", "spec_ev"]

# all twelve counts; 3-2 never reaches a 4th ball or 3rd strike mid-pitch
COUNT_LEVELS = tuple(f"{b}-{s}" for b in range(4) for s in range(3))


def spec_swing() -> ModelSpec:
    """Swing decision on every pitch: does a bang change swing odds?"""
    return ModelSpec(
        name="swing",
        response="swing",
        family=Family.BERNOULLI_LOGIT,
        fixed=(
            Intercept(),
            Covariate("csp"),
            Indicator("pitch_group", "FA", label="fastball"),
            Factor("count", reference="0-0", levels=COUNT_LEVELS),
            Indicator("bang", label="bang"),
        ),
        random=(RandomTerm("batter", ("bang",)),),
        subset="swing",
    )


def spec_contact() -> ModelSpec:
    """Contact given a swing, with a batter-specific bang effect."""
    return ModelSpec(
        name="contact",
        response="contact",
        family=Family.BERNOULLI_LOGIT,
        fixed=(
            Intercept(),
            Covariate("csp"),
            Indicator("pitch_group", "FA", label="fastball"),
            Indicator("bang", label="bang"),
            Interaction("fastball", "bang"),
        ),
        random=(
            RandomTerm("pitcher", ("intercept",)),
            RandomTerm("batter", ("intercept", "bang"), correlated=True),
        ),
        subset="contact",
    )


def spec_ev() -> ModelSpec:
    """Exit velocity of batted balls, identity link."""
    return ModelSpec(
        name="ev",
        response="exit_velocity",
        family=Family.GAUSSIAN_IDENTITY,
        fixed=(
            Intercept(),
            Covariate("csp"),
            Indicator("pitch_group", "FA", label="fastball"),
            Indicator("bang", label="bang"),
        ),
        random=(
            RandomTerm("pitcher", ("intercept",)),
            RandomTerm("batter", ("intercept",)),
        ),
        subset="ev",
    )
