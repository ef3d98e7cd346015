"""Model specifications: response, family, fixed terms, random terms.

A ModelSpec is a declarative description of one mixed model. It is the only
thing the design builder consumes besides the events themselves, and it
round-trips through JSON so a fitted analysis can record exactly what was
estimated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Union


class Family(Enum):
    BERNOULLI_LOGIT = "bernoulli_logit"
    GAUSSIAN_IDENTITY = "gaussian_identity"


GROUP_FIELDS = {"batter": "batter_id", "pitcher": "pitcher_id"}


@dataclass(frozen=True)
class Intercept:
    label: str = "intercept"


@dataclass(frozen=True)
class Covariate:
    """A continuous covariate taken directly from an event attribute."""

    field: str
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label or self.field


@dataclass(frozen=True)
class Indicator:
    """0/1 column: 1 when the event attribute equals `equals`."""

    field: str
    equals: object = True
    label: str | None = None

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return self.field if self.equals is True else f"{self.field}={self.equals}"


@dataclass(frozen=True)
class Factor:
    """Treatment-coded categorical factor with an explicit reference level.

    `levels`, when given, fixes the full level set (reference included) so
    the dummy-column order does not depend on which levels the data happens
    to contain.
    """

    field: str
    reference: str
    levels: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Interaction:
    """Elementwise product of two already-declared single-column terms."""

    left: str
    right: str
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label or f"{self.left}:{self.right}"


FixedTerm = Union[Intercept, Covariate, Indicator, Factor, Interaction]


@dataclass(frozen=True)
class RandomTerm:
    """Random effects for one grouping factor.

    `effects` entries are "intercept" or the label of a single-column fixed
    term (the slope covariate). With `correlated=False` the effects get
    independent variances (a diagonal covariance block).
    """

    group: str
    effects: tuple[str, ...]
    correlated: bool = True

    def __post_init__(self):
        if self.group not in GROUP_FIELDS:
            raise ValueError(f"unknown grouping factor {self.group!r}; "
                             f"expected one of {sorted(GROUP_FIELDS)}")
        if not self.effects:
            raise ValueError("random term needs at least one effect")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    response: str
    family: Family
    fixed: tuple[FixedTerm, ...]
    random: tuple[RandomTerm, ...] = ()
    subset: str = "swing"

    def __post_init__(self):
        labels = self.fixed_labels()
        dupes = {l for l in labels if labels.count(l) > 1}
        if dupes:
            raise ValueError(f"duplicate fixed-term labels: {sorted(dupes)}")
        single = set(self.single_column_labels())
        for t in self.fixed:
            if isinstance(t, Interaction):
                for part in (t.left, t.right):
                    if part not in single:
                        raise ValueError(
                            f"interaction references unknown term {part!r}")
        for r in self.random:
            for eff in r.effects:
                if eff != "intercept" and eff not in single:
                    raise ValueError(
                        f"random slope references unknown fixed term {eff!r}")

    def fixed_labels(self) -> list[str]:
        out = []
        for t in self.fixed:
            if isinstance(t, Intercept):
                out.append(t.label)
            elif isinstance(t, (Covariate, Indicator, Interaction)):
                out.append(t.name)
            elif isinstance(t, Factor):
                # level columns are resolved at design time; stand-in here
                out.append(f"{t.field}:*")
        return out

    def single_column_labels(self) -> list[str]:
        return [t.name for t in self.fixed if isinstance(t, (Covariate, Indicator))]

    def with_random(self, random: tuple[RandomTerm, ...]) -> "ModelSpec":
        """Same model with an alternative random-effect structure."""
        return replace(self, random=random)

    def to_dict(self) -> dict:
        def term_dict(t):
            if isinstance(t, Intercept):
                return {"kind": "intercept", "label": t.label}
            if isinstance(t, Covariate):
                return {"kind": "covariate", "field": t.field, "label": t.label}
            if isinstance(t, Indicator):
                return {"kind": "indicator", "field": t.field,
                        "equals": t.equals, "label": t.label}
            if isinstance(t, Factor):
                return {"kind": "factor", "field": t.field,
                        "reference": t.reference,
                        "levels": list(t.levels) if t.levels else None}
            if isinstance(t, Interaction):
                return {"kind": "interaction", "left": t.left,
                        "right": t.right, "label": t.label}
            raise TypeError(f"unknown term {t!r}")

        return {
            "name": self.name,
            "response": self.response,
            "family": self.family.value,
            "fixed": [term_dict(t) for t in self.fixed],
            "random": [{"group": r.group, "effects": list(r.effects),
                        "correlated": r.correlated} for r in self.random],
            "subset": self.subset,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelSpec":
        def term(d):
            kind = d["kind"]
            if kind == "intercept":
                return Intercept(label=d.get("label", "intercept"))
            if kind == "covariate":
                return Covariate(field=d["field"], label=d.get("label"))
            if kind == "indicator":
                return Indicator(field=d["field"], equals=d.get("equals", True),
                                 label=d.get("label"))
            if kind == "factor":
                levels = d.get("levels")
                return Factor(field=d["field"], reference=d["reference"],
                              levels=tuple(levels) if levels else None)
            if kind == "interaction":
                return Interaction(left=d["left"], right=d["right"],
                                   label=d.get("label"))
            raise ValueError(f"unknown term kind {kind!r}")

        return cls(
            name=raw["name"],
            response=raw["response"],
            family=Family(raw["family"]),
            fixed=tuple(term(d) for d in raw["fixed"]),
            random=tuple(RandomTerm(group=r["group"],
                                    effects=tuple(r["effects"]),
                                    correlated=r.get("correlated", True))
                         for r in raw.get("random", [])),
            subset=raw.get("subset", "swing"),
        )

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "ModelSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
