"""Design-matrix construction: dense X, sparse Z, response vector.

Column order follows the spec's term order exactly, factors expand to
treatment-coded dummies against their declared reference, and Z is laid out
level-major within each random term (all effects for level 1, then level 2,
and so on) so the per-level covariance blocks are contiguous.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from ..ingest import PitchEvent
from .modelspec import (Covariate, Factor, Family, GROUP_FIELDS, Indicator,
                        Interaction, Intercept, ModelSpec, RandomTerm)

log = logging.getLogger(__name__)


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnDef:
    """Self-contained recipe for one X column (usable on new events too)."""

    label: str
    kind: str                       # intercept | covariate | indicator | interaction
    field: str | None = None
    equals: object = None
    parts: tuple[int, int] | None = None    # column indices for interactions


@dataclass(frozen=True)
class RandomBlockInfo:
    group: str                       # "batter" | "pitcher"
    effect_labels: tuple[str, ...]   # "intercept" or fixed-term labels
    levels: tuple                    # sorted grouping ids
    level_names: tuple[str, ...]
    correlated: bool
    col_offset: int

    @property
    def k(self) -> int:
        return len(self.effect_labels)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_cols(self) -> int:
        return self.k * self.n_levels

    def level_index(self) -> dict:
        return {lvl: i for i, lvl in enumerate(self.levels)}


@dataclass(frozen=True)
class DesignBundle:
    spec: ModelSpec
    x_labels: tuple[str, ...]
    x_columns: tuple[ColumnDef, ...]
    X: np.ndarray
    y: np.ndarray
    Z: sparse.csc_matrix
    blocks: tuple[RandomBlockInfo, ...]
    n_rows: int

    @property
    def n(self) -> int:
        return self.n_rows

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]


def _attr(event: PitchEvent, field: str, idx: int):
    try:
        value = getattr(event, field)
    except AttributeError:
        raise DesignError(f"event has no field {field!r}") from None
    if value is None:
        raise DesignError(f"missing value for {field!r} at event index {idx}")
    return value


def _column_values(col: ColumnDef, events: Sequence[PitchEvent],
                   built: list[np.ndarray]) -> np.ndarray:
    n = len(events)
    if col.kind == "intercept":
        return np.ones(n)
    if col.kind == "covariate":
        vals = np.array([float(_attr(e, col.field, i))
                         for i, e in enumerate(events)])
        return vals
    if col.kind == "indicator":
        return np.array([1.0 if _attr(e, col.field, i) == col.equals else 0.0
                         for i, e in enumerate(events)])
    if col.kind == "interaction":
        i, j = col.parts
        return built[i] * built[j]
    raise DesignError(f"unknown column kind {col.kind!r}")


def _expand_terms(events: Sequence[PitchEvent], spec: ModelSpec,
                  ) -> list[ColumnDef]:
    cols: list[ColumnDef] = []
    index = {}

    def add(col: ColumnDef):
        if col.label in index:
            raise DesignError(f"duplicate column label {col.label!r}")
        index[col.label] = len(cols)
        cols.append(col)

    for term in spec.fixed:
        if isinstance(term, Intercept):
            add(ColumnDef(term.label, "intercept"))
        elif isinstance(term, Covariate):
            add(ColumnDef(term.name, "covariate", field=term.field))
        elif isinstance(term, Indicator):
            add(ColumnDef(term.name, "indicator", field=term.field,
                          equals=term.equals))
        elif isinstance(term, Factor):
            observed = sorted({str(_attr(e, term.field, i))
                               for i, e in enumerate(events)})
            declared = list(term.levels) if term.levels else observed
            if term.reference not in declared:
                raise DesignError(
                    f"factor {term.field!r} reference {term.reference!r} "
                    f"not among levels {declared}")
            unknown = [v for v in observed if v not in declared]
            if unknown:
                raise DesignError(
                    f"factor {term.field!r} has undeclared levels {unknown}")
            for level in declared:
                if level == term.reference:
                    continue
                if level not in observed:
                    warnings.warn(
                        f"factor {term.field!r} level {level!r} absent from "
                        f"data; dropping its zero column", stacklevel=3)
                    continue
                add(ColumnDef(f"{term.field}:{level}", "indicator",
                              field=term.field, equals=level))
        elif isinstance(term, Interaction):
            for part in (term.left, term.right):
                if part not in index:
                    raise DesignError(
                        f"interaction part {part!r} is not an earlier column")
            add(ColumnDef(term.name, "interaction",
                          parts=(index[term.left], index[term.right])))
        else:
            raise DesignError(f"unknown fixed term {term!r}")
    return cols


def _check_rank(X: np.ndarray, labels: Sequence[str]) -> None:
    from scipy.linalg import qr
    _, r, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    bad = [labels[piv[i]] for i in range(len(diag)) if diag[i] <= tol]
    if bad:
        raise DesignError(f"X is rank deficient; collinear columns: {bad}")


def _response(events: Sequence[PitchEvent], spec: ModelSpec) -> np.ndarray:
    vals = np.empty(len(events))
    for i, e in enumerate(events):
        v = _attr(e, spec.response, i)
        vals[i] = float(v)
    if spec.family is Family.BERNOULLI_LOGIT:
        if not np.isin(vals, (0.0, 1.0)).all():
            raise DesignError("Bernoulli response must be 0/1")
    return vals


def build_design(events: Sequence[PitchEvent], spec: ModelSpec) -> DesignBundle:
    """Build X, Z, and y for a spec over a fixed event subset.

    Row order equals event order. Raises DesignError on missing covariates
    (with the offending event index), undeclared factor levels, or a
    rank-deficient X.
    """
    events = list(events)
    if not events:
        raise DesignError("no events to build a design from")

    cols = _expand_terms(events, spec)
    built: list[np.ndarray] = []
    for col in cols:
        built.append(_column_values(col, events, built))
    X = np.column_stack(built)
    labels = tuple(c.label for c in cols)
    label_index = {lab: i for i, lab in enumerate(labels)}
    _check_rank(X, labels)

    y = _response(events, spec)

    blocks = []
    offset = 0
    rows, zcols, data = [], [], []
    for rt in spec.random:
        id_field = GROUP_FIELDS[rt.group]
        name_field = id_field.replace("_id", "_name")
        ids = [_attr(e, id_field, i) for i, e in enumerate(events)]
        names = {}
        for e, gid in zip(events, ids):
            names.setdefault(gid, str(getattr(e, name_field, gid)))
        levels = tuple(sorted(set(ids)))
        lev_index = {lvl: i for i, lvl in enumerate(levels)}
        k = len(rt.effects)
        for j, eff in enumerate(rt.effects):
            if eff == "intercept":
                col_vals = np.ones(len(events))
            else:
                if eff not in label_index:
                    raise DesignError(f"random slope {eff!r} has no X column")
                col_vals = X[:, label_index[eff]]
            for i, gid in enumerate(ids):
                v = col_vals[i]
                if v != 0.0:
                    rows.append(i)
                    zcols.append(offset + lev_index[gid] * k + j)
                    data.append(v)
        blocks.append(RandomBlockInfo(
            group=rt.group, effect_labels=tuple(rt.effects), levels=levels,
            level_names=tuple(names[lvl] for lvl in levels),
            correlated=rt.correlated, col_offset=offset))
        offset += k * len(levels)

    Z = sparse.csc_matrix(
        (np.asarray(data), (np.asarray(rows, dtype=np.int64),
                            np.asarray(zcols, dtype=np.int64))),
        shape=(len(events), offset))

    log.info("design %s: n=%d p=%d q=%d", spec.name, len(events), X.shape[1],
             offset)
    return DesignBundle(spec=spec, x_labels=labels, x_columns=tuple(cols),
                        X=X, y=y, Z=Z, blocks=tuple(blocks),
                        n_rows=len(events))


def rebuild_x(bundle_cols: Sequence[ColumnDef], events: Sequence[PitchEvent],
              ) -> np.ndarray:
    """X for new events using the column recipes of a fitted design."""
    built: list[np.ndarray] = []
    for col in bundle_cols:
        built.append(_column_values(col, list(events), built))
    return np.column_stack(built)


def rebuild_z(blocks: Sequence[RandomBlockInfo], events: Sequence[PitchEvent],
              X_new: np.ndarray, x_labels: Sequence[str]) -> sparse.csc_matrix:
    """Z for new events; unseen grouping levels contribute no columns."""
    label_index = {lab: i for i, lab in enumerate(x_labels)}
    events = list(events)
    rows, zcols, data = [], [], []
    total = 0
    for blk in blocks:
        id_field = GROUP_FIELDS[blk.group]
        lev_index = blk.level_index()
        ids = [_attr(e, id_field, i) for i, e in enumerate(events)]
        for j, eff in enumerate(blk.effect_labels):
            if eff == "intercept":
                col_vals = np.ones(len(events))
            else:
                col_vals = X_new[:, label_index[eff]]
            for i, gid in enumerate(ids):
                if gid not in lev_index:
                    continue
                v = col_vals[i]
                if v != 0.0:
                    rows.append(i)
                    zcols.append(blk.col_offset + lev_index[gid] * blk.k + j)
                    data.append(v)
        total = max(total, blk.col_offset + blk.n_cols)
    return sparse.csc_matrix(
        (np.asarray(data), (np.asarray(rows, dtype=np.int64),
                            np.asarray(zcols, dtype=np.int64))),
        shape=(len(events), total))
