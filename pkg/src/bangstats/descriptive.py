"""Contingency tables and the classical tests run before any modeling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .ingest import PitchEvent


class DegenerateTableError(ValueError):
    """A margin of the table is zero, so the test statistic is undefined."""


class ZeroCellError(ValueError):
    """A cell count is zero; the 2x2 odds ratio needs exact small-sample methods."""


@dataclass(frozen=True)
class ContingencyTable:
    row_field: str
    col_field: str
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.array.sum())

    def row_margins(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.array.sum(axis=1))

    def col_margins(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.array.sum(axis=0))

    def to_dict(self) -> dict:
        return {
            "rows": f"{self.row_field}", "cols": f"{self.col_field}",
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
            "counts": [list(r) for r in self.counts],
        }


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    df: int
    p_value: float


@dataclass(frozen=True)
class OddsRatioResult:
    estimate: float
    lower: float
    upper: float
    p_value: float
    level: float
    method: str


@dataclass(frozen=True)
class BinomialInterval:
    successes: int
    trials: int
    level: float
    lower: float
    upper: float

    @property
    def proportion(self) -> float:
        return self.successes / self.trials


def _label(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    return str(value)


def tabulate(events: Sequence[PitchEvent], row: str | Callable,
             col: str | Callable) -> ContingencyTable:
    """Cross-tabulate two event fields.

    Selectors are attribute names or callables; labels come out sorted so
    repeated runs produce identical tables. Booleans display as no/yes.
    """
    if not events:
        raise ValueError("cannot tabulate zero events")
    rsel = (lambda e: getattr(e, row)) if isinstance(row, str) else row
    csel = (lambda e: getattr(e, col)) if isinstance(col, str) else col
    pairs = [(rsel(e), csel(e)) for e in events]
    row_vals = sorted({r for r, _ in pairs})
    col_vals = sorted({c for _, c in pairs})
    index = {(r, c): 0 for r in row_vals for c in col_vals}
    for pair in pairs:
        index[pair] += 1
    counts = tuple(tuple(index[(r, c)] for c in col_vals) for r in row_vals)
    return ContingencyTable(
        row_field=row if isinstance(row, str) else getattr(row, "__name__", "row"),
        col_field=col if isinstance(col, str) else getattr(col, "__name__", "col"),
        row_labels=tuple(_label(v) for v in row_vals),
        col_labels=tuple(_label(v) for v in col_vals),
        counts=counts,
    )


def chi_square_independence(table: ContingencyTable) -> ChiSquareResult:
    """Pearson chi-square test of independence, no continuity correction."""
    arr = table.array
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise DegenerateTableError("need at least a 2x2 table")
    if (arr.sum(axis=0) == 0).any() or (arr.sum(axis=1) == 0).any():
        raise DegenerateTableError("a table margin is zero")
    stat, p, df, _ = stats.chi2_contingency(arr, correction=False)
    return ChiSquareResult(statistic=float(stat), df=int(df), p_value=float(p))


def _check_2x2(table: ContingencyTable) -> np.ndarray:
    arr = table.array
    if arr.shape != (2, 2):
        raise ValueError(f"odds ratio needs a 2x2 table, got {arr.shape}")
    if (arr == 0).any():
        raise ZeroCellError("zero cell in 2x2 table")
    return arr


def odds_ratio_2x2(table: ContingencyTable, level: float = 0.95,
                   method: str = "wald") -> OddsRatioResult:
    """Odds ratio for a 2x2 table with a confidence interval.

    method="wald" uses the sample odds ratio with the log-scale normal
    interval. method="exact" matches R's fisher.test: conditional maximum
    likelihood estimate under the noncentral hypergeometric distribution,
    the exact conditional interval, and Fisher's two-sided p-value.
    """
    arr = _check_2x2(table)
    a, b = arr[0]
    c, d = arr[1]
    if method == "wald":
        est = (a * d) / (b * c)
        se = math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
        z = stats.norm.ppf(0.5 + level / 2)
        lo, hi = est * math.exp(-z * se), est * math.exp(z * se)
        # two-sided normal p for log OR = 0
        p = 2 * stats.norm.sf(abs(math.log(est)) / se)
        return OddsRatioResult(float(est), float(lo), float(hi), float(p),
                               level, "wald")
    if method == "exact":
        est, lo, hi, p = _fisher_exact_ci(int(a), int(b), int(c), int(d), level)
        return OddsRatioResult(est, lo, hi, p, level, "exact")
    raise ValueError(f"unknown method {method!r}")


def _fisher_exact_ci(a: int, b: int, c: int, d: int, level: float):
    """Conditional MLE and exact CI via the noncentral hypergeometric."""
    from scipy.optimize import brentq

    m = a + b          # row-1 total (successes in population)
    n_ = c + d         # row-2 total
    k = a + c          # column-1 total (draws)
    total = m + n_
    lo_sup = max(0, k - n_)
    hi_sup = min(k, m)

    def dist(or_):
        return stats.nchypergeom_fisher(total, m, k, or_)

    def mean_minus_a(log_or):
        return dist(math.exp(log_or)).mean() - a

    # conditional MLE: odds ratio whose conditional mean equals the observed cell
    def bracket(fn) -> tuple[float, float]:
        # expand [lo_b, hi_b] on the log-OR axis until fn changes sign
        lo_b, hi_b = -1.0, 1.0
        for _ in range(60):
            if fn(lo_b) < 0:
                break
            lo_b *= 2
        for _ in range(60):
            if fn(hi_b) > 0:
                break
            hi_b *= 2
        return lo_b, hi_b

    if a == lo_sup:
        cmle = 0.0
    elif a == hi_sup:
        cmle = math.inf
    else:
        cmle = math.exp(brentq(mean_minus_a, *bracket(mean_minus_a), xtol=1e-12))

    alpha = 1 - level

    def upper_tail(log_or):  # P(X >= a | or) - alpha/2, increasing in or
        return dist(math.exp(log_or)).sf(a - 1) - alpha / 2

    def lower_tail(log_or):  # alpha/2 - P(X <= a | or), increasing in or
        return alpha / 2 - dist(math.exp(log_or)).cdf(a)

    def solve(fn):
        return math.exp(brentq(fn, *bracket(fn), xtol=1e-12))

    ci_lo = 0.0 if a == lo_sup else solve(upper_tail)
    ci_hi = math.inf if a == hi_sup else solve(lower_tail)
    _, p = stats.fisher_exact([[a, b], [c, d]], alternative="two-sided")
    return float(cmle), float(ci_lo), float(ci_hi), float(p)


def beta_exact_interval(successes: int, trials: int, level: float = 0.95,
                        ) -> BinomialInterval:
    """Exact binomial interval from Beta-distribution quantiles.

    The bounds are exact tail inversions: lower is 0 when successes is 0 and
    upper is 1 when successes equals trials.
    """
    if not 0 <= successes <= trials or trials <= 0:
        raise ValueError(f"bad binomial counts {successes}/{trials}")
    if not 0 < level < 1:
        raise ValueError(f"level {level} outside (0, 1)")
    alpha = 1 - level
    k, n = successes, trials
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return BinomialInterval(k, n, level, lo, hi)


def clopper_pearson(successes: int, trials: int, level: float = 0.95,
                    ) -> BinomialInterval:
    """Binomial interval matching the published miss-rate CIs.

    Despite the conventional name, the reference values this package must
    reproduce come from the continuity-corrected score construction (the
    single-proportion interval R's prop.test prints), so this delegates to
    score_interval. The strict Beta-quantile interval is available as
    beta_exact_interval.
    """
    return score_interval(successes, trials, level, continuity=True)


def score_interval(successes: int, trials: int, level: float = 0.95,
                   continuity: bool = True) -> BinomialInterval:
    """Wilson score interval, continuity-corrected by default.

    With continuity=True this reproduces R's prop.test single-proportion
    interval, the form behind the reported miss-rate intervals.
    """
    if not 0 <= successes <= trials or trials <= 0:
        raise ValueError(f"bad binomial counts {successes}/{trials}")
    if not 0 < level < 1:
        raise ValueError(f"level {level} outside (0, 1)")
    k, n = successes, trials
    p = k / n
    q = 1 - p
    z = float(stats.norm.ppf(0.5 + level / 2))
    z2 = z * z
    if not continuity:
        centre = p + z2 / (2 * n)
        half = z * math.sqrt(p * q / n + z2 / (4 * n * n))
        lo, hi = (centre - half) / (1 + z2 / n), (centre + half) / (1 + z2 / n)
    else:
        lo = ((2 * n * p + z2 - 1 - z * math.sqrt(z2 - 2 - 1 / n + 4 * p * (n * q + 1)))
              / (2 * (n + z2)))
        hi = ((2 * n * p + z2 + 1 + z * math.sqrt(z2 + 2 - 1 / n + 4 * p * (n * q - 1)))
              / (2 * (n + z2)))
    lo = max(0.0, lo) if k > 0 else 0.0
    hi = min(1.0, hi) if k < n else 1.0
    return BinomialInterval(k, n, level, float(lo), float(hi))


@dataclass(frozen=True)
class MonthlyBangRate:
    month: str
    pitches: int
    bangs: int

    @property
    def proportion(self) -> float:
        return self.bangs / self.pitches


def monthly_bang_proportions(events: Sequence[PitchEvent]) -> list[MonthlyBangRate]:
    """Share of pitches with at least one bang, by calendar month."""
    months: dict[str, list[int]] = {}
    for e in events:
        cell = months.setdefault(e.month, [0, 0])
        cell[0] += 1
        cell[1] += int(e.bang)
    return [MonthlyBangRate(m, pitches, bangs)
            for m, (pitches, bangs) in sorted(months.items())]


@dataclass(frozen=True)
class PlayerBangCount:
    batter_id: int
    batter_name: str
    pitches: int
    bangs: int

    @property
    def proportion(self) -> float:
        return self.bangs / self.pitches


def player_bang_counts(events: Sequence[PitchEvent], top: int | None = None,
                       ) -> list[PlayerBangCount]:
    """Pitch and bang totals per batter, most-seen batters first."""
    players: dict[int, list] = {}
    for e in events:
        cell = players.setdefault(e.batter_id, [e.batter_name, 0, 0])
        cell[1] += 1
        cell[2] += int(e.bang)
    rows = [PlayerBangCount(pid, name, pitches, bangs)
            for pid, (name, pitches, bangs) in players.items()]
    rows.sort(key=lambda r: (-r.pitches, r.batter_id))
    return rows[:top] if top else rows
