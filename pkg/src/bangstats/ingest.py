"""Loading, cleaning, and outcome derivation for the pitch-level bang data.

The raw CSV is one row per pitch thrown to an Astros batter at home in 2017,
with a bang count attached from the audio annotations. This module turns that
file into validated `PitchEvent` records and derives the three modeled
outcomes (swing, contact, exit velocity) from the Statcast description codes.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, fields
from datetime import date, datetime
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

PITCH_GROUPS = ("CH", "CU", "FA", "SL")

# Statcast description codes, grouped by what they imply about the swing.
SWING_CONTACT_CODES = frozenset({
    "foul", "hit_into_play", "hit_into_play_score", "hit_into_play_no_out",
})
SWING_MISS_CODES = frozenset({
    "swinging_strike", "swinging_strike_blocked", "foul_tip",
})
NO_SWING_CODES = frozenset({
    "ball", "blocked_ball", "called_strike", "hit_by_pitch", "pitchout",
})
BUNT_CODES = frozenset({
    "foul_bunt", "missed_bunt", "hit_into_play_bunt",
})
# Rows that are neither a competitive swing decision nor a take.
EXCLUDE_CODES = frozenset({
    "intent_ball", "automatic_ball", "unknown",
})

MAX_BALLS = 3
MAX_STRIKES = 2


class SchemaError(ValueError):
    """Raised when the CSV header does not satisfy the schema mapping."""


class RowParseError(ValueError):
    """Raised when a cell cannot be parsed as its declared type."""

    def __init__(self, row_index: int, column: str, value: str, kind: str):
        self.row_index = row_index
        self.column = column
        self.value = value
        super().__init__(
            f"row {row_index}: cannot parse {column}={value!r} as {kind}"
        )


class UnknownCodeError(ValueError):
    """Raised when a description code is absent from every schema code set."""


@dataclass(frozen=True)
class SchemaConfig:
    """Maps canonical field names to CSV columns and fixes the code sets.

    The code sets drive both cleaning (bunts, excluded results) and outcome
    derivation, so the union of the five sets must cover every description
    value the data can contain; `derive_outcomes` errors on anything else
    rather than guessing.
    """

    columns: Mapping[str, str]
    swing_contact_codes: frozenset[str] = SWING_CONTACT_CODES
    swing_miss_codes: frozenset[str] = SWING_MISS_CODES
    no_swing_codes: frozenset[str] = NO_SWING_CODES
    bunt_codes: frozenset[str] = BUNT_CODES
    exclude_codes: frozenset[str] = EXCLUDE_CODES
    version: str = "1"

    @classmethod
    def default(cls) -> "SchemaConfig":
        return cls(columns=dict(DEFAULT_COLUMNS))

    @classmethod
    def from_json(cls, path) -> "SchemaConfig":
        with open(path) as fh:
            raw = json.load(fh)
        kwargs = {"columns": raw["columns"], "version": str(raw.get("version", "1"))}
        for key in ("swing_contact_codes", "swing_miss_codes", "no_swing_codes",
                    "bunt_codes", "exclude_codes"):
            if key in raw:
                kwargs[key] = frozenset(raw[key])
        missing = set(DEFAULT_COLUMNS) - set(kwargs["columns"])
        if missing:
            raise SchemaError(f"schema missing column mappings: {sorted(missing)}")
        return cls(**kwargs)

    def to_json(self, path) -> None:
        payload = {
            "version": self.version,
            "columns": dict(self.columns),
            "swing_contact_codes": sorted(self.swing_contact_codes),
            "swing_miss_codes": sorted(self.swing_miss_codes),
            "no_swing_codes": sorted(self.no_swing_codes),
            "bunt_codes": sorted(self.bunt_codes),
            "exclude_codes": sorted(self.exclude_codes),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @property
    def known_codes(self) -> frozenset[str]:
        return (self.swing_contact_codes | self.swing_miss_codes
                | self.no_swing_codes | self.bunt_codes | self.exclude_codes)


DEFAULT_COLUMNS: Mapping[str, str] = {
    "pitch_id": "pitch_id",
    "game_id": "game_pk",
    "game_date": "game_date",
    "batter_id": "batter_id",
    "batter_name": "batter_name",
    "pitcher_id": "pitcher_id",
    "pitcher_name": "pitcher_name",
    "pitch_group": "pitch_group",
    "csp": "called_strike_prob",
    "balls": "balls",
    "strikes": "strikes",
    "bangs": "bangs",
    "description": "description",
    "exit_velocity": "launch_speed",
}

_INT_FIELDS = ("batter_id", "pitcher_id", "balls", "strikes", "bangs")
_FLOAT_FIELDS = ("csp", "exit_velocity")
_DATE_FIELDS = ("game_date",)


@dataclass(frozen=True)
class PitchEvent:
    """One cleaned pitch with derived outcomes.

    `contact` is None when there was no swing, and `exit_velocity` is None
    unless contact was made and a launch speed was recorded; validation of
    that implication chain happens in `__post_init__` so a constructed event
    is always internally consistent.
    """

    game_id: str
    game_date: date
    batter_id: int
    batter_name: str
    pitcher_id: int
    pitcher_name: str
    pitch_group: str
    csp: float
    balls: int
    strikes: int
    bang: bool
    swing: bool
    contact: bool | None
    exit_velocity: float | None
    description: str

    def __post_init__(self):
        if self.pitch_group not in PITCH_GROUPS:
            raise ValueError(f"pitch_group {self.pitch_group!r} not one of {PITCH_GROUPS}")
        if not 0.0 <= self.csp <= 1.0:
            raise ValueError(f"csp {self.csp} outside [0, 1]")
        if not (0 <= self.balls <= MAX_BALLS and 0 <= self.strikes <= MAX_STRIKES):
            raise ValueError(f"count {self.balls}-{self.strikes} out of range")
        if not self.swing and self.contact is not None:
            raise ValueError("contact defined without a swing")
        if self.exit_velocity is not None and self.contact is not True:
            raise ValueError("exit velocity recorded without contact")

    @property
    def count(self) -> str:
        """Ball-strike count as a factor label, e.g. '0-0'."""
        return f"{self.balls}-{self.strikes}"

    @property
    def offspeed(self) -> bool:
        return self.pitch_group != "FA"

    @property
    def month(self) -> str:
        return f"{self.game_date.year:04d}-{self.game_date.month:02d}"


class Subset(Enum):
    SWING = "swing"
    CONTACT = "contact"
    EV = "ev"


@dataclass
class CleaningReport:
    """Rows removed per rule, in the order the rules were applied."""

    input_rows: int
    removed: dict[str, int]
    output_rows: int

    @property
    def total_removed(self) -> int:
        return sum(self.removed.values())

    def to_dict(self) -> dict:
        return {
            "input_rows": self.input_rows,
            "removed": dict(self.removed),
            "total_removed": self.total_removed,
            "output_rows": self.output_rows,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _parse_cell(raw: str, kind: str, row_index: int, column: str):
    text = raw.strip() if raw is not None else ""
    if text == "" or text.upper() in ("NA", "NAN", "NULL"):
        return None
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "date":
            return datetime.strptime(text, "%Y-%m-%d").date()
    except ValueError:
        raise RowParseError(row_index, column, raw, kind) from None
    return text


def load_csv(path, schema: SchemaConfig | None = None) -> list[dict]:
    """Read the raw CSV into one dict per row, keyed by canonical field name.

    No filtering happens here: every data row comes back, with missing cells
    as None, so the cleaning report can account for all of them. Raises
    SchemaError if a mapped column is absent from the header and
    RowParseError (with the offending row index) on an unparseable cell.
    """
    schema = schema or SchemaConfig.default()
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [col for col in schema.columns.values() if col not in header]
        if missing:
            raise SchemaError(f"CSV header missing mapped columns: {missing}")
        for i, row in enumerate(reader):
            rec = {}
            for name, col in schema.columns.items():
                raw = row.get(col)
                if name in _INT_FIELDS:
                    rec[name] = _parse_cell(raw, "int", i, col)
                elif name in _FLOAT_FIELDS:
                    rec[name] = _parse_cell(raw, "float", i, col)
                elif name in _DATE_FIELDS:
                    rec[name] = _parse_cell(raw, "date", i, col)
                else:
                    rec[name] = _parse_cell(raw, "str", i, col)
            records.append(rec)
    log.info("loaded %d rows from %s", len(records), path)
    return records


def derive_outcomes(record: Mapping, schema: SchemaConfig | None = None) -> dict:
    """Derive swing/contact/exit_velocity from the description code.

    Returns a dict with `swing`, `contact`, and `exit_velocity` filled in.
    Codes outside the schema's five sets raise UnknownCodeError so a new
    Statcast code cannot be misclassified silently. Recorded launch speeds
    on non-contact rows (a known Statcast artifact on foul tips) are nulled.
    """
    schema = schema or SchemaConfig.default()
    code = record["description"]
    if code in schema.bunt_codes or code in schema.exclude_codes:
        raise ValueError(f"derive_outcomes called on a row cleaning should drop: {code!r}")
    if code in schema.swing_contact_codes:
        swing, contact = True, True
    elif code in schema.swing_miss_codes:
        swing, contact = True, False
    elif code in schema.no_swing_codes:
        swing, contact = False, None
    else:
        raise UnknownCodeError(
            f"description code {code!r} is not in any schema code set"
        )
    out = dict(record)
    out["swing"] = swing
    out["contact"] = contact
    if contact is not True:
        out["exit_velocity"] = None
    return out


# Cleaning rules, applied in order; each row is dropped by the first rule
# that matches so the per-rule counts partition the removals.
def _missing_pitch_id(rec, schema):
    return rec.get("pitch_id") in (None, "")


def _bunt_attempt(rec, schema):
    return rec["description"] in schema.bunt_codes


def _excluded_result(rec, schema):
    return rec["description"] in schema.exclude_codes


def _ambiguous_pitch_group(rec, schema):
    return rec["pitch_group"] not in PITCH_GROUPS


def _missing_csp(rec, schema):
    return rec["csp"] is None or not (0.0 <= rec["csp"] <= 1.0)


def _invalid_count(rec, schema):
    b, s = rec["balls"], rec["strikes"]
    return (b is None or s is None
            or not (0 <= b <= MAX_BALLS) or not (0 <= s <= MAX_STRIKES))


def _incomplete_row(rec, schema):
    required = ("game_id", "game_date", "batter_id", "batter_name",
                "pitcher_id", "pitcher_name", "bangs", "description")
    return any(rec.get(k) is None for k in required)


CLEANING_RULES: tuple[tuple[str, Callable], ...] = (
    ("missing_pitch_id", _missing_pitch_id),
    ("bunt_attempt", _bunt_attempt),
    ("excluded_result_code", _excluded_result),
    ("ambiguous_pitch_group", _ambiguous_pitch_group),
    ("missing_csp", _missing_csp),
    ("invalid_count", _invalid_count),
    ("incomplete_row", _incomplete_row),
)


def clean(records: Iterable[Mapping], schema: SchemaConfig | None = None,
          ) -> tuple[list[PitchEvent], CleaningReport]:
    """Apply the exclusion rules and build validated events.

    Every dropped row is counted under exactly one rule; nothing is dropped
    silently. The returned events all pass PitchEvent validation, with
    outcomes derived from the description codes.
    """
    schema = schema or SchemaConfig.default()
    records = list(records)
    removed = {name: 0 for name, _ in CLEANING_RULES}
    events = []
    for rec in records:
        rule = next((name for name, pred in CLEANING_RULES if pred(rec, schema)), None)
        if rule is not None:
            removed[rule] += 1
            continue
        full = derive_outcomes(rec, schema)
        events.append(PitchEvent(
            game_id=str(full["game_id"]),
            game_date=full["game_date"],
            batter_id=full["batter_id"],
            batter_name=full["batter_name"],
            pitcher_id=full["pitcher_id"],
            pitcher_name=full["pitcher_name"],
            pitch_group=full["pitch_group"],
            csp=full["csp"],
            balls=full["balls"],
            strikes=full["strikes"],
            bang=full["bangs"] > 0,
            swing=full["swing"],
            contact=full["contact"],
            exit_velocity=full["exit_velocity"],
            description=full["description"],
        ))
    report = CleaningReport(
        input_rows=len(records), removed=removed, output_rows=len(events))
    assert report.input_rows == report.output_rows + report.total_removed
    log.info("cleaning kept %d of %d rows (%s)", report.output_rows,
             report.input_rows,
             ", ".join(f"{k}={v}" for k, v in removed.items() if v))
    return events, report


def subset(events: Sequence[PitchEvent], which: Subset | str) -> list[PitchEvent]:
    """Select the analysis subset for one of the three models.

    SWING is every clean pitch; CONTACT is the swings; EV is the contacted
    balls with a recorded exit velocity.
    """
    which = Subset(which) if not isinstance(which, Subset) else which
    if which is Subset.SWING:
        return list(events)
    if which is Subset.CONTACT:
        return [e for e in events if e.swing]
    return [e for e in events if e.contact and e.exit_velocity is not None]


_CSV_FIELDS = [f.name for f in fields(PitchEvent)]


def events_to_csv(events: Sequence[PitchEvent], path) -> None:
    """Write cleaned events in the canonical column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for e in events:
            writer.writerow([
                e.game_id, e.game_date.isoformat(), e.batter_id, e.batter_name,
                e.pitcher_id, e.pitcher_name, e.pitch_group, repr(e.csp),
                e.balls, e.strikes, int(e.bang), int(e.swing),
                "" if e.contact is None else int(e.contact),
                "" if e.exit_velocity is None else repr(e.exit_velocity),
                e.description,
            ])


def events_to_raw(events: Sequence[PitchEvent]) -> list[dict]:
    """Re-express events as raw-shaped records (for round-trip checks)."""
    out = []
    for i, e in enumerate(events):
        out.append({
            "pitch_id": f"reemit-{i}",
            "game_id": e.game_id,
            "game_date": e.game_date,
            "batter_id": e.batter_id,
            "batter_name": e.batter_name,
            "pitcher_id": e.pitcher_id,
            "pitcher_name": e.pitcher_name,
            "pitch_group": e.pitch_group,
            "csp": e.csp,
            "balls": e.balls,
            "strikes": e.strikes,
            "bangs": int(e.bang),
            "description": e.description,
            "exit_velocity": e.exit_velocity,
        })
    return out
