"""Full-run orchestration: clean, test, fit, bootstrap, and write files.

run() executes the requested stages against one dataset and leaves a
self-describing directory of outputs: a cleaning report, the descriptive
tables, coefficient tables for the three models, figure data files, and a
manifest. Everything written is deterministic for a given (data, seed,
options) triple, so re-running a stage reproduces its files byte for byte.

Numeric display follows the house style of the write-up tables: two
decimals, with p-values below 0.005 shown as "0.00". JSON files always
carry full precision; the CSV tables do too when full_precision is set.
"""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, bundled_data_path, bundled_schema_path
from .descriptive import (chi_square_independence, clopper_pearson,
                          monthly_bang_proportions, odds_ratio_2x2,
                          player_bang_counts, tabulate)
from .glmm import build_design, fit
from .inference import (bootstrap_distributions_export, linear_combo,
                        odds_ratio, parametric_bootstrap, player_odds_ratios,
                        wald_interval)
from .ingest import SchemaConfig, clean, load_csv, subset
from .models import spec_contact, spec_ev, spec_swing
from .trajectory import FlightParams, carry_distance

STAGES = ("descriptive", "swing", "contact", "ev", "bootstrap", "trajectory")

__all__ = ["AnalysisConfig", "StageError", "STAGES", "run"]


class StageError(RuntimeError):
    """A pipeline stage failed; .stage names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass
class AnalysisConfig:
    """What to run, on which data, and where the outputs go."""

    out: Path
    data: Path | None = None          # default: the bundled dataset
    schema: Path | None = None        # default: the bundled schema
    stages: tuple[str, ...] = ("all",)
    boot_b: int = 1000
    seed: int = 20170901
    formats: tuple[str, ...] = ("csv", "json")
    full_precision: bool = False
    boot_players: int = 9             # distributions exported for the top N
    level: float = 0.95
    extra: dict = field(default_factory=dict)

    def resolved_stages(self) -> tuple[str, ...]:
        req = tuple(self.stages) or ("all",)
        if "all" in req:
            return STAGES
        bad = [s for s in req if s not in STAGES]
        if bad:
            raise ValueError(f"unknown stages {bad}; valid: {list(STAGES)}")
        # keep canonical execution order regardless of request order
        return tuple(s for s in STAGES if s in req)

    def validate(self) -> None:
        stages = self.resolved_stages()
        if "bootstrap" in stages and self.boot_b < 2:
            raise ValueError(f"bootstrap B must be >= 2, got {self.boot_b}")
        bad = [f for f in self.formats if f not in ("csv", "json")]
        if bad:
            raise ValueError(f"unknown formats {bad}; valid: csv, json")
        if not (0.0 < self.level < 1.0):
            raise ValueError(f"level must be in (0, 1), got {self.level}")


# ---------------------------------------------------------------------------
# formatting and file helpers


def _disp(x, full: bool) -> str:
    if isinstance(x, (int, np.integer)) or isinstance(x, bool):
        return str(x)
    if isinstance(x, float):
        if full:
            return repr(float(x))
        return f"{x:.2f}"
    return str(x)


def _disp_p(p: float, full: bool) -> str:
    if full:
        return repr(float(p))
    return "0.00" if p < 0.005 else f"{p:.2f}"


class _Writer:
    """Collects written file names and applies the format switches."""

    def __init__(self, out: Path, formats: tuple[str, ...], full: bool):
        self.out = out
        self.formats = formats
        self.full = full
        self.written: list[str] = []

    def _record(self, name: str) -> Path:
        if name in self.written:
            raise ValueError(f"duplicate output file {name!r}")
        self.written.append(name)
        return self.out / name

    def json(self, name: str, payload) -> None:
        path = self._record(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def table(self, name: str, header: list[str], rows: list[list],
              p_cols: tuple[str, ...] = ()) -> None:
        """One logical table, emitted in every requested format."""
        if "csv" in self.formats:
            path = self._record(name + ".csv")
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([
                        _disp_p(v, self.full) if h in p_cols
                        else _disp(v, self.full)
                        for h, v in zip(header, row)])
        if "json" in self.formats:
            self.json(name + ".json",
                      [dict(zip(header, _jsonable(row))) for row in rows])

    def figure(self, name: str, header: list[str], rows: list[list]) -> None:
        """Figure data is always CSV and always full precision."""
        path = self._record(name + ".csv")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_disp(v, True) for v in row])


def _jsonable(row: list) -> list:
    out = []
    for v in row:
        if isinstance(v, (np.floating, np.integer)):
            out.append(v.item())
        else:
            out.append(v)
    return out


def _vc_payload(model) -> list[dict]:
    out = []
    for vc in model.variance_components:
        out.append({
            "group": vc.group,
            "effects": list(vc.effect_labels),
            "sd": [float(s) for s in vc.sd],
            "corr": [[float(c) for c in row] for row in vc.corr],
            "boundary": list(vc.boundary),
        })
    return out


def _model_files(w: _Writer, name: str, model, extra: dict) -> None:
    rows = [[c["term"], c["estimate"], c["se"], c["z"], c["p"]]
            for c in model.coefficient_table()]
    w.table(f"{name}_model_coefficients",
            ["term", "estimate", "se", "z", "p"], rows, p_cols=("p",))
    payload = {
        "n_obs": int(model.bundle.n),
        "converged": bool(model.converged),
        "log_likelihood": float(model.log_likelihood),
        "reml": bool(model.reml),
        "sigma_e": None if model.sigma_e is None else float(model.sigma_e),
        "variance_components": _vc_payload(model),
    }
    payload.update(extra)
    w.json(f"{name}_model_summary.json", payload)


# ---------------------------------------------------------------------------
# stages


def _stage_descriptive(w: _Writer, events, level: float) -> dict:
    by_group = tabulate(events, "pitch_group", "bang")
    by_bang = tabulate(events, "bang", "swing")
    chi = chi_square_independence(by_group)
    or_exact = odds_ratio_2x2(by_bang, level=level, method="exact")
    or_wald = odds_ratio_2x2(by_bang, level=level)

    w.table("bangs_by_pitch_group",
            ["pitch_group", "no_bang", "bang", "bang_share"],
            [[lab, row[0], row[1], row[1] / (row[0] + row[1])]
             for lab, row in zip(by_group.row_labels, by_group.counts)])
    w.table("swings_by_bang",
            ["bang", "no_swing", "swing", "swing_share"],
            [[lab, row[0], row[1], row[1] / (row[0] + row[1])]
             for lab, row in zip(by_bang.row_labels, by_bang.counts)])
    w.json("independence_test.json", {
        "table": by_group.to_dict(),
        "statistic": chi.statistic, "df": chi.df, "p_value": chi.p_value,
        "display_p": "< 2.2e-16" if chi.p_value < 2.2e-16 else repr(chi.p_value),
    })
    w.json("marginal_odds_ratio.json", {
        "table": by_bang.to_dict(),
        "exact": {"estimate": or_exact.estimate, "lower": or_exact.lower,
                  "upper": or_exact.upper, "p_value": or_exact.p_value},
        "wald": {"estimate": or_wald.estimate, "lower": or_wald.lower,
                 "upper": or_wald.upper, "p_value": or_wald.p_value},
        "level": level,
    })

    monthly = monthly_bang_proportions(events)
    w.figure("figure_monthly_bang_rate",
             ["month", "pitches", "bangs", "proportion"],
             [[m.month, m.pitches, m.bangs, m.proportion] for m in monthly])
    players = player_bang_counts(events)
    w.figure("figure_player_bang_counts",
             ["batter_id", "batter_name", "pitches", "bangs", "proportion"],
             [[p.batter_id, p.batter_name, p.pitches, p.bangs, p.proportion]
              for p in players])

    # miss rates on off-speed swings for the most-banged batter, split by
    # bang, with exact binomial intervals
    top = max(players, key=lambda p: p.bangs)
    miss = {}
    for bang in (False, True):
        sw = [e for e in events
              if e.batter_id == top.batter_id and e.swing and e.offspeed
              and e.bang == bang]
        misses = sum(1 for e in sw if e.contact is False)
        ci = clopper_pearson(misses, len(sw), level)
        miss["bang" if bang else "no_bang"] = {
            "misses": misses, "swings": len(sw),
            "rate": misses / len(sw) if sw else None,
            "lower": ci.lower, "upper": ci.upper,
        }
    w.json("miss_rates.json",
           {"batter_id": top.batter_id, "batter_name": top.batter_name,
            "level": level, "off_speed_swings": miss})

    return {"chi_square_p": chi.p_value,
            "marginal_or": or_exact.estimate,
            "months": len(monthly), "batters": len(players)}


def _fit_swing(events):
    return fit(build_design(subset(events, "swing"), spec_swing()))


def _fit_contact(events):
    bundle = build_design(subset(events, "contact"), spec_contact())
    return fit(bundle), bundle


def _fit_ev(events):
    return fit(build_design(subset(events, "ev"), spec_ev()))


def _stage_swing(w: _Writer, model, level: float) -> dict:
    orr = odds_ratio(model, "bang", level=level)
    ci = wald_interval(model, "bang", level=level)
    sigma_b = float(model.variance_components[0].sd[0])
    _model_files(w, "swing", model, {
        "sigma_b": sigma_b,
        "bang": {"estimate": ci.estimate, "lower": ci.lower, "upper": ci.upper},
        "bang_odds_ratio": {"estimate": orr.estimate, "lower": orr.lower,
                            "upper": orr.upper, "level": orr.level},
    })
    return {"bang": ci.estimate, "sigma_b": sigma_b,
            "odds_ratio": orr.estimate}


def _stage_contact(w: _Writer, model, level: float) -> dict:
    off_or = odds_ratio(model, "bang", level=level)
    fa = linear_combo(model, {"bang": 1.0, "fastball:bang": 1.0}, level=level)
    players = player_odds_ratios(model, "bang")
    _model_files(w, "contact", model, {
        "offspeed_bang": {
            "log_odds": float(model.beta[model.term_index("bang")]),
            "odds_ratio": off_or.estimate,
            "lower": off_or.lower, "upper": off_or.upper},
        "fastball_bang": {"log_odds": fa.estimate,
                          "odds_ratio": float(np.exp(fa.estimate)),
                          "lower": fa.lower, "upper": fa.upper},
    })
    w.table("player_odds_ratios",
            ["batter_id", "batter_name", "blup", "odds_ratio"],
            [[p.player_id, p.player_name, p.blup, p.odds_ratio]
             for p in players])
    return {"offspeed_or": off_or.estimate,
            "fastball_combo": fa.estimate,
            "players": len(players)}


def _stage_ev(w: _Writer, events, model, level: float) -> dict:
    ci = wald_interval(model, "bang", level=level)
    _model_files(w, "ev", model, {
        "bang": {"estimate": ci.estimate, "lower": ci.lower,
                 "upper": ci.upper, "level": level},
    })
    cells: dict[tuple, list] = {}
    for e in subset(events, "ev"):
        cells.setdefault((e.pitch_group, e.bang), []).append(e.exit_velocity)
    w.figure("figure_ev_by_group_bang",
             ["pitch_group", "bang", "n", "mean", "sd"],
             [[g, "yes" if b else "no", len(v), float(np.mean(v)),
               float(np.std(v, ddof=1))]
              for (g, b), v in sorted(cells.items())])
    return {"bang": ci.estimate, "ci": [ci.lower, ci.upper]}


def _stage_bootstrap(w: _Writer, model, bundle, cfg: AnalysisConfig) -> dict:
    players = player_odds_ratios(model, "bang")
    top = [p.player_name for p in players[:cfg.boot_players]]
    block = next(b for b in model.bundle.blocks if b.group == "batter")
    names = dict(zip(block.levels, block.level_names))
    fixed_idx = model.term_index("bang")

    def statistic(m):
        out = {}
        fixed = float(m.beta[fixed_idx])
        effs = m.ranef("batter")
        for lvl, eff in effs.items():
            nm = names[lvl]
            out[f"or::{nm}"] = float(np.exp(fixed + eff["bang"]))
            if nm in top:
                out[f"int::{nm}"] = eff["intercept"]
                out[f"slope::{nm}"] = fixed + eff["bang"]
        return out

    results = parametric_bootstrap(model, bundle, statistic, B=cfg.boot_b,
                                   seed=cfg.seed, level=cfg.level)
    point = {p.player_name: p.odds_ratio for p in players}
    rows = []
    for p in players:
        r = results[f"or::{p.player_name}"]
        rows.append([p.player_id, p.player_name, point[p.player_name],
                     r.lower, r.upper, r.failures])
    w.table("player_odds_ratios_bootstrap",
            ["batter_id", "batter_name", "odds_ratio", "lower", "upper",
             "failed_replicates"], rows)

    dist = {nm: {"intercept": results[f"int::{nm}"],
                 "slope": results[f"slope::{nm}"]} for nm in top}
    w.figure("figure_bootstrap_distributions",
             ["player", "replicate", "intercept", "slope"],
             [[d["player"], d["replicate"], d["intercept"], d["slope"]]
              for d in bootstrap_distributions_export(dist)])

    top_name = players[0].player_name
    top_res = results[f"or::{top_name}"]
    w.json("bootstrap_summary.json", {
        "B": cfg.boot_b, "seed": cfg.seed, "level": cfg.level,
        "failures": int(top_res.failures),
        "top_player": {"name": top_name, "odds_ratio": point[top_name],
                       "lower": top_res.lower, "upper": top_res.upper},
    })
    return {"B": cfg.boot_b, "failures": int(top_res.failures),
            "top_player_interval": [top_res.lower, top_res.upper]}


def _stage_trajectory(w: _Writer, ev_model, overrides: dict | None) -> dict:
    params = FlightParams(**overrides) if overrides else FlightParams()
    bang = float(ev_model.beta[ev_model.term_index("bang")])
    base_v, angle = 100.0, 30.0
    base = carry_distance(base_v, angle, params)
    boosted = carry_distance(base_v + bang, angle, params)
    payload = {
        "exit_velocity_mph": base_v,
        "launch_angle_deg": angle,
        "bang_effect_mph": bang,
        "carry_ft": base,
        "carry_with_bang_ft": boosted,
        "extra_carry_ft": boosted - base,
        "params": {
            "drag_coefficient": params.drag_coefficient,
            "lift_coefficient": params.lift_coefficient,
            "air_density_kg_m3": params.air_density,
            "ball_mass_kg": params.ball_mass,
            "release_height_ft": params.release_height_ft,
            "step_s": params.step,
        },
    }
    w.json("trajectory.json", payload)
    w.table("trajectory_carry",
            ["exit_velocity_mph", "carry_ft", "delta_ft"],
            [[base_v, base, 0.0],
             [base_v + bang, boosted, boosted - base]])
    return {"carry_ft": base, "extra_carry_ft": boosted - base}


# ---------------------------------------------------------------------------


def run(config: AnalysisConfig) -> dict:
    """Execute the configured stages and write the report bundle.

    Returns the manifest (also written to manifest.json). Any stage
    failure raises StageError naming the stage; the output directory
    keeps a .partial marker whenever a run did not finish.
    """
    config.validate()
    stages = config.resolved_stages()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / ".partial"
    marker.write_text("run did not finish; outputs may be incomplete\n")

    data = Path(config.data) if config.data else bundled_data_path()
    schema_path = Path(config.schema) if config.schema else bundled_schema_path()
    w = _Writer(out, tuple(config.formats), config.full_precision)
    summary: dict = {}
    stage = "ingest"
    try:
        schema = SchemaConfig.from_json(schema_path)
        raw = load_csv(data, schema)
        events, report = clean(raw, schema)
        w.json("cleaning_report.json", report.to_dict())

        row_counts = {
            "raw": len(raw), "clean": len(events),
            "swing": len(subset(events, "swing")),
            "contact": len(subset(events, "contact")),
            "ev": len(subset(events, "ev")),
        }

        if "descriptive" in stages:
            stage = "descriptive"
            summary["descriptive"] = _stage_descriptive(w, events, config.level)
        if "swing" in stages:
            stage = "swing"
            summary["swing"] = _stage_swing(w, _fit_swing(events), config.level)

        contact_model = contact_bundle = None
        if "contact" in stages or "bootstrap" in stages:
            stage = "contact"
            contact_model, contact_bundle = _fit_contact(events)
        if "contact" in stages:
            stage = "contact"
            summary["contact"] = _stage_contact(w, contact_model, config.level)

        ev_model = None
        if "ev" in stages or "trajectory" in stages:
            stage = "ev"
            ev_model = _fit_ev(events)
        if "ev" in stages:
            stage = "ev"
            summary["ev"] = _stage_ev(w, events, ev_model, config.level)

        if "bootstrap" in stages:
            stage = "bootstrap"
            summary["bootstrap"] = _stage_bootstrap(
                w, contact_model, contact_bundle, config)
        if "trajectory" in stages:
            stage = "trajectory"
            summary["trajectory"] = _stage_trajectory(
                w, ev_model, config.extra.get("flight_params"))

        stage = "manifest"
        manifest = {
            "data": str(data),
            "schema": str(schema_path),
            "stages": list(stages),
            "seed": config.seed,
            "bootstrap_B": config.boot_b if "bootstrap" in stages else None,
            "level": config.level,
            "formats": list(config.formats),
            "full_precision": config.full_precision,
            "row_counts": row_counts,
            "removed": dict(report.removed),
            "files": sorted(w.written),
            "summary": summary,
            "versions": {
                "bangstats": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
        }
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except Exception as exc:
        marker.write_text(
            f"run aborted during stage {stage!r}: {exc}\n"
            f"completed files: {sorted(w.written)}\n")
        raise StageError(stage, exc) from exc
    marker.unlink()
    return manifest
