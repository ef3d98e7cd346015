"""The three shipped model specs and their designs on the bundled data."""

import numpy as np
import pytest

from bangstats import bundled_data_path, bundled_schema_path
from bangstats.glmm import Family, ModelSpec, build_design
from bangstats.ingest import SchemaConfig, clean, load_csv, subset
from bangstats.models import COUNT_LEVELS, spec_contact, spec_ev, spec_swing

SWING_LABELS = (
    "intercept", "csp", "fastball",
    "count:0-1", "count:0-2", "count:1-0", "count:1-1", "count:1-2",
    "count:2-0", "count:2-1", "count:2-2", "count:3-0", "count:3-1",
    "count:3-2", "bang",
)


@pytest.fixture(scope="module")
def bundled_events():
    schema = SchemaConfig.from_json(bundled_schema_path())
    records = load_csv(bundled_data_path(), schema)
    events, _ = clean(records, schema)
    return events


def test_count_levels_cover_every_live_count():
    assert len(COUNT_LEVELS) == 12
    assert COUNT_LEVELS[0] == "0-0"
    assert "3-2" in COUNT_LEVELS and "4-0" not in COUNT_LEVELS


class TestSwingSpec:
    def test_fifteen_fixed_terms_in_order(self, bundled_events):
        bundle = build_design(subset(bundled_events, "swing"), spec_swing())
        assert bundle.x_labels == SWING_LABELS
        assert len(bundle.x_labels) == 15

    def test_design_covers_every_clean_pitch(self, bundled_events):
        bundle = build_design(subset(bundled_events, "swing"), spec_swing())
        assert bundle.n == 8201

    def test_single_bang_slope_per_batter(self):
        spec = spec_swing()
        assert len(spec.random) == 1
        term = spec.random[0]
        assert term.group == "batter"
        assert term.effects == ("bang",)

    def test_round_trips_through_json(self, tmp_path):
        path = tmp_path / "swing.json"
        spec_swing().to_json(path)
        assert ModelSpec.from_json(path) == spec_swing()


class TestContactSpec:
    def test_five_fixed_terms_in_order(self, bundled_events):
        bundle = build_design(subset(bundled_events, "contact"), spec_contact())
        assert bundle.x_labels == ("intercept", "csp", "fastball", "bang",
                                   "fastball:bang")

    def test_design_has_contact_subset_rows(self, bundled_events):
        bundle = build_design(subset(bundled_events, "contact"), spec_contact())
        assert bundle.n == 3725

    def test_interaction_column_is_product(self, bundled_events):
        bundle = build_design(subset(bundled_events, "contact"), spec_contact())
        fb = bundle.X[:, bundle.x_labels.index("fastball")]
        bang = bundle.X[:, bundle.x_labels.index("bang")]
        inter = bundle.X[:, bundle.x_labels.index("fastball:bang")]
        assert np.array_equal(inter, fb * bang)

    def test_correlated_batter_block(self):
        spec = spec_contact()
        by_group = {t.group: t for t in spec.random}
        assert by_group["pitcher"].effects == ("intercept",)
        assert by_group["batter"].effects == ("intercept", "bang")
        assert by_group["batter"].correlated

    def test_round_trips_through_json(self, tmp_path):
        path = tmp_path / "contact.json"
        spec_contact().to_json(path)
        assert ModelSpec.from_json(path) == spec_contact()


class TestEvSpec:
    def test_gaussian_identity_four_terms(self, bundled_events):
        spec = spec_ev()
        assert spec.family is Family.GAUSSIAN_IDENTITY
        bundle = build_design(subset(bundled_events, "ev"), spec)
        assert bundle.x_labels == ("intercept", "csp", "fastball", "bang")

    def test_design_has_ev_subset_rows(self, bundled_events):
        bundle = build_design(subset(bundled_events, "ev"), spec_ev())
        assert bundle.n == 2272

    def test_random_intercepts_only(self):
        spec = spec_ev()
        assert [(t.group, t.effects) for t in spec.random] == [
            ("pitcher", ("intercept",)), ("batter", ("intercept",))]

    def test_round_trips_through_json(self, tmp_path):
        path = tmp_path / "ev.json"
        spec_ev().to_json(path)
        assert ModelSpec.from_json(path) == spec_ev()


class TestBundledCounts:
    def test_clean_row_count(self, bundled_events):
        assert len(bundled_events) == 8201

    def test_subset_sizes(self, bundled_events):
        assert len(subset(bundled_events, "swing")) == 8201
        assert len(subset(bundled_events, "contact")) == 3725
        assert len(subset(bundled_events, "ev")) == 2272

    def test_removed_rows_are_localized_by_rule(self):
        schema = SchemaConfig.from_json(bundled_schema_path())
        records = load_csv(bundled_data_path(), schema)
        _, report = clean(records, schema)
        assert report.input_rows == 8274
        assert report.output_rows == 8201
        assert report.total_removed == 73
        assert all(v >= 0 for v in report.removed.values())
        assert sum(report.removed.values()) == 73
