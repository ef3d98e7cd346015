"""Shared fixtures: a small hand-written raw CSV and its cleaned events."""

from __future__ import annotations

import textwrap
from datetime import date

import pytest

from bangstats.ingest import PitchEvent, SchemaConfig, clean, load_csv

RAW_HEADER = ("pitch_id,game_pk,game_date,batter_id,batter_name,pitcher_id,"
              "pitcher_name,pitch_group,called_strike_prob,balls,strikes,"
              "bangs,description,launch_speed")

# 12 clean rows + 6 dirty ones exercising every cleaning rule once.
FIXTURE_CSV = RAW_HEADER + "\n" + textwrap.dedent("""\
    p1,490100,2017-04-03,1001,Alpha,2001,Karl,FA,0.90,0,0,0,called_strike,
    p2,490100,2017-04-03,1001,Alpha,2001,Karl,FA,0.15,0,1,0,ball,
    p3,490100,2017-04-03,1001,Alpha,2001,Karl,SL,0.40,1,1,2,swinging_strike,
    p4,490100,2017-04-03,1002,Bravo,2001,Karl,CH,0.55,0,0,1,hit_into_play,88.1
    p5,490100,2017-04-03,1002,Bravo,2001,Karl,CU,0.35,0,1,0,foul,
    p6,490100,2017-04-03,1002,Bravo,2002,Lars,FA,0.72,1,0,0,hit_into_play_no_out,102.5
    p7,490101,2017-05-10,1001,Alpha,2002,Lars,FA,0.66,2,1,1,foul_tip,
    p8,490101,2017-05-10,1001,Alpha,2002,Lars,SL,0.28,3,2,0,ball,
    p9,490101,2017-05-10,1003,Chase,2002,Lars,CH,0.47,0,2,1,swinging_strike_blocked,
    p10,490101,2017-05-10,1003,Chase,2002,Lars,FA,0.81,1,2,0,hit_into_play_score,95.0
    p11,490101,2017-06-20,1003,Chase,2003,Milo,CU,0.52,2,0,0,called_strike,
    p12,490101,2017-06-20,1002,Bravo,2003,Milo,FA,0.61,0,0,0,blocked_ball,
    ,490101,2017-06-20,1002,Bravo,2003,Milo,FA,0.61,0,0,0,ball,
    p14,490101,2017-06-20,1002,Bravo,2003,Milo,FA,0.61,0,0,0,foul_bunt,
    p15,490101,2017-06-20,1002,Bravo,2003,Milo,XX,0.61,0,0,0,ball,
    p16,490101,2017-06-20,1002,Bravo,2003,Milo,FA,,0,0,0,ball,
    p17,490101,2017-06-20,1002,Bravo,2003,Milo,FA,0.61,4,0,0,ball,
    p18,490101,2017-06-20,1002,Bravo,2003,Milo,FA,0.61,0,0,0,intent_ball,
""")


@pytest.fixture(scope="session")
def fixture_csv_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "fixture.csv"
    path.write_text(FIXTURE_CSV)
    return path


@pytest.fixture(scope="session")
def fixture_records(fixture_csv_path):
    return load_csv(fixture_csv_path)


@pytest.fixture(scope="session")
def fixture_events(fixture_records):
    events, _ = clean(fixture_records, SchemaConfig.default())
    return events


def make_event(**overrides) -> PitchEvent:
    base = dict(
        game_id="490100", game_date=date(2017, 4, 3), batter_id=1001,
        batter_name="Alpha", pitcher_id=2001, pitcher_name="Karl",
        pitch_group="FA", csp=0.5, balls=0, strikes=0, bang=False,
        swing=False, contact=None, exit_velocity=None,
        description="called_strike",
    )
    base.update(overrides)
    return PitchEvent(**base)
