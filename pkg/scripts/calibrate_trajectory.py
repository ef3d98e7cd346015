#!/usr/bin/env python3
"""Calibrate the flight-model drag and lift coefficients.

Grid-searches (Cd, Cl) around textbook baseball values so that the
benchmark fly ball (100 mph, 30 degrees) carries 385.3 feet, breaking
ties toward an accurate marginal effect of +2.386 mph (target +12.6 ft)
and then toward the nominal pair (0.33, 0.20). Run from the repo root:

    python3 scripts/calibrate_trajectory.py

Chosen values are frozen as FlightParams defaults in
src/bangstats/trajectory.py. Last run selected Cd=0.355, Cl=0.140
(carry 385.36 ft, marginal effect 11.57 ft).
"""

from bangstats.trajectory import FlightParams, carry_distance

TARGET_CARRY_FT = 385.3
TARGET_DELTA_FT = 12.6
BENCH_EV, BENCH_EV_PLUS, BENCH_ANGLE = 100.0, 102.386, 30.0


def evaluate(cd: float, cl: float) -> tuple[float, float]:
    p = FlightParams(drag_coefficient=cd, lift_coefficient=cl)
    d = carry_distance(BENCH_EV, BENCH_ANGLE, p)
    d_plus = carry_distance(BENCH_EV_PLUS, BENCH_ANGLE, p)
    return d, d_plus - d


def main() -> None:
    rows = []
    for i in range(16):
        for j in range(16):
            cd = 0.33 + 0.005 * i
            cl = 0.14 + 0.005 * j
            d, delta = evaluate(cd, cl)
            rows.append((abs(d - TARGET_CARRY_FT),
                         abs(delta - TARGET_DELTA_FT), cd, cl, d, delta))

    close = [r for r in rows if r[0] < 0.5]
    close.sort(key=lambda r: (r[1], abs(r[2] - 0.33) + abs(r[3] - 0.20)))
    for miss_d, miss_delta, cd, cl, d, delta in close[:5]:
        print(f"Cd={cd:.3f} Cl={cl:.3f}  carry={d:7.2f} ft  "
              f"delta={delta:5.2f} ft")
    _, _, cd, cl, d, delta = close[0]
    print(f"\nselected: Cd={cd:.3f} Cl={cl:.3f} "
          f"(carry {d:.2f} ft, marginal effect {delta:.2f} ft)")

    defaults = FlightParams()
    if (round(defaults.drag_coefficient, 3) != round(cd, 3)
            or round(defaults.lift_coefficient, 3) != round(cl, 3)):
        print("NOTE: differs from the frozen FlightParams defaults "
              f"(Cd={defaults.drag_coefficient}, "
              f"Cl={defaults.lift_coefficient}); update trajectory.py "
              "if the model changed.")


if __name__ == "__main__":
    main()
