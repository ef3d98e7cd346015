"""Batted-ball carry distance from a point-mass flight model.

Fourth-order Runge-Kutta integration of planar motion with quadratic
drag and a constant-coefficient lift term standing in for backspin.
Deliberately simple: one density knob, no wind, no spin decay. The
default coefficients are calibrated so a 100 mph / 30 degree fly ball
carries about 385 feet (see scripts/calibrate_trajectory.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["FlightParams", "carry_distance", "MPH_TO_MPS", "FT_TO_M"]

MPH_TO_MPS = 0.44704
FT_TO_M = 0.3048
GRAVITY = 9.80665  # m/s^2

BALL_DIAMETER_M = 0.0737
DEFAULT_AREA = math.pi * (BALL_DIAMETER_M / 2.0) ** 2


@dataclass(frozen=True)
class FlightParams:
    """Physical constants for the flight integrator (SI units except
    release_height_ft).

    Drag and lift defaults come from scripts/calibrate_trajectory.py,
    which pins the 100 mph / 30 degree benchmark to its published carry.
    """
    drag_coefficient: float = 0.355
    lift_coefficient: float = 0.14
    air_density: float = 1.194        # kg/m^3
    ball_mass: float = 0.145          # kg
    cross_section_area: float = DEFAULT_AREA   # m^2
    release_height_ft: float = 3.0
    step: float = 0.002               # s

    def __post_init__(self):
        if self.drag_coefficient < 0 or self.lift_coefficient < 0:
            raise ValueError("aerodynamic coefficients must be >= 0")
        for label in ("air_density", "ball_mass", "cross_section_area"):
            if getattr(self, label) <= 0:
                raise ValueError(f"{label} must be positive")
        if self.release_height_ft < 0:
            raise ValueError("release height must be >= 0")
        if not 0 < self.step <= 0.01:
            raise ValueError("integration step must be in (0, 0.01] seconds")


def _acceleration(vx: float, vy: float, params: FlightParams):
    speed = math.hypot(vx, vy)
    k = params.air_density * params.cross_section_area / (2.0 * params.ball_mass)
    ax = -k * params.drag_coefficient * speed * vx \
        - k * params.lift_coefficient * speed * vy
    ay = -k * params.drag_coefficient * speed * vy \
        + k * params.lift_coefficient * speed * vx - GRAVITY
    return ax, ay


def carry_distance(exit_velocity_mph: float, launch_angle_deg: float,
                   params: FlightParams | None = None) -> float:
    """Horizontal distance in feet when the ball returns to the ground.

    The lift force acts perpendicular to the velocity (rotated toward
    the upward side), the drag force opposes it; both scale with speed
    squared. Integration stops at the ground crossing, located by
    linear interpolation inside the final step.
    """
    params = params or FlightParams()
    if not 0.0 <= exit_velocity_mph <= 125.0:
        raise ValueError(
            f"exit velocity {exit_velocity_mph} mph outside [0, 125]")
    if not 0.0 < launch_angle_deg < 90.0:
        raise ValueError(
            f"launch angle {launch_angle_deg} degrees outside (0, 90)")
    if exit_velocity_mph == 0.0:
        return 0.0

    v0 = exit_velocity_mph * MPH_TO_MPS
    angle = math.radians(launch_angle_deg)
    x, y = 0.0, params.release_height_ft * FT_TO_M
    vx, vy = v0 * math.cos(angle), v0 * math.sin(angle)
    h = params.step

    for _ in range(200_000):
        k1x, k1y = _acceleration(vx, vy, params)
        v1x, v1y = vx + 0.5 * h * k1x, vy + 0.5 * h * k1y
        k2x, k2y = _acceleration(v1x, v1y, params)
        v2x, v2y = vx + 0.5 * h * k2x, vy + 0.5 * h * k2y
        k3x, k3y = _acceleration(v2x, v2y, params)
        v3x, v3y = vx + h * k3x, vy + h * k3y
        k4x, k4y = _acceleration(v3x, v3y, params)

        dx = h * (vx + 2 * v1x + 2 * v2x + v3x) / 6.0
        dy = h * (vy + 2 * v1y + 2 * v2y + v3y) / 6.0
        nx, ny = x + dx, y + dy
        nvx = vx + h * (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0
        nvy = vy + h * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0

        if ny <= 0.0 and vy < 0.0:
            frac = y / (y - ny) if y != ny else 0.0
            return (x + frac * dx) / FT_TO_M
        x, y, vx, vy = nx, ny, nvx, nvy

    raise RuntimeError("flight integration failed to reach the ground")
