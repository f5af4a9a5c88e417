"""Passing-event geometry and observation-space transforms.

A passing event is described in a perpendicular straight-line frame: the
crossing line sits at longitudinal coordinate 0 and the vehicle path at
lateral coordinate 0.  The vehicle approaches along the longitudinal
axis while the pedestrian walks across it.

Model space is the four-vector (1/R, v, v_p, 1/T_Adv): inverse range to
the crossing line, vehicle speed, walk speed, and inverse time
advantage.  Inverting R and T_Adv compresses far-away, low-interaction
states toward zero so the mixture concentrates resolution on close
interactions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

__all__ = [
    "TtcConvention",
    "Kinematics",
    "ObservationVector",
    "RecoveredState",
    "time_advantage",
    "to_observation",
    "from_observation",
    "OBS_DIM",
    "OBS_INV_RANGE",
    "OBS_VEHICLE_SPEED",
    "OBS_WALK_SPEED",
    "OBS_INV_TIME_ADVANTAGE",
    "OBS_COLUMNS",
]

OBS_DIM = 4
OBS_INV_RANGE = 0
OBS_VEHICLE_SPEED = 1
OBS_WALK_SPEED = 2
OBS_INV_TIME_ADVANTAGE = 3

# Column labels used by every observation file the package reads or writes.
OBS_COLUMNS = ("inv_R", "v", "v_p", "inv_T_adv")


class TtcConvention(Enum):
    """How time-to-collision is formed from vehicle state.

    DISTANCE_OVER_SPEED is the plain kinematic estimate R / v assuming
    the vehicle holds its current speed.  Alternative conventions
    (e.g. acceleration-aware) can be added as new members without
    touching call sites.
    """

    DISTANCE_OVER_SPEED = "distance_over_speed"


@dataclass(frozen=True)
class Kinematics:
    """Instantaneous state of one vehicle-pedestrian pair.

    Attributes:
        longitudinal_gap: metres from the vehicle front to the crossing
            line; positive while approaching, negative once past.
        lateral_gap: metres the pedestrian still has to walk to reach
            the vehicle path line (never negative).
        vehicle_speed: vehicle speed in m/s (never negative).
        walk_speed: pedestrian speed in m/s (never negative).
    """

    longitudinal_gap: float
    lateral_gap: float
    vehicle_speed: float
    walk_speed: float

    def __post_init__(self) -> None:
        for name in ("longitudinal_gap", "lateral_gap", "vehicle_speed", "walk_speed"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.lateral_gap < 0:
            raise ValueError(f"lateral_gap must be >= 0, got {self.lateral_gap}")
        if self.vehicle_speed < 0:
            raise ValueError(f"vehicle_speed must be >= 0, got {self.vehicle_speed}")
        if self.walk_speed < 0:
            raise ValueError(f"walk_speed must be >= 0, got {self.walk_speed}")


@dataclass(frozen=True)
class ObservationVector:
    """One row of model space: (1/R, v, v_p, 1/T_Adv), all positive and finite."""

    inv_range: float
    vehicle_speed: float
    walk_speed: float
    inv_time_advantage: float

    def __post_init__(self) -> None:
        for name in ("inv_range", "vehicle_speed", "walk_speed", "inv_time_advantage"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    def as_array(self) -> np.ndarray:
        """Return the observation as a length-4 float array in canonical order."""
        return np.array(
            [self.inv_range, self.vehicle_speed, self.walk_speed, self.inv_time_advantage],
            dtype=float,
        )


class RecoveredState(NamedTuple):
    """Quantities recoverable from an observation (lateral gap is not)."""

    longitudinal_gap: float
    vehicle_speed: float
    walk_speed: float
    time_advantage: float


def time_advantage(
    kin: Kinematics,
    convention: TtcConvention = TtcConvention.DISTANCE_OVER_SPEED,
) -> float:
    """Absolute gap between vehicle and pedestrian arrival times at the conflict point.

    T_Adv = |TTC - L / v_p| where TTC follows ``convention``.  Small
    values mean the two road users reach the shared zone nearly
    simultaneously; the measure is symmetric in who arrives first.

    Raises:
        ZeroDivisionError: if vehicle_speed or walk_speed is zero; the
            caller decides the fallback for a stopped participant.
    """
    if kin.vehicle_speed == 0.0:
        raise ZeroDivisionError("time_advantage undefined for a stopped vehicle")
    if kin.walk_speed == 0.0:
        raise ZeroDivisionError("time_advantage undefined for a stopped pedestrian")
    if convention is TtcConvention.DISTANCE_OVER_SPEED:
        ttc = kin.longitudinal_gap / kin.vehicle_speed
    else:  # pragma: no cover - single-member enum guards future additions
        raise ValueError(f"unsupported TTC convention: {convention!r}")
    return abs(ttc - kin.lateral_gap / kin.walk_speed)


def to_observation(
    kin: Kinematics,
    convention: TtcConvention = TtcConvention.DISTANCE_OVER_SPEED,
) -> ObservationVector:
    """Map a kinematic state to model space.

    Rejects states whose observation is undefined: nonpositive range,
    vehicle speed, or walk speed, and zero time advantage (an exact
    arrival tie has no finite inverse).
    """
    if kin.longitudinal_gap <= 0:
        raise ValueError(f"range must be positive, got {kin.longitudinal_gap}")
    if kin.vehicle_speed <= 0:
        raise ValueError(f"vehicle speed must be positive, got {kin.vehicle_speed}")
    if kin.walk_speed <= 0:
        raise ValueError(f"walk speed must be positive, got {kin.walk_speed}")
    adv = time_advantage(kin, convention)
    if adv == 0.0:
        raise ValueError("time advantage is zero; observation undefined")
    return ObservationVector(
        inv_range=1.0 / kin.longitudinal_gap,
        vehicle_speed=kin.vehicle_speed,
        walk_speed=kin.walk_speed,
        inv_time_advantage=1.0 / adv,
    )


def from_observation(obs: ObservationVector) -> RecoveredState:
    """Invert the observation transform where possible.

    Range and time advantage come back as reciprocals; the lateral gap
    cannot be recovered because the time-advantage magnitude discards
    the arrival order.
    """
    return RecoveredState(
        longitudinal_gap=1.0 / obs.inv_range,
        vehicle_speed=obs.vehicle_speed,
        walk_speed=obs.walk_speed,
        time_advantage=1.0 / obs.inv_time_advantage,
    )
