"""Node kinematics, inter-node distances, and LEO coverage windows.

Frames: ground users and UAVs live in a local Earth-tangent frame (x, y in
meters across the arena, z altitude).  LEO satellites are tracked by a single
along-orbit offset at fixed altitude; their ground track is assumed to pass
over the arena origin, so the slant range to a local node treats the offset
as displacement along local x.  All units SI.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import EARTH_RADIUS_M


class NodeKind(enum.Enum):
    GROUND_USER = "ground_user"
    UAV = "uav"
    LEO = "leo"


@dataclass
class NodeState:
    """Position/velocity/radio parameters of one network node.

    For LEO nodes ``position`` is ``[along_orbit_offset, 0, orbit_altitude]``
    and ``velocity`` is ``[orbital_speed, 0, 0]``.
    """

    kind: NodeKind
    position: np.ndarray
    velocity: np.ndarray
    tx_power: float
    antenna_gain: float = 1.0

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)
        if self.position.shape != (3,) or self.velocity.shape != (3,):
            raise ValueError("position and velocity must be 3-vectors")
        if self.kind is NodeKind.GROUND_USER and np.any(self.velocity != 0.0):
            raise ValueError("ground users do not move")
        if self.tx_power < 0.0:
            raise ValueError("tx_power must be non-negative")


@dataclass
class CoverageWindow:
    """Remaining service time of one (satellite, UAV) pair."""

    satellite_id: int
    uav_id: int
    remaining_time: float

    def __post_init__(self) -> None:
        if self.remaining_time < 0.0:
            raise ValueError("remaining_time must be non-negative")


def coverage_arc(earth_radius: float, orbit_altitude: float,
                 elevation_min: float) -> float:
    """Orbit-path length over which a satellite can serve one aerial node.

    Returns ``2 (R_E + R_S) (arccos((R_E / (R_E + R_S)) cos e) - e)`` clamped
    at zero (the bracket vanishes once the elevation mask closes the window).
    """
    if earth_radius <= 0.0 or orbit_altitude <= 0.0:
        raise ValueError("radii must be positive")
    if not 0.0 <= elevation_min < math.pi / 2.0:
        raise ValueError("elevation_min must lie in [0, pi/2)")
    ratio = earth_radius / (earth_radius + orbit_altitude)
    arg = ratio * math.cos(elevation_min)
    if not -1.0 <= arg <= 1.0:
        raise ValueError(f"arccos argument {arg} outside [-1, 1]")
    half_angle = math.acos(arg) - elevation_min
    return max(0.0, 2.0 * (earth_radius + orbit_altitude) * half_angle)


def coverage_time(arc: float, orbital_speed: float) -> float:
    """Pass duration for a coverage arc at constant orbital speed."""
    if orbital_speed <= 0.0:
        raise ValueError("orbital_speed must be positive")
    if arc < 0.0:
        raise ValueError("arc must be non-negative")
    return arc / orbital_speed


def move_uav(uav: NodeState, commanded_velocity: np.ndarray, dt: float,
             v_max: float = 5.0, z_min: float = 40.0,
             z_max: float = 60.0, xy_min: float | None = None,
             xy_max: float | None = None) -> NodeState:
    """Advance a UAV by one slot, projecting onto the feasible set.

    Commanded speed above ``v_max`` is scaled down (direction preserved) and
    the resulting altitude is clamped into ``[z_min, z_max]``; infeasible
    commands are never rejected because the controlling agent emits
    unconstrained values.  Optional ``xy_min``/``xy_max`` clamp the ground
    coordinates onto the served area so a drifting controller cannot leave
    the scenario entirely.
    """
    if uav.kind is not NodeKind.UAV:
        raise ValueError("move_uav expects a UAV node")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v = np.asarray(commanded_velocity, dtype=np.float64).copy()
    speed = float(np.linalg.norm(v))
    if speed > v_max and speed > 0.0:
        v *= v_max / speed
    pos = uav.position + v * dt
    pos[2] = min(max(pos[2], z_min), z_max)
    if xy_min is not None:
        pos[0] = max(pos[0], xy_min)
        pos[1] = max(pos[1], xy_min)
    if xy_max is not None:
        pos[0] = min(pos[0], xy_max)
        pos[1] = min(pos[1], xy_max)
    return replace(uav, position=pos, velocity=v)


def distance(a: NodeState, b: NodeState) -> float:
    """Euclidean distance in the shared frame.

    LEO-to-local links use the slant range implied by the satellite's
    along-orbit offset and altitude; the local node's altitude (tens of
    meters) still enters exactly but is negligible against the orbit.
    """
    a_leo = a.kind is NodeKind.LEO
    b_leo = b.kind is NodeKind.LEO
    if a_leo and b_leo:
        return abs(float(a.position[0] - b.position[0]))
    if a_leo or b_leo:
        sat, node = (a, b) if a_leo else (b, a)
        dx = sat.position[0] - node.position[0]
        dy = node.position[1]
        dz = sat.position[2] - node.position[2]
        return float(math.sqrt(dx * dx + dy * dy + dz * dz))
    return float(np.linalg.norm(a.position - b.position))


def advance_orbits(sats: list[NodeState], windows: list[CoverageWindow],
                   dt: float) -> tuple[list[NodeState], list[CoverageWindow]]:
    """Advance satellite offsets by one slot and run down coverage windows."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    new_sats = []
    for sat in sats:
        pos = sat.position.copy()
        pos[0] += sat.velocity[0] * dt
        new_sats.append(replace(sat, position=pos))
    new_windows = [replace(w, remaining_time=max(0.0, w.remaining_time - dt))
                   for w in windows]
    return new_sats, new_windows


def init_coverage_windows(pass_seconds: float, n_sats: int, n_uavs: int,
                          spacing_min: float, spacing_max: float,
                          orbital_speed: float, rng: np.random.Generator,
                          random_phase: bool = True,
                          phase_fraction: float = 1.0,
                          ) -> tuple[np.ndarray, list[CoverageWindow]]:
    """Stagger per-satellite windows by random inter-satellite spacing.

    The lead satellite has already flown ``phase`` seconds of its pass
    (uniform over ``phase_fraction`` of the pass when ``random_phase``, so a
    fraction of the lead window always remains); each trailing satellite is
    a random 100-500 km behind, so initial remaining times differ by
    spacing / orbital_speed.  Returns the satellites' elapsed pass times and
    one window per (satellite, UAV) pair.
    """
    phase = float(rng.uniform(0.0, phase_fraction * pass_seconds)) \
        if random_phase else 0.0
    spacings = rng.uniform(spacing_min, spacing_max, size=max(0, n_sats - 1))
    elapsed = np.empty(n_sats)
    elapsed[0] = phase
    for i in range(1, n_sats):
        elapsed[i] = elapsed[i - 1] + spacings[i - 1] / orbital_speed
    remaining = np.maximum(0.0, pass_seconds - elapsed)
    windows = [CoverageWindow(satellite_id=n, uav_id=m,
                              remaining_time=float(remaining[n]))
               for n in range(n_sats) for m in range(n_uavs)]
    return elapsed, windows


def sat_offset_from_elapsed(elapsed: float, pass_seconds: float,
                            orbital_speed: float) -> float:
    """Along-orbit offset relative to the arena zenith.

    Mid-pass corresponds to zenith (offset zero); the offset is negative while
    approaching and positive after, giving the longest slant ranges at the
    window edges.
    """
    return float((elapsed - pass_seconds / 2.0) * orbital_speed)


def default_pass_seconds(earth_radius: float = EARTH_RADIUS_M,
                         orbit_altitude: float = 800e3,
                         elevation_min: float = math.radians(40.0),
                         orbital_speed: float = 7800.0) -> float:
    return coverage_time(coverage_arc(earth_radius, orbit_altitude,
                                      elevation_min), orbital_speed)
