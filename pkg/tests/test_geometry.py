import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saginfl.geometry import (CoverageWindow, NodeKind, NodeState,
                              advance_orbits, coverage_arc, coverage_time,
                              distance, init_coverage_windows, move_uav)

R_E = 6_371_000.0
R_S = 800_000.0
ELEV_40 = math.radians(40.0)

# frozen from a 50-digit mpmath evaluation of the closed form
ARC_REFERENCE = 1779913.2981293463631


def make_uav(pos, vel=(0.0, 0.0, 0.0)):
    return NodeState(kind=NodeKind.UAV, position=np.array(pos, dtype=float),
                     velocity=np.array(vel, dtype=float), tx_power=1.0)


def make_user(pos):
    return NodeState(kind=NodeKind.GROUND_USER,
                     position=np.array(pos, dtype=float),
                     velocity=np.zeros(3), tx_power=0.1)


def make_leo(offset, alt=R_S, speed=7800.0):
    return NodeState(kind=NodeKind.LEO,
                     position=np.array([offset, 0.0, alt]),
                     velocity=np.array([speed, 0.0, 0.0]), tx_power=2.0)


class TestCoverageArc:
    def test_zero_altitude_limit(self):
        # the arc shrinks like sqrt(R_S); 1e-9 m altitude leaves < 1 m of arc
        assert coverage_arc(R_E, 1e-9, 0.0) < 1.0
        assert coverage_arc(R_E, 1e-3, 0.0) < coverage_arc(R_E, 1.0, 0.0)

    def test_reference_value(self):
        arc = coverage_arc(R_E, R_S, ELEV_40)
        assert arc == pytest.approx(ARC_REFERENCE, rel=1e-9)

    def test_fixed_point_elevation_gives_zero(self):
        # solve arccos(ratio*cos(e)) = e by bisection
        ratio = R_E / (R_E + R_S)
        lo, hi = 0.0, math.pi / 2 - 1e-9
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if math.acos(ratio * math.cos(mid)) - mid > 0:
                lo = mid
            else:
                hi = mid
        assert coverage_arc(R_E, R_S, lo) == pytest.approx(0.0, abs=1e-2)

    def test_monotone_decreasing_in_elevation(self):
        elevations = np.linspace(0.0, math.pi / 2 - 0.05, 30)
        arcs = [coverage_arc(R_E, R_S, e) for e in elevations]
        assert all(a >= b - 1e-9 for a, b in zip(arcs, arcs[1:]))

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            coverage_arc(-1.0, R_S, 0.1)
        with pytest.raises(ValueError):
            coverage_arc(R_E, R_S, math.pi / 2)


class TestCoverageTime:
    def test_zero_arc(self):
        assert coverage_time(0.0, 7800.0) == 0.0

    def test_unit_ratio(self):
        assert coverage_time(7800.0, 7800.0) == 1.0

    def test_reference_band(self):
        t = coverage_time(coverage_arc(R_E, R_S, ELEV_40), 7800.0)
        assert 220.0 <= t <= 235.0

    def test_rejects_zero_speed(self):
        with pytest.raises(ValueError):
            coverage_time(1.0, 0.0)


class TestMoveUav:
    def test_zero_velocity_is_idempotent(self):
        uav = make_uav([10.0, 20.0, 50.0])
        moved = move_uav(uav, np.zeros(3), dt=1.0)
        assert np.allclose(moved.position, uav.position)

    def test_speed_clamped_preserving_direction(self):
        uav = make_uav([0.0, 0.0, 50.0])
        moved = move_uav(uav, np.array([10.0, 0.0, 0.0]), dt=1.0, v_max=5.0)
        assert np.allclose(moved.position, [5.0, 0.0, 50.0])

    def test_altitude_floor(self):
        uav = make_uav([0.0, 0.0, 41.0])
        moved = move_uav(uav, np.array([0.0, 0.0, -2.0]), dt=1.0,
                         z_min=40.0, z_max=60.0)
        assert moved.position[2] == pytest.approx(40.0)

    @given(vx=st.floats(-50, 50), vy=st.floats(-50, 50),
           vz=st.floats(-50, 50), z0=st.floats(40, 60))
    @settings(max_examples=200, deadline=None)
    def test_never_violates_box_or_speed(self, vx, vy, vz, z0):
        uav = make_uav([0.0, 0.0, z0])
        moved = move_uav(uav, np.array([vx, vy, vz]), dt=1.0,
                         v_max=5.0, z_min=40.0, z_max=60.0)
        assert np.linalg.norm(moved.velocity) <= 5.0 + 1e-9
        assert 40.0 <= moved.position[2] <= 60.0


class TestDistance:
    def test_coincident(self):
        a = make_user([1.0, 2.0, 0.0])
        assert distance(a, a) == 0.0

    def test_pythagorean(self):
        a = make_user([0.0, 0.0, 0.0])
        b = make_uav([3.0, 4.0, 0.0])
        assert distance(a, b) == pytest.approx(5.0)

    def test_leo_zenith_is_orbit_altitude(self):
        uav = make_uav([0.0, 0.0, 0.0])
        sat = make_leo(0.0)
        assert distance(sat, uav) == pytest.approx(R_S)
        assert distance(uav, sat) == pytest.approx(R_S)


class TestAdvanceOrbits:
    def test_offsets_advance_and_windows_floor(self):
        sats = [make_leo(0.0)]
        windows = [CoverageWindow(0, 0, 0.4)]
        sats2, windows2 = advance_orbits(sats, windows, dt=1.0)
        assert sats2[0].position[0] == pytest.approx(7800.0)
        assert windows2[0].remaining_time == 0.0

    def test_initial_windows_staggered_by_spacing(self):
        rng = np.random.default_rng(7)
        pass_s = coverage_time(coverage_arc(R_E, R_S, ELEV_40), 7800.0)
        elapsed, windows = init_coverage_windows(
            pass_s, n_sats=5, n_uavs=1, spacing_min=100e3, spacing_max=500e3,
            orbital_speed=7800.0, rng=rng, random_phase=False)
        remaining = [w.remaining_time for w in windows]
        assert remaining[0] == pytest.approx(pass_s)
        gaps = np.diff(elapsed)
        assert np.all(gaps >= 100e3 / 7800.0 - 1e-9)
        assert np.all(gaps <= 500e3 / 7800.0 + 1e-9)
        for i in range(1, 5):
            expect = max(0.0, pass_s - elapsed[i])
            assert remaining[i] == pytest.approx(expect)
