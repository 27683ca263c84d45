import math

import numpy as np
import pytest

from shuttlesim.world import (ActorKind, EmptyMapError, HDMap, ObstacleActor,
                              OutOfRangeError, SRecord, VehicleState, Zone,
                              make_loop_map, make_straight_map, rect_distance,
                              wrap_angle)

from conftest import dense_project_oracle


class TestWrapAngle:
    def test_range(self):
        for a in np.linspace(-12.0, 12.0, 400):
            w = wrap_angle(a)
            assert -math.pi < w <= math.pi

    def test_pi_maps_to_pi(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == math.pi


class TestVehicleState:
    def test_psi_normalized(self):
        v = VehicleState(psi=3 * math.pi)
        assert -math.pi < v.psi <= math.pi

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            VehicleState(v=-0.1)


class TestObstacleActor:
    def test_kind_defaults(self):
        a = ObstacleActor(id=1, kind=ActorKind.GOOSE, x=0, y=0)
        assert a.length > 0 and a.width > 0 and a.height > 0
        assert a.rcs == -12.0

    def test_heading_follows_velocity(self):
        a = ObstacleActor(id=1, kind=ActorKind.VEHICLE, x=0, y=0,
                          vx=0.0, vy=2.0)
        assert a.heading == pytest.approx(math.pi / 2)


class TestProjectToS:
    def test_query_matches_dense_oracle(self, straight_map):
        s, d, h = straight_map.project_to_s(30.0, 2.0)
        s_ref, dist_ref = dense_project_oracle(straight_map, 30.0, 2.0)
        assert s == pytest.approx(30.0, abs=1e-9)
        assert s == pytest.approx(s_ref, abs=straight_map.ds / 2)
        assert d == pytest.approx(2.0, abs=1e-9)
        assert h == pytest.approx(0.0, abs=1e-9)

    def test_first_record_identity(self, straight_map):
        s, d, _ = straight_map.project_to_s(0.0, 0.0)
        assert s == 0.0
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_mirror_symmetry(self, straight_map):
        s, d, _ = straight_map.project_to_s(30.0, -2.0)
        assert s == pytest.approx(30.0, abs=1e-9)
        assert d == pytest.approx(-2.0, abs=1e-9)

    def test_empty_map(self):
        with pytest.raises(EmptyMapError):
            HDMap([])

    def test_random_queries_against_oracle(self, default_loop):
        rng = np.random.default_rng(7)
        for _ in range(60):
            x = rng.uniform(-80, 180)
            y = rng.uniform(-40, 160)
            s, d, _ = default_loop.project_to_s(x, y)
            s_ref, dist_ref = dense_project_oracle(default_loop, x, y)
            ds_gap = abs(s - s_ref)
            if default_loop.loop:
                ds_gap = min(ds_gap, default_loop.s_max - ds_gap)
            assert ds_gap <= default_loop.ds / 2 + 0.01
            assert abs(abs(d) - dist_ref) <= 0.01

    def test_round_trip_centerline(self, default_loop):
        for s in np.linspace(0.0, default_loop.s_max - 1e-6, 97):
            x, y = default_loop.point_at(float(s), 0.0)
            s2, d2, _ = default_loop.project_to_s(x, y)
            gap = abs(s2 - s)
            gap = min(gap, default_loop.s_max - gap)
            assert gap <= default_loop.ds / 2
            assert abs(d2) <= 1e-6

    def test_project_many_matches_scalar(self, default_loop):
        rng = np.random.default_rng(3)
        pts = np.column_stack([rng.uniform(-50, 150, 200),
                               rng.uniform(-30, 150, 200)])
        s_arr, d_arr = default_loop.project_many(pts)
        for i in range(len(pts)):
            s, d, _ = default_loop.project_to_s(pts[i, 0], pts[i, 1])
            gap = abs(s - s_arr[i])
            gap = min(gap, default_loop.s_max - gap)
            assert gap <= 1e-6
            assert d == pytest.approx(d_arr[i], abs=1e-9)


class TestQueryRecord:
    def test_exact_record(self, straight_map):
        r = straight_map.query_record(30.0)
        assert r.cx == pytest.approx(30.0)
        assert r.right_curb_offset == pytest.approx(3.5)

    def test_interpolated_offsets(self):
        recs = [
            SRecord(s=0.0, cx=0.0, cy=0.0, heading=0.0,
                    right_curb_offset=3.0, left_bound_offset=2.0),
            SRecord(s=1.0, cx=1.0, cy=0.0, heading=0.0,
                    right_curb_offset=4.0, left_bound_offset=2.0),
        ]
        m = HDMap(recs)
        r = m.query_record(0.5)
        assert r.right_curb_offset == pytest.approx(3.5)

    def test_s_max_returns_last(self, straight_map):
        r = straight_map.query_record(straight_map.s_max)
        assert r.cx == pytest.approx(100.0)

    def test_out_of_range(self, straight_map):
        with pytest.raises(OutOfRangeError):
            straight_map.query_record(-1.0)
        with pytest.raises(OutOfRangeError):
            straight_map.query_record(straight_map.s_max + 1.0)


class TestZones:
    def test_distance_ahead(self, zoned_map):
        d = zoned_map.distance_to_next_zone(30.0, Zone.BUS_STOP)
        assert d == pytest.approx(20.0)

    def test_inside_zone(self, zoned_map):
        assert zoned_map.distance_to_next_zone(60.0, Zone.BUS_STOP) == 0.0

    def test_absent(self, straight_map):
        assert straight_map.distance_to_next_zone(
            0.0, Zone.INTERSECTION_BOX) is None

    def test_monotone_decrease(self, zoned_map):
        prev = None
        for s in np.arange(10.0, 49.0, 0.5):
            d = zoned_map.distance_to_next_zone(float(s), Zone.BUS_STOP)
            if prev is not None:
                assert d == pytest.approx(prev - 0.5, abs=1e-9)
            prev = d

    def test_zone_id_invariant(self):
        with pytest.raises(ValueError):
            SRecord(s=0, cx=0, cy=0, heading=0, right_curb_offset=3,
                    left_bound_offset=3, zone=Zone.BUS_STOP, zone_id=None)
        with pytest.raises(ValueError):
            SRecord(s=0, cx=0, cy=0, heading=0, right_curb_offset=3,
                    left_bound_offset=3, zone=Zone.NORMAL, zone_id=4)


class TestLoopMaps:
    def test_loop_detected(self, default_loop):
        assert default_loop.loop
        assert default_loop.s_max == pytest.approx(
            default_loop.s[-1] + default_loop.ds)

    def test_zone_wraps(self):
        zones = [(5.0, 10.0, Zone.BUS_STOP, 1)]
        m = make_loop_map(straight=40.0, radius=20.0, ds=0.5, zones=zones)
        d = m.distance_to_next_zone(m.s_max - 10.0, Zone.BUS_STOP)
        assert d == pytest.approx(15.0, abs=0.6)

    def test_open_map_not_loop(self, straight_map):
        assert not straight_map.loop


class TestMapValidation:
    def test_uneven_spacing_rejected(self):
        recs = [SRecord(s, float(s), 0.0, 0.0, 3.0, 3.0)
                for s in (0.0, 1.0, 2.5)]
        with pytest.raises(ValueError):
            HDMap(recs)

    def test_discontinuous_centerline_rejected(self):
        recs = [
            SRecord(0.0, 0.0, 0.0, 0.0, 3.0, 3.0),
            SRecord(1.0, 5.0, 0.0, 0.0, 3.0, 3.0),
        ]
        with pytest.raises(ValueError):
            HDMap(recs)


class TestRectDistance:
    def test_separated(self):
        a = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        b = a + np.array([3.0, 0.0])
        assert rect_distance(a, b) == pytest.approx(2.0)

    def test_overlap(self):
        a = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], dtype=float)
        b = a + np.array([1.0, 1.0])
        assert rect_distance(a, b) == 0.0
