import math

import numpy as np
import pytest

from shuttlesim.control import (LateralParams, LongitudinalParams,
                                PathExhausted, PidState, VehiclePlantParams,
                                emergency_speed, heading_error,
                                integrate_dynamics, lateral_command,
                                longitudinal_command)
from shuttlesim.planning import SampledPath
from shuttlesim.world import VehicleState


def straight_path(length=50.0, step=0.1):
    xs = np.arange(0.0, length + step, step)
    xy = np.column_stack([xs, np.zeros_like(xs)])
    return SampledPath(xy=xy, s=xs.copy(), heading=np.zeros_like(xs))


class TestLongitudinal:
    def test_ramp_from_rest(self):
        p = LongitudinalParams(dt=0.1, a_nom=0.8)
        v = longitudinal_command(0.0, None, p, speed_cap=10.0)
        assert v == pytest.approx(0.08, abs=1e-12)

    def test_hold_at_reference(self):
        p = LongitudinalParams(dt=0.1)
        v = longitudinal_command(5.556, None, p, speed_cap=10.0)
        assert v == 5.556

    def test_lower_cap_clamps_immediately(self):
        # v_des never exceeds min(v_ref, cap); the plant smooths the drop
        p = LongitudinalParams(dt=0.1, a_nom=0.8)
        v = longitudinal_command(5.556, None, p, speed_cap=2.5)
        assert v == 2.5

    def test_spacing_law_substitution(self):
        # direct substitution with ds_min = 10, dt = 0.1
        p = LongitudinalParams(dt=0.1, ds_min=10.0)
        v = longitudinal_command(5.0, 30.0, p, speed_cap=10.0)
        a_expected = -25.0 / (2.0 * 20.0)
        assert a_expected == -0.625
        assert v == pytest.approx(5.0 - 0.0625, abs=1e-12)

    def test_hard_brake_inside_min_spacing(self):
        p = LongitudinalParams(dt=0.1, ds_min=8.0, a_brake_max=3.0)
        v = longitudinal_command(4.0, 7.0, p, speed_cap=10.0)
        assert v == pytest.approx(4.0 - 0.3, abs=1e-12)
        # exactly at ds_min: the raw law would divide by zero
        v = longitudinal_command(4.0, 8.0, p, speed_cap=10.0)
        assert v == pytest.approx(4.0 - 0.3, abs=1e-12)

    def test_never_negative_never_above_cap(self):
        p = LongitudinalParams(dt=0.1)
        rng = np.random.default_rng(0)
        v = 0.0
        for _ in range(500):
            gap = None if rng.uniform() < 0.5 else rng.uniform(0.0, 50.0)
            cap = rng.uniform(0.0, 6.0)
            v = longitudinal_command(v, gap, p, cap)
            assert 0.0 <= v <= min(p.v_ref, cap) + 1e-12

    def test_emergency_ramp(self):
        p = LongitudinalParams(dt=0.1, a_brake_max=3.0)
        assert emergency_speed(5.0, p) == pytest.approx(4.7)
        assert emergency_speed(0.1, p) == 0.0


class TestHeadingError:
    def test_aligned(self):
        ego = VehicleState(x=0.0, y=0.0, psi=0.0)
        assert heading_error(ego, straight_path(), 10.0) == pytest.approx(0.0)

    def test_diagonal_target(self):
        # lookahead lands at (10, 10) relative to the ego at the origin
        xs = np.linspace(0.0, 30.0, 301)
        xy = np.column_stack([xs, xs])
        s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(xy[:, 0]),
                                                      np.diff(xy[:, 1])))])
        path = SampledPath(xy=xy, s=s, heading=np.full(len(xs), math.pi / 4))
        ego = VehicleState(x=0.0, y=0.0, psi=0.0)
        dpsi = heading_error(ego, path, math.hypot(10, 10))
        assert dpsi == pytest.approx(math.pi / 4, abs=1e-6)

    def test_rotational_symmetry(self):
        ys = np.arange(0.0, 30.0, 0.1)
        path = SampledPath(xy=np.column_stack([np.zeros_like(ys), ys]),
                           s=ys.copy(),
                           heading=np.full(len(ys), math.pi / 2))
        ego = VehicleState(x=0.0, y=0.0, psi=math.pi / 2)
        assert heading_error(ego, path, 10.0) == pytest.approx(0.0, abs=1e-9)

    def test_exhausted_beyond_end(self):
        ego = VehicleState(x=60.0, y=0.0, psi=0.0)
        with pytest.raises(PathExhausted):
            heading_error(ego, straight_path(length=50.0), 5.0)

    def test_near_end_clamps(self):
        ego = VehicleState(x=49.0, y=0.0, psi=0.0)
        assert heading_error(ego, straight_path(length=50.0), 5.0) \
            == pytest.approx(0.0, abs=1e-9)


class TestLateralCommand:
    def test_zero_error(self):
        params = LateralParams(kp=1.0, ki=0.0, kd=0.0)
        df, dr = lateral_command(0.0, PidState(), params, 0.1)
        assert df == 0.0 and dr == 0.0

    def test_proportional(self):
        params = LateralParams(kp=1.0, ki=0.0, kd=0.0)
        df, dr = lateral_command(0.2, PidState(), params, 0.1)
        assert df == pytest.approx(0.2)
        assert dr == pytest.approx(-0.2)

    def test_saturation_and_mirror(self):
        params = LateralParams(kp=5.0, ki=0.0, kd=0.0, delta_max=0.3)
        df, dr = lateral_command(1.0, PidState(), params, 0.1)
        assert df == 0.3 and dr == -0.3

    def test_opposite_steer_contract(self):
        params = LateralParams()
        pid = PidState()
        rng = np.random.default_rng(1)
        for _ in range(200):
            df, dr = lateral_command(rng.uniform(-1, 1), pid, params, 0.1)
            assert dr == -df

    def test_lookahead_grows_with_speed(self):
        params = LateralParams(lookahead_base=3.0, lookahead_gain=0.8)
        assert params.lookahead(0.0) == 3.0
        assert params.lookahead(5.0) == pytest.approx(7.0)


class TestPlant:
    def test_rest_stays_at_rest(self):
        s0 = VehicleState(x=1.0, y=2.0, psi=0.3, v=0.0)
        s1 = integrate_dynamics(s0, 0.0, 0.0, 0.0, 0.1)
        assert (s1.x, s1.y, s1.psi, s1.v) == (s0.x, s0.y, s0.psi, 0.0)
        assert s1.t == pytest.approx(0.1)

    def test_first_order_speed_decay(self):
        p = VehiclePlantParams(tau_v=0.5)
        dt = 0.001
        state = VehicleState(v=5.0)
        for _ in range(int(round(1.0 / dt))):
            state = integrate_dynamics(state, 0.0, 0.0, 0.0, dt, p)
        assert state.v == pytest.approx(5.0 * math.exp(-1.0 / 0.5), rel=0.02)

    def test_all_wheel_steer_circle(self):
        # opposite steer delta and -delta: radius L / (2 tan delta)
        p = VehiclePlantParams(tau_v=1e-6, tau_delta=1e-6, wheelbase=4.5)
        delta = 0.1
        dt = 0.001
        state = VehicleState(v=3.0, delta_f=delta, delta_r=-delta)
        yaw_steps = []
        xs, ys = [], []
        prev_psi = state.psi
        for _ in range(50000):  # > one full circle at R ~ 22.4 m
            state = integrate_dynamics(state, 3.0, delta, -delta, dt, p)
            dpsi = (state.psi - prev_psi + math.pi) % (2 * math.pi) - math.pi
            yaw_steps.append(dpsi)
            prev_psi = state.psi
            xs.append(state.x)
            ys.append(state.y)
        R_ref = 4.5 / (2.0 * math.tan(delta))
        yaw_rate_ref = 3.0 * 2.0 * math.tan(delta) / 4.5
        assert np.mean(yaw_steps) / dt == pytest.approx(yaw_rate_ref,
                                                        rel=1e-6)
        # geometric radius from a full lap of points
        xs, ys = np.array(xs), np.array(ys)
        cx, cy = xs.mean(), ys.mean()
        radii = np.hypot(xs - cx, ys - cy)
        assert np.mean(radii) == pytest.approx(R_ref, rel=0.01)

    def test_psi_stays_wrapped(self):
        p = VehiclePlantParams()
        state = VehicleState(v=5.0, delta_f=0.4, delta_r=-0.4)
        for _ in range(2000):
            state = integrate_dynamics(state, 5.0, 0.4, -0.4, 0.05, p)
            assert -math.pi < state.psi <= math.pi
