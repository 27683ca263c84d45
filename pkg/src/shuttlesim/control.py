"""Motion control and the simulated plant.

Longitudinal: feed-forward desired-speed law that ramps at a nominal
acceleration when the road is clear and regulates spacing against the
nearest obstacle otherwise, with a hard-brake guard at the minimum-spacing
singularity. Lateral: heading error to a speed-scaled lookahead point on
the path, through a PID, commanding opposite front/rear steer. The plant
is an all-wheel-steer kinematic model with first-order actuator lags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .planning import SampledPath
from .world import VehicleState, wrap_angle


class PathExhausted(RuntimeError):
    pass


@dataclass
class LongitudinalParams:
    v_ref: float = 5.556  # 20 km/h
    a_nom: float = 0.8
    ds_min: float = 8.0
    dt: float = 0.1
    a_brake_max: float = 3.0


@dataclass
class LateralParams:
    lookahead_base: float = 3.0  # meters at standstill
    lookahead_gain: float = 0.8  # seconds; lookahead = base + gain * v
    kp: float = 1.2
    ki: float = 0.0
    kd: float = 0.3
    delta_max: float = 0.5

    def lookahead(self, v: float) -> float:
        return self.lookahead_base + self.lookahead_gain * max(v, 0.0)


@dataclass
class VehiclePlantParams:
    tau_v: float = 0.5
    tau_delta: float = 0.2
    wheelbase: float = 4.5
    delta_max: float = 0.5


def longitudinal_command(v_des_prev: float, gap: Optional[float],
                         params: LongitudinalParams,
                         speed_cap: float) -> float:
    """Next desired speed.

    Clear road: ramp toward min(v_ref, speed_cap) at a_nom and hold there.
    With a gap: decelerate at v^2 / (2 (gap - ds_min)), hard-braking once
    the gap reaches ds_min (the raw law diverges there), acceleration
    clamped to [-a_brake_max, +a_nom].
    """
    v_target = max(0.0, min(params.v_ref, speed_cap))
    if gap is None:
        if v_des_prev < v_target:
            v = min(v_des_prev + params.a_nom * params.dt, v_target)
        else:
            # the setpoint is never exceeded: a dropped cap clamps
            # immediately and the plant's lag supplies the smooth decay
            v = v_target
        return max(v, 0.0)
    if gap > params.ds_min:
        a_des = -(v_des_prev ** 2) / (2.0 * (gap - params.ds_min))
    else:
        a_des = -params.a_brake_max
    a_des = min(max(a_des, -params.a_brake_max), params.a_nom)
    v = max(0.0, v_des_prev + a_des * params.dt)
    return min(v, v_target)


def heading_error(ego: VehicleState, path: SampledPath,
                  lookahead: float) -> float:
    """Bearing from the ego pose to the lookahead point, minus the ego
    heading, wrapped into (-pi, pi]."""
    if len(path.xy) < 2:
        raise ValueError("path is empty")
    if lookahead <= 0:
        raise ValueError("lookahead must be positive")
    s0 = path.locate(ego.x, ego.y)
    if s0 >= path.length - 1e-9:
        end = path.xy[-1]
        tangent = path.xy[-1] - path.xy[-2]
        t_norm = np.linalg.norm(tangent)
        beyond = 0.0
        if t_norm > 1e-9:
            beyond = float((np.array([ego.x, ego.y]) - end) @ tangent) / t_norm
        if beyond > lookahead:
            raise PathExhausted("ego is past the end of the path")
    target = path.point_at(s0 + lookahead)
    dx, dy = target[0] - ego.x, target[1] - ego.y
    if math.hypot(dx, dy) < 1e-6:
        bearing = path.heading[-1]
    else:
        bearing = math.atan2(dy, dx)
    return wrap_angle(bearing - ego.psi)


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: Optional[float] = None


def lateral_command(dpsi: float, pid: PidState, params: LateralParams,
                    dt: float):
    """PID on heading error -> (front, rear) steer; rear mirrors front."""
    pid.integral += dpsi * dt
    if params.ki > 0.0:
        cap = params.delta_max / params.ki
        pid.integral = min(max(pid.integral, -cap), cap)
    deriv = 0.0
    if pid.prev_error is not None and dt > 1e-9:
        deriv = (dpsi - pid.prev_error) / dt
    pid.prev_error = dpsi
    delta = params.kp * dpsi + params.ki * pid.integral + params.kd * deriv
    delta = min(max(delta, -params.delta_max), params.delta_max)
    return delta, -delta


def integrate_dynamics(state: VehicleState, v_des: float, delta_f: float,
                       delta_r: float, dt: float,
                       params: Optional[VehiclePlantParams] = None) -> VehicleState:
    """Advance the all-wheel-steer kinematic plant by one step.

    Speed and steer track their commands through first-order lags; the pose
    integrates the standard two-axle kinematic model with lf = lr = L/2.
    """
    p = params or VehiclePlantParams()
    v = state.v + (v_des - state.v) * dt / p.tau_v
    v = max(v, 0.0)
    df_cmd = min(max(delta_f, -p.delta_max), p.delta_max)
    dr_cmd = min(max(delta_r, -p.delta_max), p.delta_max)
    df = state.delta_f + (df_cmd - state.delta_f) * dt / p.tau_delta
    dr = state.delta_r + (dr_cmd - state.delta_r) * dt / p.tau_delta

    beta = math.atan(0.5 * (math.tan(dr) + math.tan(df)))
    yaw_rate = v * math.cos(beta) * (math.tan(df) - math.tan(dr)) / p.wheelbase
    x = state.x + v * math.cos(state.psi + beta) * dt
    y = state.y + v * math.sin(state.psi + beta) * dt
    psi = wrap_angle(state.psi + yaw_rate * dt)
    return VehicleState(x=x, y=y, psi=psi, v=v, delta_f=df, delta_r=dr,
                        t=state.t + dt)


def emergency_speed(v_des_prev: float, params: LongitudinalParams) -> float:
    """Full-brake ramp used in the emergency state."""
    return max(0.0, v_des_prev - params.a_brake_max * params.dt)
