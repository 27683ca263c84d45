"""Pose estimation: RTK-grade GNSS fixes, wheel/yaw-rate dead reckoning
through outages, and weighted least-squares corrections against map
landmarks. Emits a status signal that can demand a safe stop when the
estimate degrades too far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .scenario import WeatherSpec
from .world import HDMap, Landmark, LandmarkKind, VehicleState, wrap_angle


class LocMode(Enum):
    GNSS = "gnss"
    DEAD_RECKONING = "dead_reckoning"
    LANDMARK_CORRECTED = "landmark_corrected"
    LOST = "lost"


class LocStatus(Enum):
    NOMINAL = "nominal"
    DEGRADED = "degraded"
    DEMAND_SAFE_STOP = "demand_safe_stop"


@dataclass
class LocalizationConfig:
    gnss_pos_sigma: float = 0.05
    gnss_psi_sigma: float = 0.005
    process_q_xy: float = 0.04  # m^2 per second
    process_q_psi: float = 0.001  # rad^2 per second
    range_sigma: float = 0.2
    bearing_sigma: float = 0.01
    plane_sigma: float = 0.2
    landmark_range: float = 60.0
    cov_trace_limit: float = 1.0  # x+y variance sum (m^2)
    outage_limit_s: float = 30.0
    # odometry error model
    odo_v_bias: float = 0.02
    odo_v_sigma: float = 0.03
    odo_psi_bias: float = 0.002
    odo_psi_sigma: float = 0.01


@dataclass
class PoseEstimate:
    x: float
    y: float
    psi: float
    cov: np.ndarray
    mode: LocMode

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)
        self.psi = wrap_angle(self.psi)

    def position_variance(self) -> float:
        return float(self.cov[0, 0] + self.cov[1, 1])

    def copy(self) -> "PoseEstimate":
        return PoseEstimate(self.x, self.y, self.psi, self.cov.copy(),
                            self.mode)


@dataclass
class OdometryTick:
    dv: float  # measured speed, m/s
    dpsi: float  # measured yaw rate, rad/s

    def __post_init__(self):
        if not (math.isfinite(self.dv) and math.isfinite(self.dpsi)):
            raise ValueError("odometry must be finite")


@dataclass
class LandmarkObservation:
    landmark_id: int
    range_m: Optional[float] = None  # point landmarks
    bearing: Optional[float] = None
    offset: Optional[float] = None  # signed distance to plane landmarks


def gnss_fix(truth: VehicleState, weather: WeatherSpec, faults: list,
             t: float, rng: np.random.Generator,
             config: Optional[LocalizationConfig] = None) -> Optional[PoseEstimate]:
    """Noisy RTK fix, or None inside a scripted outage window."""
    cfg = config or LocalizationConfig()
    for (t0, t1) in faults:
        if t0 <= t < t1:
            return None
    sigma = cfg.gnss_pos_sigma + weather.gnss_degradation
    x = truth.x + rng.normal(0.0, sigma)
    y = truth.y + rng.normal(0.0, sigma)
    psi = wrap_angle(truth.psi + rng.normal(0.0, cfg.gnss_psi_sigma))
    cov = np.diag([sigma ** 2, sigma ** 2, cfg.gnss_psi_sigma ** 2])
    return PoseEstimate(x, y, psi, cov, LocMode.GNSS)


def propagate_odometry(prev: PoseEstimate, odo: OdometryTick,
                       dt: float,
                       config: Optional[LocalizationConfig] = None) -> PoseEstimate:
    """Unicycle dead reckoning; covariance grows with process noise."""
    cfg = config or LocalizationConfig()
    if prev.mode is LocMode.LOST:
        raise ValueError("cannot propagate a lost estimate")
    c, s = math.cos(prev.psi), math.sin(prev.psi)
    x = prev.x + odo.dv * c * dt
    y = prev.y + odo.dv * s * dt
    psi = wrap_angle(prev.psi + odo.dpsi * dt)
    F = np.array([
        [1.0, 0.0, -odo.dv * s * dt],
        [0.0, 1.0, odo.dv * c * dt],
        [0.0, 0.0, 1.0]])
    Q = np.diag([cfg.process_q_xy * dt, cfg.process_q_xy * dt,
                 cfg.process_q_psi * dt])
    cov = F @ prev.cov @ F.T + Q
    cov = 0.5 * (cov + cov.T)
    return PoseEstimate(x, y, psi, cov, LocMode.DEAD_RECKONING)


def _landmark_by_id(hd_map: HDMap, landmark_id: int) -> Landmark:
    for lm in hd_map.landmarks:
        if lm.id == landmark_id:
            return lm
    raise KeyError(f"unknown landmark id {landmark_id}")


def _plane_normal(lm: Landmark):
    p0, p1 = lm.geometry
    d = p1 - p0
    n = np.array([-d[1], d[0]])
    norm = np.linalg.norm(n)
    if norm < 1e-9:
        raise ValueError("degenerate plane landmark")
    return p0, n / norm


def landmark_update(est: PoseEstimate, observations: list, hd_map: HDMap,
                    config: Optional[LocalizationConfig] = None) -> PoseEstimate:
    """Gauss-Newton weighted least-squares correction of (x, y, psi).

    Point landmarks contribute range and bearing residuals; plane/curb
    landmarks contribute a signed-distance residual. If the stacked
    constraints cannot determine all three states the input is returned
    unchanged (mode stays dead_reckoning).
    """
    cfg = config or LocalizationConfig()
    if not observations:
        return est

    state = np.array([est.x, est.y, est.psi])
    prior_info = np.linalg.inv(est.cov + 1e-9 * np.eye(3))
    info_obs = None

    for _ in range(3):
        rows, resids, weights = [], [], []
        for obs in observations:
            lm = _landmark_by_id(hd_map, obs.landmark_id)
            if lm.is_point():
                lx, ly = lm.geometry
                dx, dy = lx - state[0], ly - state[1]
                r = math.hypot(dx, dy)
                if r < 1e-6:
                    continue
                # range row
                rows.append([-dx / r, -dy / r, 0.0])
                resids.append(obs.range_m - r)
                weights.append(1.0 / cfg.range_sigma ** 2)
                # bearing row
                bearing_pred = wrap_angle(math.atan2(dy, dx) - state[2])
                rows.append([dy / r ** 2, -dx / r ** 2, -1.0])
                resids.append(wrap_angle(obs.bearing - bearing_pred))
                weights.append(1.0 / cfg.bearing_sigma ** 2)
            else:
                p0, n = _plane_normal(lm)
                pred = n[0] * (state[0] - p0[0]) + n[1] * (state[1] - p0[1])
                rows.append([n[0], n[1], 0.0])
                resids.append(obs.offset - pred)
                weights.append(1.0 / cfg.plane_sigma ** 2)
        if not rows:
            return est
        J = np.array(rows)
        r = np.array(resids)
        W = np.diag(weights)
        sqrtW = np.sqrt(W)
        if np.linalg.matrix_rank(sqrtW @ J, tol=1e-6) < 3:
            return est  # InsufficientConstraints: keep dead reckoning
        info_obs = J.T @ W @ J
        H = info_obs + prior_info
        g = J.T @ W @ r
        delta = np.linalg.solve(H, g)
        state = state + delta
        state[2] = wrap_angle(state[2])
        if np.linalg.norm(delta) < 1e-10:
            break

    cov = np.linalg.inv(info_obs + prior_info)
    cov = 0.5 * (cov + cov.T)
    return PoseEstimate(state[0], state[1], state[2], cov,
                        LocMode.LANDMARK_CORRECTED)


def localization_status(est: PoseEstimate, outage_duration: float,
                        time_since_correction: Optional[float] = None,
                        config: Optional[LocalizationConfig] = None) -> LocStatus:
    """nominal under GNSS; degraded while the fallback tracks well;
    demand_safe_stop once covariance or uncorrected-outage time blow up."""
    cfg = config or LocalizationConfig()
    if est.mode is LocMode.LOST:
        return LocStatus.DEMAND_SAFE_STOP
    if est.mode is LocMode.GNSS:
        return LocStatus.NOMINAL
    if est.position_variance() > cfg.cov_trace_limit:
        return LocStatus.DEMAND_SAFE_STOP
    uncorrected = (outage_duration if time_since_correction is None
                   else time_since_correction)
    if uncorrected > cfg.outage_limit_s:
        return LocStatus.DEMAND_SAFE_STOP
    return LocStatus.DEGRADED


def make_landmark_observations(hd_map: HDMap, truth: VehicleState,
                               rng: np.random.Generator,
                               config: Optional[LocalizationConfig] = None) -> list:
    """Ideal-but-noisy observations of the landmarks visible from the
    ego's true s position. This stands in for a LiDAR landmark extractor;
    the noise levels are the documented module boundary."""
    cfg = config or LocalizationConfig()
    s_true, _, _ = hd_map.project_to_s(truth.x, truth.y)
    obs = []
    for lm in sorted(hd_map.landmarks, key=lambda m: m.id):
        s0, s1 = lm.s_visible_from
        if not (s0 <= s_true <= s1):
            continue
        if lm.is_point():
            lx, ly = lm.geometry
            dx, dy = lx - truth.x, ly - truth.y
            r = math.hypot(dx, dy)
            if r > cfg.landmark_range:
                continue
            obs.append(LandmarkObservation(
                landmark_id=lm.id,
                range_m=r + rng.normal(0.0, cfg.range_sigma),
                bearing=wrap_angle(math.atan2(dy, dx) - truth.psi
                                   + rng.normal(0.0, cfg.bearing_sigma))))
        else:
            p0, n = _plane_normal(lm)
            d = n[0] * (truth.x - p0[0]) + n[1] * (truth.y - p0[1])
            obs.append(LandmarkObservation(
                landmark_id=lm.id,
                offset=d + rng.normal(0.0, cfg.plane_sigma)))
    return obs


class Localizer:
    """Per-tick localization chain owned by the simulation loop."""

    def __init__(self, initial: VehicleState,
                 config: Optional[LocalizationConfig] = None,
                 with_landmarks: bool = True):
        self.cfg = config or LocalizationConfig()
        self.estimate = PoseEstimate(
            initial.x, initial.y, initial.psi,
            np.diag([self.cfg.gnss_pos_sigma ** 2] * 2
                    + [self.cfg.gnss_psi_sigma ** 2]),
            LocMode.GNSS)
        self.outage_s = 0.0
        self.since_correction = 0.0
        self.with_landmarks = with_landmarks

    def step(self, truth: VehicleState, yaw_rate: float,
             weather: WeatherSpec, faults: list, t: float, dt: float,
             hd_map: HDMap, rng: np.random.Generator) -> tuple:
        """Advance one tick; returns (PoseEstimate, LocStatus)."""
        fix = gnss_fix(truth, weather, faults, t, rng, self.cfg)
        if fix is not None:
            self.estimate = fix
            self.outage_s = 0.0
            self.since_correction = 0.0
        else:
            self.outage_s += dt
            self.since_correction += dt
            odo = OdometryTick(
                dv=max(0.0, truth.v + self.cfg.odo_v_bias
                       + rng.normal(0.0, self.cfg.odo_v_sigma)),
                dpsi=yaw_rate + self.cfg.odo_psi_bias
                + rng.normal(0.0, self.cfg.odo_psi_sigma))
            self.estimate = propagate_odometry(self.estimate, odo, dt,
                                               self.cfg)
            if self.with_landmarks and hd_map.landmarks:
                obs = make_landmark_observations(hd_map, truth, rng, self.cfg)
                if obs:
                    updated = landmark_update(self.estimate, obs, hd_map,
                                              self.cfg)
                    if updated.mode is LocMode.LANDMARK_CORRECTED:
                        self.estimate = updated
                        self.since_correction = 0.0
        status = localization_status(self.estimate, self.outage_s,
                                     self.since_correction, self.cfg)
        return self.estimate, status
