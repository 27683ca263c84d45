"""Synthetic LiDAR, radar, and camera channels.

All generators are pure functions of (world, ego, weather, rng): the same
seed reproduces the same outputs bit for bit. Point clouds carry a hidden
per-point clutter label used only by tests, never by the perception code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scenario import WeatherMode, WeatherSpec
from .world import ActorKind, ObstacleActor, VehicleState, WorldState, wrap_angle


@dataclass
class SensorConfig:
    # lidar ground sampling
    lidar_range: float = 40.0
    ring_step: float = 0.5
    ring_min: float = 1.5
    azimuth_step_deg: float = 2.0
    z_noise_sigma: float = 0.01
    z_noise_clip: float = 0.04
    # curb / snowbank geometry; face heights sit above even the far
    # region's ground threshold so the curb stays visible to 40 m
    curb_height: float = 0.25
    shoulder_width: float = 0.8
    face_step: float = 0.25
    curb_face_z: tuple = (0.08, 0.16, 0.24)
    bank_face_z: tuple = (0.12, 0.24, 0.36)
    # actor surface sampling
    actor_step: float = 0.2
    actor_z_step: float = 0.2
    actor_jitter: float = 0.02
    # weather clutter shell (cylindrical annulus around the sensor)
    clutter_r_inner: float = 1.0
    clutter_z: tuple = (0.3, 2.8)
    clutter_volume: float = 10.0
    # radar
    radar_range: float = 250.0
    radar_half_fov_deg: float = 60.0
    radar_pos_sigma: float = 0.3
    radar_vel_sigma: float = 0.2
    radar_rcs_sigma: float = 2.0
    radar_false_rate: float = 0.2
    # cameras
    camera_range: float = 60.0
    class_correct_p: float = 0.95

    @property
    def clutter_r_outer(self) -> float:
        h = self.clutter_z[1] - self.clutter_z[0]
        return math.sqrt(self.clutter_r_inner ** 2
                         + self.clutter_volume / (math.pi * h))


@dataclass
class PointCloud:
    """Ego-body-frame cloud; is_truth_noise marks injected clutter."""

    xyz: np.ndarray  # (N, 3)
    is_truth_noise: np.ndarray  # (N,) bool

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(-1, 3)
        self.is_truth_noise = np.asarray(self.is_truth_noise,
                                         dtype=bool).reshape(-1)
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.xyz)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros(0, dtype=bool))


@dataclass
class RadarReturn:
    x_r: float  # ego frame, meters
    y_r: float
    vx: float  # ground-relative, ego axes
    vy: float
    rcs: float

    def __post_init__(self):
        if math.hypot(self.x_r, self.y_r) > 250.0 + 1e-9:
            raise ValueError("radar return beyond 250 m hard range cap")

    @property
    def range(self) -> float:
        return math.hypot(self.x_r, self.y_r)


@dataclass
class CameraDetection:
    x_i: float  # box center, pixels
    y_i: float
    w_i: float
    h_i: float
    c: ActorKind
    cam_id: int


class CameraRig:
    """Six pinhole cameras at 60 degree yaw spacing, fixed intrinsics."""

    def __init__(self, image_w: int = 2048, image_h: int = 1536,
                 n_cams: int = 6, hfov_deg: float = 70.0,
                 height: float = 2.0):
        self.image_w = image_w
        self.image_h = image_h
        self.n_cams = n_cams
        self.height = height
        self.hfov = math.radians(hfov_deg)
        self.fx = (image_w / 2.0) / math.tan(self.hfov / 2.0)
        self.fy = self.fx
        self.cx = image_w / 2.0
        self.cy = image_h / 2.0
        self.yaws = [i * 2.0 * math.pi / n_cams for i in range(n_cams)]

    def to_cam(self, cam_id: int, pts_ego: np.ndarray) -> np.ndarray:
        """Ego-body points (N,3) -> camera frame (x fwd, y left, z up)."""
        yaw = self.yaws[cam_id]
        c, s = math.cos(yaw), math.sin(yaw)
        out = np.empty_like(pts_ego, dtype=float)
        out[:, 0] = c * pts_ego[:, 0] + s * pts_ego[:, 1]
        out[:, 1] = -s * pts_ego[:, 0] + c * pts_ego[:, 1]
        out[:, 2] = pts_ego[:, 2] - self.height
        return out

    def project(self, cam_pts: np.ndarray) -> np.ndarray:
        """Camera-frame points -> (u, v) pixels; caller checks x > 0."""
        x = cam_pts[:, 0]
        u = self.cx - self.fx * cam_pts[:, 1] / x
        v = self.cy - self.fy * cam_pts[:, 2] / x
        return np.column_stack([u, v])

    def pixel_of(self, cam_id: int, pt_ego: np.ndarray):
        """(u, v, depth) of one ego point, or None if behind the camera."""
        cam = self.to_cam(cam_id, pt_ego.reshape(1, 3))
        if cam[0, 0] <= 0.3:
            return None
        uv = self.project(cam)[0]
        return uv[0], uv[1], cam[0, 0]

    def in_image(self, u: float, v: float) -> bool:
        return 0.0 <= u <= self.image_w and 0.0 <= v <= self.image_h


def world_to_ego(ego: VehicleState, pts_world: np.ndarray) -> np.ndarray:
    c, s = math.cos(ego.psi), math.sin(ego.psi)
    dx = pts_world[:, 0] - ego.x
    dy = pts_world[:, 1] - ego.y
    out = pts_world.copy().astype(float)
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    return out


def ego_to_world(ego: VehicleState, pts_ego: np.ndarray) -> np.ndarray:
    c, s = math.cos(ego.psi), math.sin(ego.psi)
    out = pts_ego.copy().astype(float)
    out[:, 0] = ego.x + c * pts_ego[:, 0] - s * pts_ego[:, 1]
    out[:, 1] = ego.y + s * pts_ego[:, 0] + c * pts_ego[:, 1]
    return out


def _snowbank_interval(weather: WeatherSpec, s_max: float):
    if weather.mode is not WeatherMode.SNOW or weather.snowbank_encroachment <= 0:
        return None
    s0 = 0.0 if weather.snowbank_from is None else weather.snowbank_from
    s1 = s_max if weather.snowbank_to is None else weather.snowbank_to
    return (s0, s1)


def _in_interval(s, interval, loop, s_max):
    if interval is None:
        return np.zeros(np.shape(s), dtype=bool)
    s0, s1 = interval
    s = np.asarray(s)
    if loop and s1 < s0:
        return (s >= s0) | (s <= s1)
    return (s >= s0) & (s <= s1)


def gen_lidar_scan(world: WorldState, ego: VehicleState,
                   weather: WeatherSpec, rng: np.random.Generator,
                   config: Optional[SensorConfig] = None) -> PointCloud:
    """One merged scan: polar-grid ground, curb / snowbank step profile,
    actor surface points, and isolated weather clutter."""
    cfg = config or SensorConfig()
    hd_map = world.hd_map
    bank = _snowbank_interval(weather, hd_map.s_max)

    chunks = []
    labels = []

    # --- ground on a polar grid ------------------------------------------
    radii = np.arange(cfg.ring_min, cfg.lidar_range + 1e-9, cfg.ring_step)
    azimuths = np.arange(0.0, 2.0 * math.pi,
                         math.radians(cfg.azimuth_step_deg))
    rr, aa = np.meshgrid(radii, azimuths, indexing="ij")
    gx = (rr * np.cos(aa)).ravel()
    gy = (rr * np.sin(aa)).ravel()
    pts_world = ego_to_world(ego, np.column_stack([gx, gy, np.zeros_like(gx)]))
    s_arr, d_arr = hd_map.project_many(pts_world[:, :2])
    curb = hd_map.curb_offset_at(s_arr)
    in_bank_s = _in_interval(s_arr, bank, hd_map.loop, hd_map.s_max)
    encroach = np.where(in_bank_s, weather.snowbank_encroachment, 0.0)
    encroach = np.minimum(encroach, np.maximum(curb - 0.5, 0.0))
    edge = curb - encroach  # drivable limit (magnitude of right offset)

    on_road = d_arr > -edge
    on_shoulder = (~in_bank_s) & (d_arr <= -curb) & (
        d_arr >= -(curb + cfg.shoulder_width))
    keep = on_road | on_shoulder
    gz = np.where(on_shoulder, cfg.curb_height, 0.0)
    noise = np.clip(rng.normal(0.0, cfg.z_noise_sigma, size=gz.shape),
                    -cfg.z_noise_clip, cfg.z_noise_clip)
    ground = np.column_stack([gx[keep], gy[keep], (gz + noise)[keep]])
    chunks.append(ground)
    labels.append(np.zeros(len(ground), dtype=bool))

    # --- curb / snowbank step faces --------------------------------------
    ego_s, _, _ = hd_map.project_to_s(ego.x, ego.y)
    span = cfg.lidar_range + 5.0
    s_lo, s_hi = ego_s - span, ego_s + span
    s_samples = np.arange(s_lo, s_hi, cfg.face_step)
    if hd_map.loop:
        s_samples = s_samples % hd_map.s_max
    else:
        s_samples = s_samples[(s_samples >= 0) & (s_samples <= hd_map.s_max)]
    if len(s_samples):
        curb_s = hd_map.curb_offset_at(s_samples)
        bank_here = _in_interval(s_samples, bank, hd_map.loop, hd_map.s_max)
        enc = np.where(bank_here, weather.snowbank_encroachment, 0.0)
        enc = np.minimum(enc, np.maximum(curb_s - 0.5, 0.0))
        cx, cy, heading = hd_map.centerline_at(s_samples)
        nx, ny = -np.sin(heading), np.cos(heading)
        is_bank = bank_here & (enc > 0)
        d_face = np.where(is_bank, -(curb_s - enc), -curb_s)
        px = cx + d_face * nx
        py = cy + d_face * ny
        zs_curb = np.array(cfg.curb_face_z)
        zs_bank = np.array(cfg.bank_face_z)
        n_levels = len(zs_curb)
        base = np.repeat(np.column_stack([px, py]), n_levels, axis=0)
        z_stack = np.where(np.repeat(is_bank, n_levels),
                           np.tile(zs_bank, len(px)),
                           np.tile(zs_curb, len(px)))
        face_world = np.column_stack([base, z_stack])
        face_ego = world_to_ego(ego, face_world)
        rng_ok = np.hypot(face_ego[:, 0], face_ego[:, 1]) <= cfg.lidar_range
        face_ego = face_ego[rng_ok]
        chunks.append(face_ego)
        labels.append(np.zeros(len(face_ego), dtype=bool))

    # --- actor surfaces ----------------------------------------------------
    for actor in world.actors:
        if math.hypot(actor.x - ego.x, actor.y - ego.y) > cfg.lidar_range + 5:
            continue
        surf = _actor_surface(actor, cfg, rng)
        surf_ego = world_to_ego(ego, surf)
        rng_ok = np.hypot(surf_ego[:, 0], surf_ego[:, 1]) <= cfg.lidar_range
        surf_ego = surf_ego[rng_ok]
        chunks.append(surf_ego)
        labels.append(np.zeros(len(surf_ego), dtype=bool))

    # --- weather clutter ----------------------------------------------------
    if weather.noise_density > 0:
        count = rng.poisson(weather.noise_density * cfg.clutter_volume)
        if count > 0:
            r0, r1 = cfg.clutter_r_inner, cfg.clutter_r_outer
            r = np.sqrt(rng.uniform(r0 ** 2, r1 ** 2, size=count))
            theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
            z = rng.uniform(cfg.clutter_z[0], cfg.clutter_z[1], size=count)
            clutter = np.column_stack([r * np.cos(theta),
                                       r * np.sin(theta), z])
            chunks.append(clutter)
            labels.append(np.ones(count, dtype=bool))

    chunks = [c for c in chunks if len(c)]
    labels = [l for l in labels if len(l)]
    if not chunks:
        return PointCloud.empty()
    return PointCloud(np.vstack(chunks), np.concatenate(labels))


def _actor_surface(actor: ObstacleActor, cfg: SensorConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """Sample all four vertical box faces on a fixed grid plus jitter."""
    corners = actor.footprint()
    pts = []
    z_levels = np.arange(0.1, actor.height + 1e-9, cfg.actor_z_step)
    if len(z_levels) == 0:
        z_levels = np.array([actor.height * 0.5])
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        edge_len = float(np.hypot(*(b - a)))
        n = max(2, int(round(edge_len / cfg.actor_step)))
        ts = np.linspace(0.0, 1.0, n, endpoint=False)
        base = a[None, :] + ts[:, None] * (b - a)[None, :]
        for z in z_levels:
            layer = np.column_stack([base, np.full(len(base), z)])
            pts.append(layer)
    out = np.vstack(pts)
    out += rng.normal(0.0, cfg.actor_jitter, size=out.shape)
    return out


def gen_radar_returns(world: WorldState, ego: VehicleState,
                      rng: np.random.Generator,
                      config: Optional[SensorConfig] = None) -> list:
    """One noisy return per actor inside range and the fore/aft sensor
    fields of view, plus occasional false alarms."""
    cfg = config or SensorConfig()
    half_fov = math.radians(cfg.radar_half_fov_deg)
    c, s = math.cos(ego.psi), math.sin(ego.psi)
    returns = []
    for actor in world.actors:
        dx, dy = actor.x - ego.x, actor.y - ego.y
        xr = c * dx + s * dy
        yr = -s * dx + c * dy
        rng_true = math.hypot(xr, yr)
        if rng_true > cfg.radar_range:
            continue
        bearing = math.atan2(yr, xr)
        front = abs(bearing) <= half_fov
        rear = abs(wrap_angle(bearing - math.pi)) <= half_fov
        if not (front or rear):
            continue
        xr += rng.normal(0.0, cfg.radar_pos_sigma)
        yr += rng.normal(0.0, cfg.radar_pos_sigma)
        if math.hypot(xr, yr) > cfg.radar_range:
            continue  # noise never breaks the hard range cap
        vxr = c * actor.vx + s * actor.vy + rng.normal(0.0,
                                                       cfg.radar_vel_sigma)
        vyr = -s * actor.vx + c * actor.vy + rng.normal(
            0.0, cfg.radar_vel_sigma)
        rcs = actor.rcs + rng.normal(0.0, cfg.radar_rcs_sigma)
        returns.append(RadarReturn(xr, yr, vxr, vyr, rcs))
    n_false = rng.poisson(cfg.radar_false_rate)
    for _ in range(n_false):
        rng_fa = rng.uniform(5.0, cfg.radar_range)
        sector = rng.integers(0, 2)
        bearing = rng.uniform(-half_fov, half_fov) + (math.pi if sector else 0)
        returns.append(RadarReturn(
            rng_fa * math.cos(bearing), rng_fa * math.sin(bearing),
            rng.normal(0.0, cfg.radar_vel_sigma),
            rng.normal(0.0, cfg.radar_vel_sigma),
            rng.uniform(-10.0, 10.0)))
    return returns


# class confusion applied when the simulated detector mislabels
_CONFUSION = {
    ActorKind.VEHICLE: ActorKind.UNKNOWN,
    ActorKind.UNKNOWN: ActorKind.VEHICLE,
    ActorKind.PEDESTRIAN: ActorKind.CYCLIST,
    ActorKind.CYCLIST: ActorKind.PEDESTRIAN,
    ActorKind.GOOSE: ActorKind.UNKNOWN,
    ActorKind.BOLLARD: ActorKind.UNKNOWN,
}


def gen_camera_detections(world: WorldState, ego: VehicleState,
                          weather: WeatherSpec, rng: np.random.Generator,
                          rig: Optional[CameraRig] = None,
                          config: Optional[SensorConfig] = None) -> list:
    """Project visible actors into the camera ring; apply dropout and the
    class confusion model."""
    cfg = config or SensorConfig()
    rig = rig or CameraRig()
    detections = []
    for actor in world.actors:
        if math.hypot(actor.x - ego.x, actor.y - ego.y) > cfg.camera_range:
            continue
        corners2d = actor.footprint()
        corners = np.vstack([
            np.column_stack([corners2d, np.zeros(4)]),
            np.column_stack([corners2d, np.full(4, actor.height)])])
        corners_ego = world_to_ego(ego, corners)
        for cam_id in range(rig.n_cams):
            cam_pts = rig.to_cam(cam_id, corners_ego)
            if np.any(cam_pts[:, 0] <= 0.3):
                continue
            uv = rig.project(cam_pts)
            u0, v0 = uv[:, 0].min(), uv[:, 1].min()
            u1, v1 = uv[:, 0].max(), uv[:, 1].max()
            u0c, u1c = max(u0, 0.0), min(u1, float(rig.image_w))
            v0c, v1c = max(v0, 0.0), min(v1, float(rig.image_h))
            if u1c - u0c < 2.0 or v1c - v0c < 2.0:
                continue
            if rng.uniform() < weather.camera_dropout:
                continue
            cls = actor.kind
            if rng.uniform() >= cfg.class_correct_p:
                cls = _CONFUSION[cls]
            detections.append(CameraDetection(
                x_i=0.5 * (u0c + u1c), y_i=0.5 * (v0c + v1c),
                w_i=u1c - u0c, h_i=v1c - v0c, c=cls, cam_id=cam_id))
    return detections
