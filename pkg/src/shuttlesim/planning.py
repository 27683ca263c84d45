"""Path planning: the map-derived reference path, potential-field local
adjustment around fused objects, cubic Bezier smoothing, and the
pullover / merge maneuver paths.

All emitted curves are C1 across piece joins and respect a hard curvature
cap; violating the cap after one waypoint re-spacing attempt is an error
the decision layer treats as a blocked path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .perception import CurbEstimate
from .world import EgoParams, HDMap, VehicleState, wrap_angle


class PathBlocked(RuntimeError):
    def __init__(self, s: float, detail: str = ""):
        self.s = s
        super().__init__(f"no feasible corridor near s={s:.1f} {detail}")


class CurvatureExceeded(RuntimeError):
    def __init__(self, kappa: float, limit: float):
        self.kappa = kappa
        self.limit = limit
        super().__init__(f"max curvature {kappa:.3f} exceeds {limit:.3f}")


class PathKind(Enum):
    REFERENCE = "reference"
    AVOIDANCE = "avoidance"
    PULLOVER = "pullover"
    MERGE = "merge"


@dataclass
class PlanningConfig:
    influence_radius: float = 8.0
    k_rep: float = 0.6
    k_att: float = 0.5
    displacement_cap: float = 2.0
    curb_clearance: float = 0.3
    overshoot_guard: float = 0.02  # spline overshoot allowance at the curb
    left_clearance: float = 0.3
    object_clearance: float = 1.1  # body-edge clearance when passing
    corridor_extra: float = 0.4  # corridor must fit width + this
    kappa_max: float = 0.2
    sample_step: float = 0.25
    waypoint_step: float = 2.0
    merge_horizon_s: float = 4.0
    v_merge: float = 2.5
    ego: EgoParams = field(default_factory=EgoParams)


@dataclass
class PathSegment:
    """Ordered waypoints (x, y, heading, s_along_path)."""

    waypoints: np.ndarray  # (N, 4)
    kind: PathKind = PathKind.REFERENCE

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 4)

    @property
    def xy(self) -> np.ndarray:
        return self.waypoints[:, :2]

    def sampled(self) -> "SampledPath":
        wp = self.waypoints
        return SampledPath(xy=wp[:, :2].copy(), s=wp[:, 3].copy(),
                           heading=wp[:, 2].copy())


@dataclass
class SampledPath:
    """Dense polyline with cumulative arc length, used by the controller."""

    xy: np.ndarray
    s: np.ndarray
    heading: np.ndarray

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def locate(self, x: float, y: float) -> float:
        """Arc position of the orthogonal projection onto the polyline."""
        if len(self.xy) == 1:
            return float(self.s[0])
        a = self.xy[:-1]
        e = self.xy[1:] - a
        e2 = np.maximum((e * e).sum(axis=1), 1e-12)
        px, py = x - a[:, 0], y - a[:, 1]
        t = np.clip((px * e[:, 0] + py * e[:, 1]) / e2, 0.0, 1.0)
        fx = a[:, 0] + t * e[:, 0]
        fy = a[:, 1] + t * e[:, 1]
        d2 = (x - fx) ** 2 + (y - fy) ** 2
        i = int(np.argmin(d2))
        return float(self.s[i] + t[i] * (self.s[i + 1] - self.s[i]))

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.s, s))
        if i == 0:
            return self.xy[0]
        if i >= len(self.s):
            return self.xy[-1]
        t = (s - self.s[i - 1]) / max(self.s[i] - self.s[i - 1], 1e-9)
        return self.xy[i - 1] + t * (self.xy[i] - self.xy[i - 1])


@dataclass
class BezierSpec:
    """Piecewise cubic Bezier; adjacent pieces share endpoints and tangent
    directions (C1)."""

    pieces: list  # list of (4, 2) control point arrays

    def eval(self, piece: int, u: float) -> np.ndarray:
        p = self.pieces[piece]
        v = 1.0 - u
        return (v ** 3 * p[0] + 3 * v ** 2 * u * p[1]
                + 3 * v * u ** 2 * p[2] + u ** 3 * p[3])

    def derivative(self, piece: int, u: float) -> np.ndarray:
        p = self.pieces[piece]
        v = 1.0 - u
        return 3 * (v ** 2 * (p[1] - p[0]) + 2 * v * u * (p[2] - p[1])
                    + u ** 2 * (p[3] - p[2]))

    def second_derivative(self, piece: int, u: float) -> np.ndarray:
        p = self.pieces[piece]
        return 6 * ((1.0 - u) * (p[2] - 2 * p[1] + p[0])
                    + u * (p[3] - 2 * p[2] + p[1]))

    def curvature(self, piece: int, u: float) -> float:
        d1 = self.derivative(piece, u)
        d2 = self.second_derivative(piece, u)
        speed2 = float(d1 @ d1)
        if speed2 < 1e-12:
            return 0.0
        return abs(d1[0] * d2[1] - d1[1] * d2[0]) / speed2 ** 1.5

    def max_curvature(self, samples_per_piece: int = 16) -> float:
        if not self.pieces:
            return 0.0
        P = np.stack(self.pieces)  # (N, 4, 2)
        u = np.linspace(0.0, 1.0, samples_per_piece)[None, :, None]
        v = 1.0 - u
        d1 = 3 * (v ** 2 * (P[:, None, 1] - P[:, None, 0])
                  + 2 * v * u * (P[:, None, 2] - P[:, None, 1])
                  + u ** 2 * (P[:, None, 3] - P[:, None, 2]))
        d2 = 6 * (v * (P[:, None, 2] - 2 * P[:, None, 1] + P[:, None, 0])
                  + u * (P[:, None, 3] - 2 * P[:, None, 2] + P[:, None, 1]))
        speed2 = (d1 ** 2).sum(axis=2)
        cross = np.abs(d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])
        kappa = np.where(speed2 < 1e-12, 0.0,
                         cross / np.maximum(speed2, 1e-12) ** 1.5)
        return float(kappa.max())

    def sampled(self, step: float = 0.25) -> SampledPath:
        pts = []
        for i in range(len(self.pieces)):
            chord = np.linalg.norm(self.pieces[i][3] - self.pieces[i][0])
            n = max(4, int(math.ceil(chord / step)))
            us = np.linspace(0.0, 1.0, n, endpoint=False)
            for u in us:
                pts.append(self.eval(i, u))
        pts.append(self.pieces[-1][3])
        xy = np.array(pts)
        seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        heading = np.zeros(len(xy))
        heading[:-1] = np.arctan2(np.diff(xy[:, 1]), np.diff(xy[:, 0]))
        heading[-1] = heading[-2] if len(xy) > 1 else 0.0
        return SampledPath(xy=xy, s=s, heading=heading)

    def endpoint(self) -> np.ndarray:
        return self.pieces[-1][3]

    def end_heading(self) -> float:
        d = self.derivative(len(self.pieces) - 1, 1.0)
        return math.atan2(d[1], d[0])


# ---------------------------------------------------------------------------
# Global reference path

def global_path(hd_map: HDMap) -> PathSegment:
    """Midline of the drivable space between the left bound and right curb."""
    wps = []
    for r in hd_map.records:
        d_mid = 0.5 * (r.left_bound_offset - r.right_curb_offset)
        nx, ny = -math.sin(r.heading), math.cos(r.heading)
        wps.append((r.cx + d_mid * nx, r.cy + d_mid * ny, r.heading, r.s))
    return PathSegment(np.array(wps), PathKind.REFERENCE)


# ---------------------------------------------------------------------------
# Potential field

def apply_potential_field(path: PathSegment, objects: list,
                          curb: Optional[CurbEstimate], hd_map: HDMap,
                          config: Optional[PlanningConfig] = None) -> PathSegment:
    """Displace waypoints laterally away from nearby objects, keep clear of
    the estimated right boundary, and verify a wide-enough corridor exists.

    Raises PathBlocked when an object leaves no corridor of at least
    vehicle width + corridor_extra.
    """
    cfg = config or PlanningConfig()
    wp = path.waypoints.copy()
    if len(wp) == 0:
        return PathSegment(wp, path.kind)

    s_wp, d_wp = hd_map.project_many(wp[:, :2])
    curb_map = hd_map.curb_offset_at(s_wp)
    b_est = np.array([
        curb.offset_at(float(s)) if curb is not None else curb_map[i]
        for i, s in enumerate(s_wp)])
    b_est = np.minimum(b_est, curb_map)
    left = hd_map.left_bound_at(s_wp)
    lo = -(b_est - cfg.curb_clearance)
    hi = left - cfg.left_clearance

    if not objects:
        new_d = np.clip(d_wp, lo, hi)
        if np.array_equal(new_d, d_wp):
            return PathSegment(path.waypoints.copy(), path.kind)
        return _rebuild(path, s_wp, new_d, hd_map)

    obj_data = []
    for obj in objects:
        s_o, d_o, _ = hd_map.project_to_s(obj.x, obj.y)
        obj_data.append((obj, s_o, d_o))

    disp = np.zeros(len(wp))
    for (obj, s_o, d_o) in obj_data:
        dist = np.hypot(wp[:, 0] - obj.x, wp[:, 1] - obj.y)
        boundary = np.maximum(dist - 0.5 * max(obj.w, obj.l), 0.05)
        mask = boundary < cfg.influence_radius
        if not mask.any():
            continue
        mag = cfg.k_rep * (1.0 / boundary[mask]
                           - 1.0 / cfg.influence_radius)
        push = np.sign(d_wp[mask] - d_o)
        push[push == 0] = 1.0  # head-on: prefer passing on the left
        disp[mask] += push * mag
    disp = np.clip(disp, -cfg.displacement_cap, cfg.displacement_cap)
    new_d = d_wp + disp / (1.0 + cfg.k_att)

    # corridor feasibility and per-object lateral keep-out
    half_w = 0.5 * cfg.ego.width
    for (obj, s_o, d_o) in obj_data:
        half_len = 0.5 * obj.l + 1.0
        rel = np.abs(s_wp - s_o)
        if hd_map.loop:
            rel = np.minimum(rel, hd_map.s_max - rel)
        sel = rel <= half_len
        if not sel.any():
            continue
        for i in np.where(sel)[0]:
            # physical free space between the object and the road bounds
            phys_lo, phys_hi = -b_est[i], left[i]
            span_lo = d_o - 0.5 * obj.w
            span_hi = d_o + 0.5 * obj.w
            right_gap = span_lo - phys_lo
            left_gap = phys_hi - span_hi
            if max(right_gap, left_gap) < cfg.ego.width + cfg.corridor_extra:
                raise PathBlocked(float(s_o), f"object at d={d_o:.2f}")
            # keep-out for the path center: body clearance to the object
            margin = half_w + cfg.object_clearance
            pieces = []
            if span_lo - margin > lo[i]:
                pieces.append((lo[i], span_lo - margin))
            if span_hi + margin < hi[i]:
                pieces.append((span_hi + margin, hi[i]))
            if not pieces:
                # squeeze through the wider side, best effort
                side = (lo[i], span_lo - half_w - 0.05) if right_gap >= left_gap \
                    else (span_hi + half_w + 0.05, hi[i])
                pieces = [side]
            target = new_d[i]
            best = None
            for (a, b) in pieces:
                c = min(max(target, a), max(a, b))
                key = abs(c - target)
                if best is None or key < best[0]:
                    best = (key, c)
            new_d[i] = best[1]

    new_d = np.clip(new_d, lo, hi)
    return _rebuild(path, s_wp, new_d, hd_map)


def _rebuild(path: PathSegment, s_wp: np.ndarray, new_d: np.ndarray,
             hd_map: HDMap) -> PathSegment:
    out = path.waypoints.copy()
    for i, (s, d) in enumerate(zip(s_wp, new_d)):
        x, y = hd_map.point_at(float(s), float(d))
        out[i, 0], out[i, 1] = x, y
    # refresh headings and arc length from the displaced geometry
    if len(out) > 1:
        dx = np.gradient(out[:, 0])
        dy = np.gradient(out[:, 1])
        out[:, 2] = np.arctan2(dy, dx)
        seg = np.hypot(np.diff(out[:, 0]), np.diff(out[:, 1]))
        out[:, 3] = np.concatenate([[path.waypoints[0, 3]],
                                    path.waypoints[0, 3] + np.cumsum(seg)])
    return PathSegment(out, PathKind.AVOIDANCE)


# ---------------------------------------------------------------------------
# Bezier smoothing

def _hermite_bezier(points: np.ndarray) -> BezierSpec:
    n = len(points)
    tangents = np.zeros_like(points)
    tangents[0] = points[1] - points[0]
    tangents[-1] = points[-1] - points[-2]
    if n > 2:
        tangents[1:-1] = 0.5 * (points[2:] - points[:-2])
    pieces = []
    for i in range(n - 1):
        p0, p3 = points[i], points[i + 1]
        pieces.append(np.array([p0, p0 + tangents[i] / 3.0,
                                p3 - tangents[i + 1] / 3.0, p3]))
    return BezierSpec(pieces)


def _respace(points: np.ndarray, step: float) -> np.ndarray:
    seg = np.hypot(np.diff(points[:, 0]), np.diff(points[:, 1]))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total < 1e-9:
        return points
    n = max(3, int(round(total / step)) + 1)
    su = np.linspace(0.0, total, n)
    return np.column_stack([np.interp(su, s, points[:, 0]),
                            np.interp(su, s, points[:, 1])])


def bezier_smooth(waypoints, config: Optional[PlanningConfig] = None) -> BezierSpec:
    """Piecewise cubic through the waypoints, C1 at joins.

    If the sampled curvature exceeds kappa_max the waypoints are re-spaced
    uniformly and the fit retried once; a second failure raises
    CurvatureExceeded.
    """
    cfg = config or PlanningConfig()
    if isinstance(waypoints, PathSegment):
        points = waypoints.xy
    else:
        points = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if len(points) < 2:
        raise ValueError("bezier smoothing needs at least 2 waypoints")
    # drop consecutive duplicates that would zero the tangents
    keep = [0]
    for i in range(1, len(points)):
        if np.hypot(*(points[i] - points[keep[-1]])) > 1e-6:
            keep.append(i)
    points = points[keep]
    if len(points) < 2:
        raise ValueError("waypoints are all coincident")

    spec = _hermite_bezier(points)
    kappa = spec.max_curvature()
    if kappa <= cfg.kappa_max:
        return spec
    respaced = _respace(points, cfg.waypoint_step)
    spec = _hermite_bezier(respaced)
    kappa = spec.max_curvature()
    if kappa <= cfg.kappa_max:
        return spec
    raise CurvatureExceeded(kappa, cfg.kappa_max)


# ---------------------------------------------------------------------------
# Pullover / merge paths

def _blend(t: np.ndarray) -> np.ndarray:
    """Smoothstep lateral blend: zero slope at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _maneuver_waypoints(hd_map: HDMap, ego: VehicleState, s_from: float,
                        d_from: float, s_to: float, d_to: float,
                        tail: float, step: float) -> np.ndarray:
    run = s_to - s_from
    n = max(4, int(math.ceil(run / step)) + 1)
    ss = np.linspace(s_from, s_to, n)
    ds = d_from + (_blend((ss - s_from) / max(run, 1e-6)) * (d_to - d_from))
    pts = [hd_map.point_at(float(s), float(d)) for s, d in zip(ss, ds)]
    # heading-aligned lead-in so the curve starts along the current bearing
    lead = np.array([ego.x + math.cos(ego.psi), ego.y + math.sin(ego.psi)])
    pts = [np.array([ego.x, ego.y]), lead] + [np.asarray(p) for p in pts[1:]]
    for t_off in np.arange(step, tail + 1e-9, step):
        pts.append(np.asarray(hd_map.point_at(float(s_to + t_off),
                                              float(d_to))))
    return np.array(pts)


def plan_pullover(ego: VehicleState, spot_s: float, hd_map: HDMap,
                  curb: Optional[CurbEstimate] = None,
                  config: Optional[PlanningConfig] = None) -> BezierSpec:
    """Path from the current pose to a curb-parallel point at the spot,
    ending curb_clearance from the right boundary. Never plans in reverse."""
    cfg = config or PlanningConfig()
    ego_s, ego_d, _ = hd_map.project_to_s(ego.x, ego.y)
    ahead = hd_map.forward_gap(ego_s, spot_s)
    if not hd_map.loop:
        ahead = spot_s - ego_s
    elif ahead > hd_map.s_max / 2:
        ahead = ahead - hd_map.s_max
    if ahead < -0.01:
        raise ValueError("pullover spot is behind the ego vehicle")

    b = hd_map.curb_offset_at(spot_s)[0] if curb is None \
        else min(curb.offset_at(spot_s), float(hd_map.curb_offset_at(spot_s)[0]))
    d_target = -(b - cfg.curb_clearance - cfg.overshoot_guard)
    if abs(ahead) <= 0.5 and abs(ego_d - d_target) <= 0.1:
        # already curb-aligned at the spot: near-zero-length path
        ss = np.array([ego_s, spot_s + 0.5, spot_s + 1.0])
        pts = np.array([hd_map.point_at(float(s), d_target) for s in ss])
        return BezierSpec(_hermite_bezier(pts).pieces)

    spec = _smooth_maneuver(hd_map, ego, ego_s, ego_d,
                            hd_map.wrap_s(spot_s), d_target, cfg)
    return spec


def plan_merge(ego: VehicleState, hd_map: HDMap,
               curb: Optional[CurbEstimate] = None,
               config: Optional[PlanningConfig] = None) -> BezierSpec:
    """Mirror of plan_pullover back onto the reference midline; the rejoin
    point sits a merge-speed horizon ahead and is extended once if the
    curvature cap trips."""
    cfg = config or PlanningConfig()
    ego_s, ego_d, _ = hd_map.project_to_s(ego.x, ego.y)
    rejoin = max(cfg.v_merge * cfg.merge_horizon_s, 6.0)
    for attempt in range(2):
        s_to = hd_map.wrap_s(ego_s + rejoin)
        rec = hd_map.query_record(s_to)
        d_mid = 0.5 * (rec.left_bound_offset - rec.right_curb_offset)
        try:
            return _smooth_maneuver(hd_map, ego, ego_s, ego_d, s_to, d_mid,
                                    cfg)
        except CurvatureExceeded:
            if attempt == 1:
                raise
            rejoin *= 1.6
    raise AssertionError("unreachable")


def _smooth_maneuver(hd_map: HDMap, ego: VehicleState, s_from: float,
                     d_from: float, s_to: float, d_to: float,
                     cfg: PlanningConfig) -> BezierSpec:
    run = hd_map.forward_gap(s_from, s_to)
    if not hd_map.loop:
        run = s_to - s_from
    # dense waypoints keep the spline overshoot inside the curb guard
    pts = _maneuver_waypoints(hd_map, ego, s_from, d_from, s_from + run,
                              d_to, tail=2.0,
                              step=min(cfg.waypoint_step, 1.0))
    return bezier_smooth(pts, cfg)
