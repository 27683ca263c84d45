"""World frame, ego state, obstacle actors, and the s-coordinate HD map.

The map is a list of equally spaced records along a one-dimensional arc
coordinate s. Every downstream module locates itself by projecting world
points onto this line (Frenet projection: s plus signed lateral offset d,
positive d to the left of the centerline).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

TWO_PI = 2.0 * math.pi


class EmptyMapError(ValueError):
    pass


class OutOfRangeError(ValueError):
    pass


def wrap_angle(a: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    a = (a + math.pi) % TWO_PI - math.pi
    if a == -math.pi:
        return math.pi
    return a


def wrap_angle_array(a: np.ndarray) -> np.ndarray:
    out = (a + math.pi) % TWO_PI - math.pi
    out[out == -math.pi] = math.pi
    return out


class Zone(Enum):
    NORMAL = "normal"
    BUS_STOP = "bus_stop"
    INTERSECTION_APPROACH = "intersection_approach"
    INTERSECTION_BOX = "intersection_box"


class ActorKind(Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"
    GOOSE = "goose"
    BOLLARD = "bollard"
    UNKNOWN = "unknown"


class LandmarkKind(Enum):
    LIGHT_POLE = "light_pole"
    BUILDING_PLANE = "building_plane"
    CURB_SEGMENT = "curb_segment"


# Nominal radar cross sections (dBsm) and box dimensions per actor kind.
DEFAULT_RCS = {
    ActorKind.VEHICLE: 10.0,
    ActorKind.PEDESTRIAN: -5.0,
    ActorKind.CYCLIST: 2.0,
    ActorKind.GOOSE: -12.0,
    ActorKind.BOLLARD: -2.0,
    ActorKind.UNKNOWN: 0.0,
}

DEFAULT_DIMS = {
    ActorKind.VEHICLE: (4.5, 1.9, 1.6),
    ActorKind.PEDESTRIAN: (0.5, 0.5, 1.75),
    ActorKind.CYCLIST: (1.8, 0.6, 1.7),
    ActorKind.GOOSE: (0.6, 0.3, 0.5),
    ActorKind.BOLLARD: (0.3, 0.3, 1.0),
    ActorKind.UNKNOWN: (1.0, 1.0, 1.0),
}


@dataclass
class VehicleState:
    """Ego pose, speed, and steering in the world frame.

    psi is kept in (-pi, pi]; v is non-negative; delta_f / delta_r are the
    front / rear axle steer angles.
    """

    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    v: float = 0.0
    delta_f: float = 0.0
    delta_r: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if self.v < 0.0:
            raise ValueError("speed must be non-negative")
        self.psi = wrap_angle(self.psi)

    def copy(self) -> "VehicleState":
        return VehicleState(self.x, self.y, self.psi, self.v,
                            self.delta_f, self.delta_r, self.t)


@dataclass
class ObstacleActor:
    """A scripted box actor (vehicle, pedestrian, ... ) in the world frame.

    script entries are (t, command, args) tuples executed by the simulation
    loop: ("move", vx, vy) sets the velocity, ("warp", x, y) teleports.
    """

    id: int
    kind: ActorKind
    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    length: float = 0.0
    width: float = 0.0
    height: float = 0.0
    rcs: Optional[float] = None
    script: list = field(default_factory=list)
    heading: float = 0.0

    def __post_init__(self):
        dl, dw, dh = DEFAULT_DIMS[self.kind]
        if self.length <= 0.0:
            self.length = dl
        if self.width <= 0.0:
            self.width = dw
        if self.height <= 0.0:
            self.height = dh
        if self.rcs is None:
            self.rcs = DEFAULT_RCS[self.kind]
        if not math.isfinite(self.rcs):
            raise ValueError("rcs must be finite")
        if math.hypot(self.vx, self.vy) > 1e-3:
            self.heading = math.atan2(self.vy, self.vx)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def footprint(self) -> np.ndarray:
        """4x2 array of footprint corners, oriented by the actor heading."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.x, self.y])

    def copy(self) -> "ObstacleActor":
        a = ObstacleActor(self.id, self.kind, self.x, self.y, self.vx, self.vy,
                          self.length, self.width, self.height, self.rcs,
                          list(self.script))
        a.heading = self.heading
        return a


@dataclass
class SRecord:
    """One discretized map record at arc position s."""

    s: float
    cx: float
    cy: float
    heading: float
    right_curb_offset: float
    left_bound_offset: float
    zone: Zone = Zone.NORMAL
    zone_id: Optional[int] = None

    def __post_init__(self):
        if self.right_curb_offset <= 0.0 or self.left_bound_offset <= 0.0:
            raise ValueError("curb/bound offsets must be positive")
        if (self.zone is Zone.NORMAL) != (self.zone_id is None):
            raise ValueError("zone_id must be present iff zone != normal")


@dataclass
class Landmark:
    """Georeferenced map landmark: a point (light pole) or a line segment
    (building plane / curb segment) with the s-interval it is visible from."""

    id: int
    kind: LandmarkKind
    geometry: np.ndarray
    s_visible_from: tuple

    def __post_init__(self):
        self.geometry = np.asarray(self.geometry, dtype=float)
        if not np.all(np.isfinite(self.geometry)):
            raise ValueError("landmark geometry must be finite")
        if self.kind is LandmarkKind.LIGHT_POLE:
            if self.geometry.shape != (2,):
                raise ValueError("point landmark needs a 2-vector")
        else:
            if self.geometry.shape != (2, 2):
                raise ValueError("segment landmark needs a 2x2 array")
        s0, s1 = self.s_visible_from
        if not (s1 > s0):
            raise ValueError("visibility interval must be non-empty")

    def is_point(self) -> bool:
        return self.kind is LandmarkKind.LIGHT_POLE


class HDMap:
    """Ordered, equally spaced SRecords plus landmarks.

    Immutable after construction. A map whose endpoints meet (within
    1.5 * ds) is treated as a closed loop: s wraps modulo s_max.
    """

    def __init__(self, records: list, landmarks: Optional[list] = None):
        if not records:
            raise EmptyMapError("map has no records")
        self.records = list(records)
        self.landmarks = list(landmarks or [])
        n = len(self.records)

        s = np.array([r.s for r in self.records])
        if n >= 2:
            steps = np.diff(s)
            if np.any(steps <= 0):
                raise ValueError("records must be strictly ordered by s")
            ds = float(steps[0])
            if not np.allclose(steps, ds, atol=1e-6):
                raise ValueError("record spacing must be constant")
        else:
            ds = 1.0
        self.ds = ds

        self.cx = np.array([r.cx for r in self.records])
        self.cy = np.array([r.cy for r in self.records])
        self.heading = np.array([r.heading for r in self.records])
        self.right_curb = np.array([r.right_curb_offset for r in self.records])
        self.left_bound = np.array([r.left_bound_offset for r in self.records])
        self.s = s

        if n >= 2:
            gaps = np.hypot(np.diff(self.cx), np.diff(self.cy))
            if np.any(gaps > 1.5 * ds):
                raise ValueError("centerline not continuous at spacing ds")

        end_gap = math.hypot(self.cx[-1] - self.cx[0], self.cy[-1] - self.cy[0])
        self.loop = n >= 3 and end_gap <= 1.5 * ds
        self.s_max = float(s[-1] + ds) if self.loop else float(s[-1])

        # Segment table for projection; loops get a closing segment.
        ax, ay = self.cx[:-1], self.cy[:-1]
        bx, by = self.cx[1:], self.cy[1:]
        if self.loop:
            ax = np.append(ax, self.cx[-1])
            ay = np.append(ay, self.cy[-1])
            bx = np.append(bx, self.cx[0])
            by = np.append(by, self.cy[0])
        self._ax, self._ay = ax, ay
        self._ex, self._ey = bx - ax, by - ay
        self._elen2 = np.maximum(self._ex ** 2 + self._ey ** 2, 1e-12)

    def __len__(self) -> int:
        return len(self.records)

    def _segment_tree(self):
        # midpoint KD-tree over segments, built lazily (map is immutable)
        if not hasattr(self, "_kdtree"):
            from scipy.spatial import cKDTree
            mids = np.column_stack([self._ax + 0.5 * self._ex,
                                    self._ay + 0.5 * self._ey])
            self._kdtree = cKDTree(mids)
        return self._kdtree

    def project_many(self, pts: np.ndarray):
        """Vectorized project_to_s for an (N, 2) array; returns (s, d).

        Uses a KD-tree over segment midpoints and refines against each
        candidate's neighbors, which matches the exhaustive search for
        points within a few ds of the centerline.
        """
        pts = np.asarray(pts, dtype=float)
        if pts.size == 0:
            return np.zeros(0), np.zeros(0)
        tree = self._segment_tree()
        _, idx = tree.query(pts, k=1)
        n_seg = len(self._ax)
        best_d2 = np.full(len(pts), np.inf)
        best_s = np.zeros(len(pts))
        best_d = np.zeros(len(pts))
        for off in (-1, 0, 1):
            i = (idx + off) % n_seg if self.loop else np.clip(idx + off, 0,
                                                              n_seg - 1)
            ax, ay = self._ax[i], self._ay[i]
            ex, ey = self._ex[i], self._ey[i]
            el2 = self._elen2[i]
            px, py = pts[:, 0] - ax, pts[:, 1] - ay
            t = np.clip((px * ex + py * ey) / el2, 0.0, 1.0)
            fx, fy = ax + t * ex, ay + t * ey
            d2 = (pts[:, 0] - fx) ** 2 + (pts[:, 1] - fy) ** 2
            inv = 1.0 / np.sqrt(el2)
            d_signed = (ex * (pts[:, 1] - fy) - ey * (pts[:, 0] - fx)) * inv
            s_cand = self.s[i] + t * self.ds
            better = d2 < best_d2 - 1e-12
            best_d2 = np.where(better, d2, best_d2)
            best_s = np.where(better, s_cand, best_s)
            best_d = np.where(better, d_signed, best_d)
        if self.loop:
            best_s = best_s % self.s_max
        else:
            best_s = np.clip(best_s, 0.0, self.s_max)
        return best_s, best_d

    def _interp_table(self, values: np.ndarray):
        if self.loop:
            return (np.append(self.s, self.s_max),
                    np.append(values, values[0]))
        return self.s, values

    def curb_offset_at(self, s) -> np.ndarray:
        """Right curb offset interpolated at (array of) s."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.loop:
            s = s % self.s_max
        xp, fp = self._interp_table(self.right_curb)
        return np.interp(s, xp, fp)

    def left_bound_at(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.loop:
            s = s % self.s_max
        xp, fp = self._interp_table(self.left_bound)
        return np.interp(s, xp, fp)

    def centerline_at(self, s):
        """Vectorized (cx, cy, heading) interpolated at (array of) s."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.loop:
            s = s % self.s_max
        if not hasattr(self, "_heading_unwrapped"):
            self._heading_unwrapped = np.unwrap(self.heading)
        xp, cx = self._interp_table(self.cx)
        _, cy = self._interp_table(self.cy)
        hu = self._heading_unwrapped
        if self.loop:
            h_ext = np.append(hu, hu[-1] + wrap_angle(self.heading[0]
                                                      - self.heading[-1]))
        else:
            h_ext = hu
        h = np.interp(s, xp, h_ext)
        return (np.interp(s, xp, cx), np.interp(s, xp, cy),
                wrap_angle_array(h))

    def wrap_s(self, s: float) -> float:
        if self.loop:
            return s % self.s_max
        return min(max(s, 0.0), self.s_max)

    def project_to_s(self, x: float, y: float):
        """Project a world point onto the centerline.

        Returns (s, d, heading_ref): arc position of the nearest centerline
        point, signed lateral offset (positive left), and the centerline
        heading there. Ties resolve to the smaller s.
        """
        px, py = x - self._ax, y - self._ay
        t = np.clip((px * self._ex + py * self._ey) / self._elen2, 0.0, 1.0)
        fx, fy = self._ax + t * self._ex, self._ay + t * self._ey
        d2 = (x - fx) ** 2 + (y - fy) ** 2
        i = int(np.argmin(d2))  # first minimum = smaller s
        ti = float(t[i])
        # parameterize by record spacing, not chord length, so s stays
        # continuous across curved segments
        s = float(self.s[i] + ti * self.ds)
        s = self.wrap_s(s) if self.loop else min(s, self.s_max)
        # signed offset: cross(segment direction, point - foot)
        inv = 1.0 / math.sqrt(float(self._elen2[i]))
        dx, dy = self._ex[i] * inv, self._ey[i] * inv
        d = dx * (y - fy[i]) - dy * (x - fx[i])
        return s, float(d), self._heading_at(i, ti)

    def _heading_at(self, i: int, t: float) -> float:
        n = len(self.records)
        h0 = self.heading[i]
        h1 = self.heading[(i + 1) % n]
        return wrap_angle(h0 + t * wrap_angle(h1 - h0))

    def query_record(self, s: float) -> SRecord:
        """Interpolated record at s; zone fields come from the containing
        record interval."""
        if s < -1e-9 or s > self.s_max + 1e-9:
            raise OutOfRangeError(f"s={s} outside [0, {self.s_max}]")
        s = min(max(s, 0.0), self.s_max)
        n = len(self.records)
        if not self.loop and s >= self.s[-1]:
            return self.records[-1]
        i = min(int(s // self.ds), n - 1)
        t = (s - self.s[i]) / self.ds
        j = (i + 1) % n
        ri, rj = self.records[i], self.records[j]
        return SRecord(
            s=s,
            cx=ri.cx + t * (rj.cx - ri.cx),
            cy=ri.cy + t * (rj.cy - ri.cy),
            heading=wrap_angle(ri.heading + t * wrap_angle(rj.heading - ri.heading)),
            right_curb_offset=ri.right_curb_offset
            + t * (rj.right_curb_offset - ri.right_curb_offset),
            left_bound_offset=ri.left_bound_offset
            + t * (rj.left_bound_offset - ri.left_bound_offset),
            zone=ri.zone,
            zone_id=ri.zone_id,
        )

    def distance_to_next_zone(self, s: float, zone: Zone) -> Optional[float]:
        """Smallest s' - s >= 0 whose record has the given zone, or None.

        Closed loops wrap the scan around the full circumference.
        """
        if s < -1e-9 or s > self.s_max + 1e-9:
            raise OutOfRangeError(f"s={s} outside [0, {self.s_max}]")
        s = min(max(s, 0.0), self.s_max)
        if self.query_record(s).zone is zone:
            return 0.0
        best = None
        for r in self.records:
            if r.zone is not zone:
                continue
            d = r.s - s
            if d < 0:
                if not self.loop:
                    continue
                d += self.s_max
            if best is None or d < best:
                best = d
        return best

    def point_at(self, s: float, d: float = 0.0):
        """World point at (s, d); d positive to the left of the centerline."""
        r = self.query_record(self.wrap_s(s))
        nx, ny = -math.sin(r.heading), math.cos(r.heading)
        return r.cx + d * nx, r.cy + d * ny

    def forward_gap(self, s_from: float, s_to: float) -> float:
        """Arc distance from s_from forward to s_to (wraps on loops)."""
        gap = s_to - s_from
        if self.loop:
            gap %= self.s_max
        return gap


@dataclass
class EgoParams:
    """Shuttle body geometry shared by decision, planning, and safety."""

    length: float = 5.5
    width: float = 2.0
    wheelbase: float = 4.5

    def footprint(self, x: float, y: float, psi: float) -> np.ndarray:
        c, s = math.cos(psi), math.sin(psi)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([x, y])


def rect_distance(corners_a: np.ndarray, corners_b: np.ndarray) -> float:
    """Euclidean clearance between two convex quads (0 when overlapping)."""
    def edges(c):
        return [(c[i], c[(i + 1) % len(c)]) for i in range(len(c))]

    def seg_dist(p, a, b):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom < 1e-12 else float(np.clip((p - a) @ ab / denom,
                                                    0.0, 1.0))
        return float(np.hypot(*(p - (a + t * ab))))

    def contains(c, p):
        sign = 0.0
        for a, b in edges(c):
            cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
            if abs(cross) < 1e-12:
                continue
            if sign == 0.0:
                sign = cross
            elif cross * sign < 0:
                return False
        return True

    if any(contains(corners_a, p) for p in corners_b) or \
       any(contains(corners_b, p) for p in corners_a):
        return 0.0
    best = math.inf
    for a0, a1 in edges(corners_a):
        for p in corners_b:
            best = min(best, seg_dist(p, a0, a1))
    for b0, b1 in edges(corners_b):
        for p in corners_a:
            best = min(best, seg_dist(p, b0, b1))
    return best


@dataclass
class WorldState:
    """Ground-truth world: the map plus all scripted actors.

    Owned by the single simulation loop; HDMap itself is immutable."""

    hd_map: HDMap
    actors: list = field(default_factory=list)

    def actor_by_id(self, actor_id: int) -> Optional[ObstacleActor]:
        for a in self.actors:
            if a.id == actor_id:
                return a
        return None


# ---------------------------------------------------------------------------
# Map builders used by tests, demos, and shipped scenario assets.

def _records_from_polyline(xs, ys, ds, right_curb, left_bound):
    headings = np.zeros(len(xs))
    dx = np.gradient(xs)
    dy = np.gradient(ys)
    headings = np.arctan2(dy, dx)
    recs = []
    for i in range(len(xs)):
        recs.append(SRecord(
            s=i * ds, cx=float(xs[i]), cy=float(ys[i]),
            heading=float(wrap_angle(headings[i])),
            right_curb_offset=right_curb, left_bound_offset=left_bound))
    return recs


def apply_zones(records: list, zones: list) -> None:
    """zones: list of (s_start, s_end, Zone, zone_id) applied in place."""
    for s0, s1, zone, zid in zones:
        for r in records:
            if s0 <= r.s <= s1:
                r.zone = zone
                r.zone_id = zid


def make_straight_map(length: float = 300.0, ds: float = 0.5,
                      right_curb: float = 3.5, left_bound: float = 3.0,
                      zones: Optional[list] = None,
                      landmarks: Optional[list] = None) -> HDMap:
    n = int(round(length / ds)) + 1
    xs = np.arange(n) * ds
    ys = np.zeros(n)
    recs = _records_from_polyline(xs, ys, ds, right_curb, left_bound)
    apply_zones(recs, zones or [])
    return HDMap(recs, landmarks)


def make_loop_map(straight: float = 80.0, radius: float = 60.0, ds: float = 0.5,
                  right_curb: float = 3.5, left_bound: float = 3.0,
                  zones: Optional[list] = None,
                  landmarks: Optional[list] = None) -> HDMap:
    """Counterclockwise rounded-rectangle loop: two straights joined by two
    half circles. Total length = 2 * straight + 2 * pi * radius."""
    total = 2.0 * straight + TWO_PI * radius
    n = int(round(total / ds))
    ds_eff = total / n
    pts = []
    for i in range(n):
        s = i * ds_eff
        if s < straight:
            pts.append((s, 0.0, 0.0))
        elif s < straight + math.pi * radius:
            a = (s - straight) / radius
            pts.append((straight + radius * math.sin(a),
                        radius * (1.0 - math.cos(a)), a))
        elif s < 2.0 * straight + math.pi * radius:
            u = s - straight - math.pi * radius
            pts.append((straight - u, 2.0 * radius, math.pi))
        else:
            a = (s - 2.0 * straight - math.pi * radius) / radius
            pts.append((-radius * math.sin(a),
                        radius * (1.0 + math.cos(a)), math.pi + a))
    recs = []
    for i, (x, y, h) in enumerate(pts):
        recs.append(SRecord(s=i * ds_eff, cx=x, cy=y, heading=wrap_angle(h),
                            right_curb_offset=right_curb,
                            left_bound_offset=left_bound))
    apply_zones(recs, zones or [])
    return HDMap(recs, landmarks)
