"""LiDAR-first perception: adaptive-grid ground segmentation, weather-noise
filtering, DBSCAN clustering, curb detection with a lateral residual model,
and radar-LiDAR-camera late fusion with frustum association.

Range regions use stricter plane-residual thresholds near the vehicle and
looser ones far away; the noise filter widens its neighborhood radius with
range to respect beam spreading. The curb stage is conservative: observed
near-ground returns can only pull the boundary road-inward, never outward.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .sensors import CameraRig, PointCloud, RadarReturn, ego_to_world
from .world import ActorKind, HDMap, VehicleState, wrap_angle


@dataclass
class PerceptionConfig:
    # ground segmentation
    region_edges: tuple = (10.0, 25.0)  # ring boundaries within lidar range
    region_thresholds: tuple = (0.05, 0.10, 0.20)
    min_region_points: int = 10
    irls_iterations: int = 3
    # weather noise filter
    noise_min_neighbors: int = 3
    noise_radius: float = 0.3
    noise_range_scale: float = 20.0
    # clustering
    dbscan_eps: float = 0.7
    dbscan_min_pts: int = 4
    # curb detection
    curb_band: float = 1.0
    curb_z_max: float = 0.45
    curb_cell: float = 1.0
    curb_span: float = 40.0
    pseudo_weight: float = 0.3
    beyond_curb_weight: float = 0.02
    cell_outlier_margin: float = 0.35
    reassign_margin: float = 0.08
    # fusion
    radar_gate: float = 2.0
    track_gate: float = 1.5


@dataclass
class GroundSegmentation:
    ground_idx: np.ndarray
    obstacle_idx: np.ndarray
    region_planes: list  # (a, b, c, d) per region, unit normal
    region_of_point: np.ndarray  # region index per cloud point


@dataclass
class LidarCluster:
    x_li: float
    y_li: float
    z_li: float
    w: float  # lateral extent (ego y)
    h: float  # vertical extent
    l: float  # longitudinal extent (ego x)
    member_idx: np.ndarray
    hull: np.ndarray  # (M, 2) convex polygon in ego xy

    @property
    def range(self) -> float:
        return math.hypot(self.x_li, self.y_li)


@dataclass
class CurbEstimate:
    boundary_points: list  # ordered (s, offset) samples, offset > 0 right
    model: dict  # region label -> quadratic coefficients on (u, residual)
    confidence: float
    candidate_idx: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=int))
    reassigned_idx: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=int))

    def offset_at(self, s: float) -> float:
        if not self.boundary_points:
            return math.inf
        pts = self.boundary_points
        ss = [p[0] for p in pts]
        return float(np.interp(s, ss, [p[1] for p in pts]))


@dataclass
class FusedObject:
    x: float
    y: float
    z: float
    w: float
    h: float
    l: float
    vx: float
    vy: float
    cls: ActorKind
    sources: frozenset  # subset of {"lidar", "radar", "camera"}
    id: int = -1

    def __post_init__(self):
        if "camera" not in self.sources and self.cls is not ActorKind.UNKNOWN:
            raise ValueError("objects without a camera match must be unknown")


# ---------------------------------------------------------------------------
# Ground segmentation

def _fit_plane_irls(pts: np.ndarray, iterations: int) -> np.ndarray:
    """Fit z = a*x + b*y + c by iteratively reweighted least squares,
    Huber-style weights on the residual; returns (a, b, c)."""
    A = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    z = pts[:, 2]
    w = np.ones(len(pts))
    coef = np.zeros(3)
    for _ in range(max(1, iterations)):
        Aw = A * w[:, None]
        coef, *_ = np.linalg.lstsq(Aw, z * w, rcond=None)
        resid = np.abs(A @ coef - z)
        scale = max(1.4826 * np.median(resid), 1e-3)
        w = np.where(resid <= scale, 1.0,
                     scale / np.maximum(resid, 1e-12))
    return coef


def segment_ground(cloud: PointCloud, hd_map: HDMap, ego_s: float,
                   config: Optional[PerceptionConfig] = None) -> GroundSegmentation:
    """Partition the cloud into ground and obstacle points.

    The cloud is split into range-ring regions; each region gets its own
    plane via reweighted fitting (seeded from the near-horizontal road
    plane implied by the map at ego_s). A region with too few points
    inherits the nearest fitted region's plane.
    """
    cfg = config or PerceptionConfig()
    n = len(cloud)
    edges = (0.0,) + tuple(cfg.region_edges) + (math.inf,)
    n_regions = len(edges) - 1
    if n == 0:
        return GroundSegmentation(
            ground_idx=np.zeros(0, dtype=int),
            obstacle_idx=np.zeros(0, dtype=int),
            region_planes=[(0.0, 0.0, 1.0, 0.0)] * n_regions,
            region_of_point=np.zeros(0, dtype=int))

    xyz = cloud.xyz
    ranges = np.hypot(xyz[:, 0], xyz[:, 1])
    region = np.digitize(ranges, edges[1:-1])

    coefs = [None] * n_regions
    for r in range(n_regions):
        mask = region == r
        pts = xyz[mask]
        # seed: points near the nominal road plane (z = 0 in body frame)
        seed = pts[np.abs(pts[:, 2]) <= 0.3]
        if len(seed) < cfg.min_region_points:
            continue  # degenerate region, plane inherited below
        coefs[r] = _fit_plane_irls(seed, cfg.irls_iterations)

    fitted = [r for r in range(n_regions) if coefs[r] is not None]
    for r in range(n_regions):
        if coefs[r] is None:
            if fitted:
                nearest = min(fitted, key=lambda f: abs(f - r))
                coefs[r] = coefs[nearest]
            else:
                coefs[r] = np.array([0.0, 0.0, 0.0])  # flat fallback

    thresholds = np.array(cfg.region_thresholds)[region]
    a = np.array([coefs[r][0] for r in range(n_regions)])[region]
    b = np.array([coefs[r][1] for r in range(n_regions)])[region]
    c0 = np.array([coefs[r][2] for r in range(n_regions)])[region]
    resid = np.abs(a * xyz[:, 0] + b * xyz[:, 1] + c0 - xyz[:, 2])
    is_ground = resid <= thresholds

    planes = []
    for r in range(n_regions):
        ca, cb, cc = coefs[r]
        norm = math.sqrt(ca * ca + cb * cb + 1.0)
        planes.append((ca / norm, cb / norm, -1.0 / norm, cc / norm))

    idx = np.arange(n)
    return GroundSegmentation(
        ground_idx=idx[is_ground],
        obstacle_idx=idx[~is_ground],
        region_planes=planes,
        region_of_point=region)


# ---------------------------------------------------------------------------
# Weather-noise filtering

def filter_weather_noise(seg: GroundSegmentation, cloud: PointCloud,
                         config: Optional[PerceptionConfig] = None) -> np.ndarray:
    """Drop isolated obstacle points (raindrops / snowflakes).

    A point is noise iff it has fewer than noise_min_neighbors other
    obstacle points within a radius that grows with range.
    """
    cfg = config or PerceptionConfig()
    obs = seg.obstacle_idx
    if len(obs) == 0:
        return obs.copy()
    pts = cloud.xyz[obs]
    ranges = np.hypot(pts[:, 0], pts[:, 1])
    radii = cfg.noise_radius * (1.0 + ranges / cfg.noise_range_scale)
    tree = cKDTree(pts)
    neighborhoods = tree.query_ball_point(pts, r=radii)
    counts = np.fromiter((len(nb) - 1 for nb in neighborhoods),
                         dtype=int, count=len(pts))
    keep = counts >= cfg.noise_min_neighbors
    return obs[keep]


# ---------------------------------------------------------------------------
# DBSCAN clustering

def dbscan_labels(pts: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Plain DBSCAN labels (-1 noise). Border points are attached to the
    cluster of their nearest core neighbor so the labeling is invariant to
    input ordering (up to cluster renumbering)."""
    n = len(pts)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    tree = cKDTree(pts)
    neighborhoods = [sorted(tree.query_ball_point(pts[i], r=eps))
                     for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighborhoods])
    cluster_id = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster_id
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighborhoods[j]:
                if labels[k] == -1:
                    labels[k] = cluster_id
                    if core[k]:
                        queue.append(k)
        cluster_id += 1
    # deterministic border assignment: nearest core neighbor wins
    for i in range(n):
        if core[i] or labels[i] == -1:
            continue
        best = None
        for k in neighborhoods[i]:
            if not core[k]:
                continue
            d = float(np.linalg.norm(pts[i] - pts[k]))
            key = (d, tuple(pts[k]))
            if best is None or key < best[0]:
                best = (key, labels[k])
        if best is not None:
            labels[i] = best[1]
    return labels


def _convex_hull_2d(pts: np.ndarray) -> np.ndarray:
    """Monotone-chain hull; degenerate inputs return their extreme points."""
    uniq = np.unique(pts, axis=0)
    if len(uniq) <= 2:
        return uniq
    order = np.lexsort((uniq[:, 1], uniq[:, 0]))
    p = uniq[order]

    def half(points):
        out = []
        for q in points:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (q[1] - o[1]) - (a[1] - o[1]) * (q[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(q)
        return out

    lower = half(p)
    upper = half(p[::-1])
    return np.array(lower[:-1] + upper[:-1])


def cluster_obstacles(points: np.ndarray,
                      point_idx: Optional[np.ndarray] = None,
                      config: Optional[PerceptionConfig] = None) -> list:
    """DBSCAN the obstacle points into LidarClusters (ego frame)."""
    cfg = config or PerceptionConfig()
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if point_idx is None:
        point_idx = np.arange(len(points))
    labels = dbscan_labels(points, cfg.dbscan_eps, cfg.dbscan_min_pts)
    clusters = []
    for cid in range(labels.max() + 1 if len(labels) else 0):
        mask = labels == cid
        members = points[mask]
        lo, hi = members.min(axis=0), members.max(axis=0)
        centroid = members.mean(axis=0)
        clusters.append(LidarCluster(
            x_li=float(centroid[0]), y_li=float(centroid[1]),
            z_li=float(centroid[2]),
            w=max(float(hi[1] - lo[1]), 0.1),
            h=max(float(hi[2] - lo[2]), 0.1),
            l=max(float(hi[0] - lo[0]), 0.1),
            member_idx=np.sort(point_idx[mask]),
            hull=_convex_hull_2d(members[:, :2])))
    clusters.sort(key=lambda c: int(c.member_idx[0]) if len(c.member_idx) else 0)
    return clusters


# ---------------------------------------------------------------------------
# Curb detection

def _wrap_rel(s: np.ndarray, ego_s: float, hd_map: HDMap) -> np.ndarray:
    u = s - ego_s
    if hd_map.loop:
        half = hd_map.s_max / 2.0
        u = (u + half) % hd_map.s_max - half
    return u


def detect_curb(seg: GroundSegmentation, cloud: PointCloud, hd_map: HDMap,
                ego: VehicleState, snow: bool,
                obstacle_idx: Optional[np.ndarray] = None,
                config: Optional[PerceptionConfig] = None) -> CurbEstimate:
    """Estimate the drivable right boundary from near-ground returns.

    Candidate points in the map-indicated curb band are binned into 1 m
    s-cells; empty cells are filled with pseudo-points at the map curb
    value. A quadratic residual-vs-map model is fit per signed range
    region with robust reweighting; under snow the fit may only move the
    boundary road-inward. Candidate points clearly on the road side of the
    final boundary are handed back as obstacles.
    """
    cfg = config or PerceptionConfig()
    obs = seg.obstacle_idx if obstacle_idx is None else obstacle_idx
    ego_s, _, _ = hd_map.project_to_s(ego.x, ego.y)

    # cell grid in ego-relative arc coordinate u
    half_span = cfg.curb_span
    cell = cfg.curb_cell
    u_edges = np.arange(-half_span, half_span + cell, cell)
    u_centers = 0.5 * (u_edges[:-1] + u_edges[1:])
    n_cells = len(u_centers)
    if not hd_map.loop:
        valid_cells = ((ego_s + u_centers) >= 0) & (
            (ego_s + u_centers) <= hd_map.s_max)
    else:
        valid_cells = np.ones(n_cells, dtype=bool)

    cell_s = np.array([hd_map.wrap_s(ego_s + u) for u in u_centers])
    map_curb = hd_map.curb_offset_at(cell_s)

    candidate_mask = np.zeros(0, dtype=bool)
    cand_idx = np.zeros(0, dtype=int)
    cell_value = np.full(n_cells, np.nan)  # innermost near-ground return
    cell_outer = np.full(n_cells, np.nan)  # outermost near-ground return
    cell_points: list = [[] for _ in range(n_cells)]

    if len(obs):
        pts_world = ego_to_world(ego, cloud.xyz[obs])
        s_pt, d_pt = hd_map.project_many(pts_world[:, :2])
        z_pt = cloud.xyz[obs][:, 2]
        curb_pt = hd_map.curb_offset_at(s_pt)
        offset = -d_pt  # distance right of centerline, positive in band
        in_band = np.abs(offset - curb_pt) <= cfg.curb_band
        near_ground = z_pt <= cfg.curb_z_max
        candidate_mask = in_band & near_ground
        cand_idx = obs[candidate_mask]
        u_pt = _wrap_rel(s_pt[candidate_mask], ego_s, hd_map)
        off_c = offset[candidate_mask]
        bins = np.floor((u_pt + half_span) / cell).astype(int)
        for i, (b, off) in enumerate(zip(bins, off_c)):
            if 0 <= b < n_cells:
                cell_points[b].append((off, i))
        for b in range(n_cells):
            if cell_points[b]:
                offs = [off for off, _ in cell_points[b]]
                cell_value[b] = min(offs)
                cell_outer[b] = max(offs)

    real = ~np.isnan(cell_value) & valid_cells
    n_valid = int(valid_cells.sum())
    if not real.any():
        boundary = [(float(cell_s[i]), float(np.clip(map_curb[i], 0.2, 8.0)))
                    for i in range(n_cells) if valid_cells[i]]
        return CurbEstimate(boundary_points=_sorted_boundary(boundary),
                            model={}, confidence=0.0,
                            candidate_idx=cand_idx,
                            reassigned_idx=np.zeros(0, dtype=int))

    values = np.where(real, cell_value, map_curb)
    weights = np.where(real, 1.0, cfg.pseudo_weight)
    if snow:
        weights = np.where(values > map_curb + 0.02,
                           cfg.beyond_curb_weight, weights)
    residual = values - map_curb

    # signed range regions: behind/ahead treated separately
    edge_list = [0.0] + list(cfg.region_edges) + [half_span]
    fit_value = np.array(map_curb, dtype=float)
    model = {}
    for sign in (-1, 1):
        for ri in range(len(edge_list) - 1):
            lo, hi = edge_list[ri], edge_list[ri + 1]
            if sign > 0:
                sel = (u_centers >= lo) & (u_centers < hi)
            else:
                sel = (u_centers <= -lo) & (u_centers > -hi)
            sel &= valid_cells
            if not sel.any():
                continue
            coeffs = _robust_quadratic(u_centers[sel], residual[sel],
                                       weights[sel])
            model[("ahead" if sign > 0 else "behind", ri)] = coeffs
            fit_value[sel] = map_curb[sel] + np.polyval(coeffs,
                                                        u_centers[sel])

    # snap to real evidence: a wall consistent with the model pulls the
    # boundary inward; an inward outlier is an object, so fall back to the
    # cell's outer structure (the curb behind it) when that one agrees
    boundary_value = fit_value.copy()
    with np.errstate(invalid="ignore"):
        inner_ok = real & (np.abs(cell_value - fit_value)
                           <= cfg.cell_outlier_margin)
        outer_ok = real & ~inner_ok & (np.abs(cell_outer - fit_value)
                                       <= cfg.cell_outlier_margin)
    boundary_value[inner_ok] = np.minimum(fit_value[inner_ok],
                                          cell_value[inner_ok])
    boundary_value[outer_ok] = np.minimum(fit_value[outer_ok],
                                          cell_outer[outer_ok])
    if snow:
        boundary_value = np.minimum(boundary_value, map_curb)
    boundary_value = np.clip(boundary_value, 0.2, 8.0)

    # points clearly road-side of the final boundary go back to obstacles
    reassigned = []
    if len(cand_idx):
        for b in range(n_cells):
            for off, i in cell_points[b]:
                if off < boundary_value[b] - cfg.reassign_margin:
                    reassigned.append(cand_idx[i])
    boundary = [(float(cell_s[i]), float(boundary_value[i]))
                for i in range(n_cells) if valid_cells[i]]
    return CurbEstimate(
        boundary_points=_sorted_boundary(boundary),
        model=model,
        confidence=float(real.sum()) / max(n_valid, 1),
        candidate_idx=cand_idx,
        reassigned_idx=np.array(sorted(reassigned), dtype=int))


def _sorted_boundary(boundary: list) -> list:
    return sorted(boundary, key=lambda p: p[0])


def _robust_quadratic(u: np.ndarray, r: np.ndarray,
                      w: np.ndarray) -> np.ndarray:
    """Weighted quadratic fit with reweighting rounds against outlier
    cells; falls back to lower order for tiny cell counts. Returns
    highest-degree-first coefficients in raw u."""
    deg = 2 if len(u) >= 5 else (1 if len(u) >= 3 else 0)
    u0 = float(u.mean())
    uc = u - u0
    V = np.vander(uc, deg + 1)  # columns: uc^deg ... 1
    w_cur = w.astype(float).copy()
    coeffs = np.zeros(deg + 1)
    for _ in range(3):
        Vw = V * w_cur[:, None]
        A = V.T @ Vw
        b = Vw.T @ r
        coeffs = np.linalg.solve(A + 1e-12 * np.eye(deg + 1), b)
        resid = np.abs(V @ coeffs - r)
        scale = max(1.4826 * float(np.median(resid)), 0.05)
        w_cur = w * np.where(resid <= scale, 1.0,
                             (scale / np.maximum(resid, 1e-12)) ** 2)
    # expand about u0: p(u) = a (u-u0)^2 + b (u-u0) + c
    full = np.zeros(3)
    if deg == 2:
        a2, a1, a0 = coeffs
        full[:] = (a2, a1 - 2 * a2 * u0, a0 - a1 * u0 + a2 * u0 * u0)
    elif deg == 1:
        a1, a0 = coeffs
        full[:] = (0.0, a1, a0 - a1 * u0)
    else:
        full[:] = (0.0, 0.0, coeffs[0])
    return full


# ---------------------------------------------------------------------------
# Late fusion

def fuse_detections(clusters: list, radar: list, cams: list,
                    ego: VehicleState, rig: Optional[CameraRig] = None,
                    config: Optional[PerceptionConfig] = None) -> list:
    """Associate radar returns and camera boxes to LiDAR clusters.

    Radar returns snap to the nearest cluster inside the gate; returns with
    no cluster nearby are discarded as false alarms. Clusters then claim
    camera boxes by projected containment in depth order; objects without a
    camera match are labeled unknown. Output positions are world frame.
    """
    cfg = config or PerceptionConfig()
    rig = rig or CameraRig()

    velocity = [None] * len(clusters)
    if clusters and radar:
        centroids = np.array([[c.x_li, c.y_li] for c in clusters])
        for ret in radar:
            d = np.hypot(centroids[:, 0] - ret.x_r, centroids[:, 1] - ret.y_r)
            j = int(np.argmin(d))
            if d[j] > cfg.radar_gate:
                continue  # false alarm: no supporting cluster
            if velocity[j] is None or d[j] < velocity[j][0]:
                velocity[j] = (float(d[j]), ret)

    order = sorted(range(len(clusters)), key=lambda i: clusters[i].range)
    claimed = [False] * len(cams)
    cam_match = [None] * len(clusters)
    for i in order:
        c = clusters[i]
        centroid = np.array([c.x_li, c.y_li, c.z_li])
        best = None
        for cam_id in range(rig.n_cams):
            px = rig.pixel_of(cam_id, centroid)
            if px is None:
                continue
            u, v, _ = px
            for bi, box in enumerate(cams):
                if claimed[bi] or box.cam_id != cam_id:
                    continue
                if (abs(u - box.x_i) <= box.w_i / 2.0
                        and abs(v - box.y_i) <= box.h_i / 2.0):
                    score = math.hypot(u - box.x_i, v - box.y_i)
                    if best is None or score < best[0]:
                        best = (score, bi)
        if best is not None:
            claimed[best[1]] = True
            cam_match[i] = cams[best[1]]

    cos_p, sin_p = math.cos(ego.psi), math.sin(ego.psi)
    fused = []
    for i, c in enumerate(clusters):
        wx = ego.x + cos_p * c.x_li - sin_p * c.y_li
        wy = ego.y + sin_p * c.x_li + cos_p * c.y_li
        sources = {"lidar"}
        vx = vy = 0.0
        if velocity[i] is not None:
            ret = velocity[i][1]
            vx = cos_p * ret.vx - sin_p * ret.vy
            vy = sin_p * ret.vx + cos_p * ret.vy
            sources.add("radar")
        cls = ActorKind.UNKNOWN
        if cam_match[i] is not None:
            sources.add("camera")
            cls = cam_match[i].c
        fused.append(FusedObject(
            x=wx, y=wy, z=c.z_li, w=c.w, h=c.h, l=c.l, vx=vx, vy=vy,
            cls=cls, sources=frozenset(sources)))
    return fused


class ObjectTracker:
    """Nearest-neighbor id carry-over between ticks (gate in meters)."""

    def __init__(self, gate: float = 1.5):
        self.gate = gate
        self._next_id = 1
        self._prev: list = []  # (id, x, y)

    def assign(self, objects: list) -> list:
        pairs = []
        for oi, obj in enumerate(objects):
            for (tid, px, py) in self._prev:
                d = math.hypot(obj.x - px, obj.y - py)
                if d <= self.gate:
                    pairs.append((d, oi, tid))
        pairs.sort()
        used_obj, used_tid = set(), set()
        for d, oi, tid in pairs:
            if oi in used_obj or tid in used_tid:
                continue
            objects[oi].id = tid
            used_obj.add(oi)
            used_tid.add(tid)
        for oi, obj in enumerate(objects):
            if oi not in used_obj:
                obj.id = self._next_id
                self._next_id += 1
        self._prev = [(o.id, o.x, o.y) for o in objects]
        return objects


# ---------------------------------------------------------------------------
# Whole-pipeline convenience used by the simulation loop and tests

@dataclass
class PerceptionResult:
    seg: GroundSegmentation
    survivors_idx: np.ndarray
    noise_idx: np.ndarray
    curb: CurbEstimate
    cluster_input_idx: np.ndarray
    clusters: list
    fused: list


def perceive(cloud: PointCloud, radar: list, cams: list, hd_map: HDMap,
             ego: VehicleState, snow: bool,
             tracker: Optional[ObjectTracker] = None,
             rig: Optional[CameraRig] = None,
             config: Optional[PerceptionConfig] = None) -> PerceptionResult:
    cfg = config or PerceptionConfig()
    ego_s, _, _ = hd_map.project_to_s(ego.x, ego.y)
    seg = segment_ground(cloud, hd_map, ego_s, cfg)
    survivors = filter_weather_noise(seg, cloud, cfg)
    noise_idx = np.setdiff1d(seg.obstacle_idx, survivors)
    curb = detect_curb(seg, cloud, hd_map, ego, snow,
                       obstacle_idx=survivors, config=cfg)
    claimed = np.setdiff1d(curb.candidate_idx, curb.reassigned_idx)
    cluster_input = np.setdiff1d(survivors, claimed)
    clusters = cluster_obstacles(cloud.xyz[cluster_input], cluster_input, cfg)
    fused = fuse_detections(clusters, radar, cams, ego, rig, cfg)
    if tracker is not None:
        fused = tracker.assign(fused)
    return PerceptionResult(seg=seg, survivors_idx=survivors,
                            noise_idx=noise_idx, curb=curb,
                            cluster_input_idx=cluster_input,
                            clusters=clusters, fused=fused)
