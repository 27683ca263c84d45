import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from shuttlesim.perception import (CurbEstimate, FusedObject, ObjectTracker,
                                   PerceptionConfig, cluster_obstacles,
                                   dbscan_labels, detect_curb,
                                   filter_weather_noise, fuse_detections,
                                   perceive, segment_ground)
from shuttlesim.scenario import WeatherMode, WeatherSpec
from shuttlesim.sensors import (CameraDetection, CameraRig, PointCloud,
                                RadarReturn, SensorConfig,
                                gen_camera_detections, gen_lidar_scan,
                                gen_radar_returns)
from shuttlesim.world import (ActorKind, ObstacleActor, VehicleState,
                              WorldState, make_straight_map)


def cloud_of(pts):
    pts = np.asarray(pts, dtype=float)
    return PointCloud(pts, np.zeros(len(pts), dtype=bool))


def flat_world():
    return make_straight_map(length=200.0, ds=0.5)


EGO = VehicleState(x=50.0, y=0.0, psi=0.0, v=0.0)
CLEAR = WeatherSpec(mode=WeatherMode.CLEAR, noise_density=0.0,
                    camera_dropout=0.0)


# ---------------------------------------------------------------------------
# Ground segmentation

class TestSegmentGround:
    def test_perfect_plane_all_ground(self):
        rng = np.random.default_rng(0)
        xy = rng.uniform(-20, 20, size=(600, 2))
        pts = np.column_stack([xy, np.zeros(600)])
        seg = segment_ground(cloud_of(pts), flat_world(), 50.0)
        assert len(seg.ground_idx) == 600
        assert len(seg.obstacle_idx) == 0

    def test_elevated_box_is_obstacle(self):
        rng = np.random.default_rng(1)
        xy = rng.uniform(-20, 20, size=(500, 2))
        ground = np.column_stack([xy, np.zeros(500)])
        box = np.column_stack([rng.uniform(4, 6, size=(60, 2)),
                               rng.uniform(0.5, 2.0, 60)])
        cloud = cloud_of(np.vstack([ground, box]))
        seg = segment_ground(cloud, flat_world(), 50.0)
        assert set(range(500, 560)) <= set(seg.obstacle_idx.tolist())
        # threshold comparison oracle: residual vs per-region threshold
        cfg = PerceptionConfig()
        for i in seg.obstacle_idx:
            r = math.hypot(cloud.xyz[i, 0], cloud.xyz[i, 1])
            region = 0 if r < 10 else (1 if r < 25 else 2)
            assert abs(cloud.xyz[i, 2]) > cfg.region_thresholds[region] - 1e-6

    def test_empty_cloud(self):
        seg = segment_ground(PointCloud.empty(), flat_world(), 0.0)
        assert len(seg.ground_idx) == 0
        assert len(seg.obstacle_idx) == 0

    def test_degenerate_region_inherits_plane(self):
        # all points in the near ring; far regions inherit its plane
        rng = np.random.default_rng(2)
        xy = rng.uniform(-5, 5, size=(200, 2))
        pts = np.column_stack([xy, np.zeros(200)])
        seg = segment_ground(cloud_of(pts), flat_world(), 50.0)
        assert len(seg.region_planes) == 3
        assert seg.region_planes[0] == seg.region_planes[2]

    def test_partition(self):
        rng = np.random.default_rng(3)
        pts = np.column_stack([rng.uniform(-30, 30, size=(800, 2)),
                               rng.uniform(-0.2, 2.0, 800)])
        seg = segment_ground(cloud_of(pts), flat_world(), 50.0)
        both = set(seg.ground_idx.tolist()) & set(seg.obstacle_idx.tolist())
        assert not both
        assert len(seg.ground_idx) + len(seg.obstacle_idx) == 800


# ---------------------------------------------------------------------------
# Weather-noise filter

class TestNoiseFilter:
    def test_isolated_point_removed(self):
        pts = [[5.0, 0.0, 10.0]] + [[x, 0.0, 0.0]
                                    for x in np.linspace(-5, 5, 50)]
        cloud = cloud_of(pts)
        seg = segment_ground(cloud, flat_world(), 50.0)
        assert 0 in seg.obstacle_idx
        survivors = filter_weather_noise(seg, cloud)
        assert 0 not in survivors

    def test_dense_cluster_retained(self):
        rng = np.random.default_rng(4)
        blob = np.column_stack([
            8.0 + rng.uniform(-0.15, 0.15, 25),
            rng.uniform(-0.15, 0.15, 25),
            rng.uniform(0.8, 1.2, 25)])
        cloud = cloud_of(blob)
        seg = segment_ground(cloud, flat_world(), 50.0)
        survivors = filter_weather_noise(seg, cloud)
        # neighbor-count oracle: everyone has >= 3 neighbors within 0.3*(1+r/20)
        assert set(survivors.tolist()) == set(seg.obstacle_idx.tolist())

    def test_statistics_on_seeded_scans(self):
        # smaller version of the acceptance criterion: one scan per seed
        ped = ObstacleActor(id=1, kind=ActorKind.PEDESTRIAN, x=60.0, y=0.0)
        world = WorldState(hd_map=flat_world(), actors=[ped])
        weather = WeatherSpec(mode=WeatherMode.SNOW, noise_density=1.0,
                              camera_dropout=0.25)
        removed_noise = kept_noise = removed_actor = kept_actor = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            cloud = gen_lidar_scan(world, EGO, weather, rng)
            seg = segment_ground(cloud, world.hd_map, 50.0)
            survivors = set(filter_weather_noise(seg, cloud).tolist())
            actor_mask = (np.abs(cloud.xyz[:, 0] - 10.0) < 0.5) \
                & (np.abs(cloud.xyz[:, 1]) < 0.5) & (cloud.xyz[:, 2] > 0.08)
            for i in seg.obstacle_idx.tolist():
                if cloud.is_truth_noise[i]:
                    if i in survivors:
                        kept_noise += 1
                    else:
                        removed_noise += 1
                elif actor_mask[i]:
                    if i in survivors:
                        kept_actor += 1
                    else:
                        removed_actor += 1
        assert removed_noise / max(removed_noise + kept_noise, 1) >= 0.9
        assert removed_actor / max(removed_actor + kept_actor, 1) <= 0.05


# ---------------------------------------------------------------------------
# DBSCAN

def dbscan_reference(pts, eps, min_pts):
    """Independent reference: adjacency matrix + connected components over
    core points; border points attach to their nearest core (ties by the
    core's coordinates)."""
    n = len(pts)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    adj = dist <= eps
    core = adj.sum(axis=1) >= min_pts
    core_idx = np.where(core)[0]
    if len(core_idx) == 0:
        return labels
    sub = adj[np.ix_(core_idx, core_idx)]
    n_comp, comp = connected_components(csr_matrix(sub), directed=False)
    # renumber components by smallest member for determinism
    order = {}
    for ci in range(n_comp):
        order[ci] = core_idx[comp == ci].min()
    ranks = {ci: rank for rank, ci in
             enumerate(sorted(order, key=lambda c: order[c]))}
    for k, i in enumerate(core_idx):
        labels[i] = ranks[comp[k]]
    for i in range(n):
        if core[i]:
            continue
        cands = [j for j in np.where(adj[i])[0] if core[j]]
        if not cands:
            continue
        best = min(cands, key=lambda j: (dist[i, j], tuple(pts[j])))
        labels[i] = labels[best]
    return labels


def label_sets(labels):
    out = set()
    for c in range(labels.max() + 1 if len(labels) else 0):
        members = frozenset(np.where(labels == c)[0].tolist())
        if members:
            out.add(members)
    return out


class TestDbscan:
    def test_empty(self):
        assert cluster_obstacles(np.zeros((0, 3))) == []

    def test_single_ball(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(-0.15, 0.15, size=(10, 3)) + [5, 0, 1]
        clusters = cluster_obstacles(pts)
        assert len(clusters) == 1
        assert len(clusters[0].member_idx) == 10
        ref = dbscan_reference(pts, 0.7, 4)
        assert label_sets(ref) == {frozenset(range(10))}

    def test_two_balls(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(-0.2, 0.2, size=(12, 3)) + [5, 0, 1]
        b = rng.uniform(-0.2, 0.2, size=(12, 3)) + [10, 0, 1]
        clusters = cluster_obstacles(np.vstack([a, b]))
        assert len(clusters) == 2
        sizes = sorted(len(c.member_idx) for c in clusters)
        assert sizes == [12, 12]

    def test_matches_reference_on_random_sets(self):
        cfg = PerceptionConfig()
        rng = np.random.default_rng(7)
        for trial in range(60):
            n = rng.integers(0, 40)
            pts = rng.uniform(-4, 4, size=(n, 3))
            mine = dbscan_labels(pts, cfg.dbscan_eps, cfg.dbscan_min_pts)
            ref = dbscan_reference(pts, cfg.dbscan_eps, cfg.dbscan_min_pts)
            assert label_sets(mine) == label_sets(ref), f"trial {trial}"

    def test_matches_sklearn_core_points(self):
        from sklearn.cluster import DBSCAN
        rng = np.random.default_rng(8)
        for trial in range(30):
            n = int(rng.integers(5, 50))
            pts = rng.uniform(-4, 4, size=(n, 3))
            mine = dbscan_labels(pts, 0.7, 4)
            sk = DBSCAN(eps=0.7, min_samples=4).fit(pts)
            core = np.zeros(n, dtype=bool)
            core[sk.core_sample_indices_] = True
            mine_sets = set()
            sk_sets = set()
            for c in set(mine[core].tolist()):
                mine_sets.add(frozenset(
                    np.where((mine == c) & core)[0].tolist()))
            for c in set(sk.labels_[core].tolist()):
                sk_sets.add(frozenset(
                    np.where((sk.labels_ == c) & core)[0].tolist()))
            assert mine_sets == sk_sets

    @given(st.integers(0, 2 ** 31 - 1), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_order_invariance(self, seed, perm_seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(0, 30))
        pts = rng.uniform(-3, 3, size=(n, 3))
        perm = np.random.default_rng(perm_seed).permutation(n)
        base = label_sets(dbscan_labels(pts, 0.7, 4))
        shuffled = dbscan_labels(pts[perm], 0.7, 4)
        # map shuffled indices back to original ids
        remapped = set()
        for members in label_sets(shuffled):
            remapped.add(frozenset(int(perm[i]) for i in members))
        assert base == remapped

    def test_cluster_geometry(self):
        pts = np.array([[5, 0, 0.5], [5.2, 0, 0.5], [5.4, 0, 0.5],
                        [5.2, 0.3, 1.0]])
        clusters = cluster_obstacles(pts)
        assert len(clusters) == 1
        c = clusters[0]
        assert c.l == pytest.approx(0.4, abs=1e-9)
        assert c.w == pytest.approx(0.3, abs=0.01)
        assert c.h == pytest.approx(0.5, abs=1e-9)
        assert len(c.hull) >= 3


# ---------------------------------------------------------------------------
# Curb detection

def scan_and_segment(world, ego, weather):
    rng = np.random.default_rng(11)
    cloud = gen_lidar_scan(world, ego, weather, rng)
    seg = segment_ground(cloud, world.hd_map, 50.0)
    survivors = filter_weather_noise(seg, cloud)
    return cloud, seg, survivors


class TestDetectCurb:
    def test_clean_curb_matches_map(self):
        world = WorldState(hd_map=flat_world(), actors=[])
        cloud, seg, survivors = scan_and_segment(world, EGO, CLEAR)
        est = detect_curb(seg, cloud, world.hd_map, EGO, snow=False,
                          obstacle_idx=survivors)
        assert est.confidence >= 0.9
        for (s, b) in est.boundary_points:
            if abs(s - 50.0) <= 35.0:
                assert abs(b - 3.5) <= 0.1

    def test_snowbank_boundary_inside(self):
        world = WorldState(hd_map=flat_world(), actors=[])
        weather = WeatherSpec(mode=WeatherMode.SNOW, noise_density=0.0,
                              camera_dropout=0.25,
                              snowbank_encroachment=0.5)
        cloud, seg, survivors = scan_and_segment(world, EGO, weather)
        est = detect_curb(seg, cloud, world.hd_map, EGO, snow=True,
                          obstacle_idx=survivors)
        for (s, b) in est.boundary_points:
            if abs(s - 50.0) <= 35.0:
                assert b <= 3.0 + 1e-6  # never outside the snow edge
                assert abs(b - 3.0) <= 0.3

    def test_monotone_safety_under_snow(self):
        world = WorldState(hd_map=flat_world(), actors=[])
        weather = WeatherSpec(mode=WeatherMode.SNOW, noise_density=2.0,
                              camera_dropout=0.25,
                              snowbank_encroachment=0.3)
        cloud, seg, survivors = scan_and_segment(world, EGO, weather)
        est = detect_curb(seg, cloud, world.hd_map, EGO, snow=True,
                          obstacle_idx=survivors)
        for (s, b) in est.boundary_points:
            assert b <= float(world.hd_map.curb_offset_at(s)[0]) + 1e-9

    def test_goose_reassigned_not_absorbed(self):
        goose = ObstacleActor(id=1, kind=ActorKind.GOOSE, x=60.0, y=-3.2)
        world = WorldState(hd_map=flat_world(), actors=[goose])
        cloud, seg, survivors = scan_and_segment(world, EGO, CLEAR)
        est = detect_curb(seg, cloud, world.hd_map, EGO, snow=False,
                          obstacle_idx=survivors)
        body = np.where(
            (np.abs(cloud.xyz[:, 0] - 10.0) < 0.45)
            & (np.abs(cloud.xyz[:, 1] + 3.2) < 0.26)
            & (cloud.xyz[:, 2] > 0.05))[0]
        assert len(body) > 0
        candidates = set(est.candidate_idx.tolist())
        reassigned = set(est.reassigned_idx.tolist())
        in_band = [i for i in body if i in candidates]
        assert in_band, "goose points should enter the curb band"
        back = [i for i in in_band if i in reassigned]
        # all but boundary-ambiguous edge points come back as obstacles
        assert len(back) >= 0.9 * len(in_band)
        # the boundary did not collapse onto the goose
        for (s, b) in est.boundary_points:
            if abs(s - 60.0) <= 1.5:
                assert b >= 3.3
        # and the goose survives as a detected object downstream
        res = perceive(cloud, [], [], world.hd_map, EGO, snow=False)
        dists = [math.hypot(o.x - 60.0, o.y + 3.2) for o in res.fused]
        assert dists and min(dists) <= 1.0

    def test_no_candidates_falls_back_to_map(self):
        cloud = cloud_of(np.array([[5.0, 0.0, 0.0]]))
        seg = segment_ground(cloud, flat_world(), 50.0)
        est = detect_curb(seg, cloud, flat_world(),
                          VehicleState(x=50.0, y=0.0), snow=False)
        assert est.confidence == 0.0
        for (s, b) in est.boundary_points:
            assert b == pytest.approx(3.5, abs=1e-6)


# ---------------------------------------------------------------------------
# Fusion

def mk_cluster(x, y, z=0.8, w=1.8, h=1.5, l=4.2, idx0=0):
    from shuttlesim.perception import LidarCluster
    return LidarCluster(x_li=x, y_li=y, z_li=z, w=w, h=h, l=l,
                        member_idx=np.arange(idx0, idx0 + 5),
                        hull=np.array([[x - 1, y - 1], [x + 1, y - 1],
                                       [x, y + 1]]))


class TestFusion:
    def test_single_hypothesis_association(self):
        ego = VehicleState(x=0.0, y=0.0, psi=0.0)
        rig = CameraRig()
        cluster = mk_cluster(15.0, 0.0)
        radar = [RadarReturn(15.5, 0.0, 1.0, 0.0, 8.0)]
        px = rig.pixel_of(0, np.array([15.0, 0.0, 0.8]))
        cam = [CameraDetection(x_i=px[0], y_i=px[1], w_i=200, h_i=200,
                               c=ActorKind.PEDESTRIAN, cam_id=0)]
        fused = fuse_detections([cluster], radar, cam, ego, rig)
        assert len(fused) == 1
        obj = fused[0]
        assert obj.cls is ActorKind.PEDESTRIAN
        assert obj.vx == pytest.approx(1.0)
        assert obj.sources == frozenset({"lidar", "radar", "camera"})

    def test_no_camera_means_unknown(self):
        ego = VehicleState(x=0.0, y=0.0, psi=0.0)
        fused = fuse_detections([mk_cluster(12.0, 1.0)], [], [], ego)
        assert len(fused) == 1
        assert fused[0].cls is ActorKind.UNKNOWN
        assert fused[0].sources == frozenset({"lidar"})

    def test_lone_radar_return_dropped(self):
        ego = VehicleState(x=0.0, y=0.0, psi=0.0)
        radar = [RadarReturn(40.0, 10.0, 0.0, 0.0, 5.0)]
        fused = fuse_detections([mk_cluster(10.0, 0.0)], radar, [], ego)
        assert len(fused) == 1
        assert "radar" not in fused[0].sources

    def test_conservation_and_single_claim(self):
        ego = VehicleState(x=0.0, y=0.0, psi=0.0)
        rig = CameraRig()
        near = mk_cluster(10.0, 0.0)
        far = mk_cluster(20.0, 0.0, idx0=10)
        px = rig.pixel_of(0, np.array([10.0, 0.0, 0.8]))
        box = CameraDetection(x_i=px[0], y_i=px[1], w_i=400, h_i=400,
                              c=ActorKind.VEHICLE, cam_id=0)
        fused = fuse_detections([near, far], [], [box], ego, rig)
        assert len(fused) == 2
        classed = [o for o in fused if o.cls is ActorKind.VEHICLE]
        assert len(classed) == 1  # nearest cluster claimed the box
        assert classed[0].x == pytest.approx(10.0, abs=0.01)

    def test_world_frame_output(self):
        ego = VehicleState(x=100.0, y=50.0, psi=math.pi / 2)
        fused = fuse_detections([mk_cluster(10.0, 0.0)], [], [], ego)
        assert fused[0].x == pytest.approx(100.0, abs=1e-9)
        assert fused[0].y == pytest.approx(60.0, abs=1e-9)

    def test_class_requires_camera_flag(self):
        with pytest.raises(ValueError):
            FusedObject(x=0, y=0, z=0, w=1, h=1, l=1, vx=0, vy=0,
                        cls=ActorKind.VEHICLE, sources=frozenset({"lidar"}))


class TestTracker:
    def test_id_carry_over(self):
        tr = ObjectTracker(gate=1.5)
        a = [FusedObject(x=5, y=0, z=0, w=1, h=1, l=1, vx=0, vy=0,
                         cls=ActorKind.UNKNOWN, sources=frozenset({"lidar"}))]
        tr.assign(a)
        first_id = a[0].id
        b = [FusedObject(x=5.5, y=0.2, z=0, w=1, h=1, l=1, vx=0, vy=0,
                         cls=ActorKind.UNKNOWN, sources=frozenset({"lidar"}))]
        tr.assign(b)
        assert b[0].id == first_id
        c = [FusedObject(x=50, y=0, z=0, w=1, h=1, l=1, vx=0, vy=0,
                         cls=ActorKind.UNKNOWN, sources=frozenset({"lidar"}))]
        tr.assign(c)
        assert c[0].id != first_id


# ---------------------------------------------------------------------------
# Pipeline-level properties

class TestPipeline:
    def test_point_partition(self):
        ped = ObstacleActor(id=1, kind=ActorKind.PEDESTRIAN, x=62.0, y=0.5)
        world = WorldState(hd_map=flat_world(), actors=[ped])
        weather = WeatherSpec(mode=WeatherMode.SNOW, noise_density=2.0,
                              camera_dropout=1.0)
        rng = np.random.default_rng(13)
        cloud = gen_lidar_scan(world, EGO, weather, rng)
        radar = gen_radar_returns(world, EGO, rng,
                                  SensorConfig(radar_false_rate=0.0))
        res = perceive(cloud, radar, [], world.hd_map, EGO, snow=True)
        n = len(cloud)
        ground = set(res.seg.ground_idx.tolist())
        noise = set(res.noise_idx.tolist())
        curb_claimed = set(res.curb.candidate_idx.tolist()) \
            - set(res.curb.reassigned_idx.tolist())
        clustered = set()
        for c in res.clusters:
            clustered |= set(c.member_idx.tolist())
        unclustered = set(res.cluster_input_idx.tolist()) - clustered
        buckets = [ground, noise, curb_claimed, clustered, unclustered]
        total = set()
        for b in buckets:
            assert not (total & b), "buckets overlap"
            total |= b
        assert total == set(range(n))

    def test_end_to_end_recall_clean_scene(self):
        actors = [
            ObstacleActor(id=1, kind=ActorKind.VEHICLE, x=65.0, y=0.0),
            ObstacleActor(id=2, kind=ActorKind.PEDESTRIAN, x=58.0, y=2.0),
        ]
        world = WorldState(hd_map=flat_world(), actors=actors)
        rng = np.random.default_rng(17)
        cloud = gen_lidar_scan(world, EGO, CLEAR, rng)
        radar = gen_radar_returns(world, EGO, rng,
                                  SensorConfig(radar_false_rate=0.0))
        cams = gen_camera_detections(world, EGO, CLEAR, rng)
        res = perceive(cloud, radar, cams, world.hd_map, EGO, snow=False)
        assert len(res.fused) == 2
        for actor in actors:
            dists = [math.hypot(o.x - actor.x, o.y - actor.y)
                     for o in res.fused]
            assert min(dists) <= 1.0
