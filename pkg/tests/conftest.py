import numpy as np
import pytest

from shuttlesim.world import (HDMap, Landmark, LandmarkKind, SRecord, Zone,
                              make_loop_map, make_straight_map)


@pytest.fixture
def straight_map():
    # (0,0) -> (100,0), ds = 1
    return make_straight_map(length=100.0, ds=1.0, right_curb=3.5,
                             left_bound=3.0)


@pytest.fixture
def default_loop():
    return make_loop_map(straight=80.0, radius=60.0, ds=0.5)


@pytest.fixture
def zoned_map():
    zones = [
        (50.0, 70.0, Zone.BUS_STOP, 1),
        (120.0, 135.0, Zone.INTERSECTION_APPROACH, 2),
        (135.0, 150.0, Zone.INTERSECTION_BOX, 2),
    ]
    return make_straight_map(length=200.0, ds=0.5, zones=zones)


def dense_project_oracle(hd_map, x, y, step=0.005):
    """Brute-force nearest point along the densely sampled centerline."""
    pts = []
    svals = []
    cx, cy = hd_map.cx, hd_map.cy
    n = len(cx)
    seg_count = n if hd_map.loop else n - 1
    for i in range(seg_count):
        j = (i + 1) % n
        ax, ay = cx[i], cy[i]
        bx, by = cx[j], cy[j]
        m = max(2, int(np.ceil(np.hypot(bx - ax, by - ay) / step)))
        ts = np.linspace(0.0, 1.0, m, endpoint=False)
        pts.append(np.column_stack([ax + ts * (bx - ax), ay + ts * (by - ay)]))
        svals.append(hd_map.s[i] + ts * hd_map.ds)
    pts = np.vstack(pts)
    svals = np.concatenate(svals)
    d2 = (pts[:, 0] - x) ** 2 + (pts[:, 1] - y) ** 2
    k = int(np.argmin(d2))
    return float(svals[k]), float(np.sqrt(d2[k]))
