"""Behavior planning: a six-state FSM driven by ego location on the map and
by the fused perception objects.

States: normal_driving, intersection_handling, pullover, passenger_boarding,
merging, emergency. Transitions are total and deterministic; every
non-emergency state enforces a minimum dwell so the machine cannot chatter,
while the emergency state is reachable from anywhere within one tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .localization import LocStatus
from .perception import FusedObject
from .world import ActorKind, EgoParams, HDMap, Zone


class FsmStateName(Enum):
    NORMAL_DRIVING = "normal_driving"
    INTERSECTION_HANDLING = "intersection_handling"
    PULLOVER = "pullover"
    PASSENGER_BOARDING = "passenger_boarding"
    MERGING = "merging"
    EMERGENCY = "emergency"


class Motion(Enum):
    GO = "go"
    STOP = "stop"
    EMERGENCY_STOP = "emergency_stop"


class Door(Enum):
    OPEN = "open"
    CLOSED = "closed"


class Crossing(Enum):
    PROCEED = "proceed"
    HOLD = "hold"
    PROCEED_CREEP = "proceed_creep"  # deadlock timeout escape


@dataclass
class DecisionConfig:
    v_normal: float = 5.556  # 20 km/h reference
    v_approach: float = 3.0
    v_merge: float = 2.5
    v_creep: float = 1.5
    d_intersection: float = 15.0  # engage intersection handling
    d_stop: float = 30.0  # engage pullover
    min_dwell: float = 1.0
    boarding_dwell: float = 10.0
    rear_gate: float = 15.0
    stop_wait: float = 2.0
    deadlock_s: float = 60.0
    arrival_dist: float = 3.0
    arrival_speed: float = 0.3
    gone_timeout: float = 1.5
    stop_standoff: float = 8.0  # matches the longitudinal ds_min
    pullover_scan: float = 20.0
    pullover_margin: float = 1.0  # per side; interval needs len + 2
    risk_horizon: float = 3.0
    risk_step: float = 0.25
    vulnerable_weight: float = 1.5
    corridor_margin: float = 0.3
    box_halfwidth: float = 4.0
    ped_approach_dist: float = 6.0
    stop_speed: float = 0.05
    spot_tolerance: float = 0.3
    merge_done_lateral: float = 0.2
    ego: EgoParams = field(default_factory=EgoParams)


@dataclass
class IntersectionLedger:
    zone_id: int
    arrivals: list = field(default_factory=list)  # (key, t) ordered by t
    ego_stopped_since: Optional[float] = None
    status: dict = field(default_factory=dict)  # key -> waiting|crossing|cleared
    last_seen: dict = field(default_factory=dict)
    hold_since: Optional[float] = None

    def arrival_time(self, key) -> Optional[float]:
        for k, t in self.arrivals:
            if k == key:
                return t
        return None


@dataclass
class FsmState:
    value: FsmStateName = FsmStateName.NORMAL_DRIVING
    entered_at: float = 0.0
    context: dict = field(default_factory=dict)

    def aged(self, t: float) -> float:
        return t - self.entered_at


@dataclass
class DecisionOutput:
    motion: Motion
    speed_cap: float
    door: Door = Door.CLOSED
    path_request: Optional[tuple] = None  # ("pullover", spot_s) | ("merge",)
    target_gap: Optional[float] = None

    def __post_init__(self):
        if self.door is Door.OPEN and self.motion is not Motion.STOP:
            raise ValueError("doors may only be open while stopped")
        if self.motion is Motion.EMERGENCY_STOP and self.speed_cap != 0.0:
            raise ValueError("emergency stop implies zero speed cap")


@dataclass
class EgoView:
    """Decision-facing ego summary (estimated pose projected to the map)."""

    x: float
    y: float
    psi: float
    v: float
    s: float
    d: float


@dataclass
class DecisionInputs:
    ego: EgoView
    objects: list
    loc_status: LocStatus
    t: float
    safety_trip: bool = False
    blackout: bool = False
    reset_flag: bool = False
    planner_blocked: bool = False


VULNERABLE = (ActorKind.PEDESTRIAN, ActorKind.CYCLIST, ActorKind.UNKNOWN)


# ---------------------------------------------------------------------------
# Risk selection

def _object_gap(hd_map: HDMap, ego: EgoView, obj: FusedObject,
                cfg: DecisionConfig, lead: float = 0.0) -> float:
    """Boundary-to-boundary gap along the path, ego front to object rear."""
    s_o, _ = _project_obj(hd_map, obj)
    ahead = hd_map.forward_gap(ego.s + lead, s_o)
    if not hd_map.loop and s_o < ego.s + lead:
        ahead = s_o - (ego.s + lead)
    return ahead - 0.5 * obj.l - 0.5 * cfg.ego.length


def _project_obj(hd_map: HDMap, obj: FusedObject):
    s, d, _ = hd_map.project_to_s(obj.x, obj.y)
    return s, d


def select_highest_risk(objects: list, ego: EgoView, hd_map: HDMap,
                        config: Optional[DecisionConfig] = None) -> Optional[FusedObject]:
    """Pick the object with the smallest predicted gap along the ego path
    over a short constant-velocity horizon; vulnerable classes are weighted
    up. Objects that never touch the inflated path corridor are ignored."""
    cfg = config or DecisionConfig()
    best = None
    ego_v = max(ego.v, 0.3)
    steps = np.arange(0.0, cfg.risk_horizon + 1e-9, cfg.risk_step)
    for obj in objects:
        min_gap = None
        for dt in steps:
            px = obj.x + obj.vx * dt
            py = obj.y + obj.vy * dt
            s_o, d_o, _ = hd_map.project_to_s(px, py)
            half = 0.5 * (cfg.ego.width + obj.w) + cfg.corridor_margin
            if abs(d_o) > half:
                continue
            ahead = hd_map.forward_gap(ego.s + ego_v * dt, s_o)
            if not hd_map.loop and s_o < ego.s + ego_v * dt:
                continue
            if hd_map.loop and ahead > hd_map.s_max / 2:
                continue  # effectively behind
            gap = ahead - 0.5 * obj.l - 0.5 * cfg.ego.length
            if min_gap is None or gap < min_gap:
                min_gap = gap
        if min_gap is None:
            continue
        weight = cfg.vulnerable_weight if obj.cls in VULNERABLE else 1.0
        score = weight / (max(min_gap, 0.0) + 0.5)
        if best is None or score > best[0]:
            best = (score, obj)
    return best[1] if best else None


# ---------------------------------------------------------------------------
# Intersection handling

def _box_points(hd_map: HDMap, zone_id: int) -> np.ndarray:
    pts = [(r.cx, r.cy) for r in hd_map.records
           if r.zone is Zone.INTERSECTION_BOX and r.zone_id == zone_id]
    return np.array(pts) if pts else np.zeros((0, 2))

def _dist_to_box(box_pts: np.ndarray, x: float, y: float) -> float:
    if len(box_pts) == 0:
        return math.inf
    return float(np.min(np.hypot(box_pts[:, 0] - x, box_pts[:, 1] - y)))


def _is_vehicle_like(obj: FusedObject) -> bool:
    return obj.cls is ActorKind.VEHICLE or (
        obj.cls is ActorKind.UNKNOWN and max(obj.l, obj.w) >= 1.5)


def _is_vulnerable(obj: FusedObject) -> bool:
    return obj.cls in (ActorKind.PEDESTRIAN, ActorKind.CYCLIST) or (
        obj.cls is ActorKind.UNKNOWN and max(obj.l, obj.w) < 1.5)


def update_intersection_ledger(ledger: IntersectionLedger, objects: list,
                               ego: EgoView, t: float, hd_map: HDMap,
                               cfg: DecisionConfig) -> None:
    """Track vehicle arrival order around the all-way stop."""
    box = _box_points(hd_map, ledger.zone_id)
    for obj in objects:
        if not _is_vehicle_like(obj) or obj.id < 0:
            continue
        key = obj.id
        d_box = _dist_to_box(box, obj.x, obj.y) - cfg.box_halfwidth
        in_box = d_box <= 0.0
        speed = math.hypot(obj.vx, obj.vy)
        if d_box > cfg.arrival_dist + 10.0:
            continue
        self_status = ledger.status.get(key)
        ledger.last_seen[key] = t
        if self_status is None:
            if speed <= cfg.arrival_speed and 0.0 < d_box <= cfg.arrival_dist:
                ledger.status[key] = "waiting"
                ledger.arrivals.append((key, t))
        elif self_status == "waiting" and in_box:
            ledger.status[key] = "crossing"
        elif self_status == "crossing" and not in_box:
            ledger.status[key] = "cleared"
    # vehicles that vanished from view are assumed gone
    for key, seen in list(ledger.last_seen.items()):
        if t - seen > cfg.gone_timeout and ledger.status.get(key) != "cleared":
            ledger.status[key] = "cleared"


def intersection_decision(ledger: IntersectionLedger, objects: list,
                          ego: EgoView, t: float, hd_map: HDMap,
                          config: Optional[DecisionConfig] = None) -> Crossing:
    """Proceed only after a full stop, an empty box and crossing, and every
    earlier-arrived vehicle has cleared. A long stationary hold escapes at
    creep speed (logged by the caller as an edge case)."""
    cfg = config or DecisionConfig()
    if ledger.ego_stopped_since is None:
        return Crossing.HOLD
    if t - ledger.ego_stopped_since < cfg.stop_wait:
        return Crossing.HOLD

    box = _box_points(hd_map, ledger.zone_id)
    hold = False
    for obj in objects:
        d_box = _dist_to_box(box, obj.x, obj.y) - cfg.box_halfwidth
        if _is_vulnerable(obj):
            closing = False
            if len(box):
                center = box.mean(axis=0)
                to_box = center - np.array([obj.x, obj.y])
                norm = np.linalg.norm(to_box)
                if norm > 1e-6:
                    closing = (obj.vx * to_box[0] + obj.vy * to_box[1]) / norm > 0.1
            if d_box <= 0.0 or (d_box <= cfg.ped_approach_dist and closing):
                hold = True  # shuttle yields to any crossing traffic
        elif d_box <= 0.0 and _is_vehicle_like(obj):
            hold = True  # box occupied
    ego_arrival = ledger.arrival_time("ego")
    for key, t_arr in ledger.arrivals:
        if key == "ego":
            continue
        if ego_arrival is not None and t_arr >= ego_arrival:
            continue
        if ledger.status.get(key) != "cleared":
            hold = True
    if not hold:
        ledger.hold_since = None
        return Crossing.PROCEED
    if ledger.hold_since is None:
        ledger.hold_since = t
    if t - ledger.hold_since > cfg.deadlock_s:
        return Crossing.PROCEED_CREEP
    return Crossing.HOLD


# ---------------------------------------------------------------------------
# Bus stop pullover spot search

def find_pullover_spot(hd_map: HDMap, ego_s: float, objects: list,
                       stop_zone_id: int,
                       config: Optional[DecisionConfig] = None) -> Optional[float]:
    """Scan up to pullover_scan meters ahead inside the bus-stop zone for a
    free curbside interval long enough for the shuttle plus margin; the
    returned spot is the feasible point closest to the zone's nominal stop.
    None means the zone is blocked (callers skip the stop)."""
    cfg = config or DecisionConfig()
    zone_s = [r.s for r in hd_map.records
              if r.zone is Zone.BUS_STOP and r.zone_id == stop_zone_id]
    if not zone_s:
        return None
    z0, z1 = min(zone_s), max(zone_s)
    nominal = 0.5 * (z0 + z1)
    lo = max(ego_s, z0)
    hi = min(ego_s + cfg.pullover_scan, z1)
    if hi <= lo:
        return None

    need = cfg.ego.length + 2.0 * cfg.pullover_margin
    occupied = []
    for obj in objects:
        s_o, d_o = _project_obj(hd_map, obj)
        if d_o > 0.5:
            continue  # left of the driving line, not in the curb lane
        if s_o < lo - 10 or s_o > hi + 10:
            continue
        occupied.append((s_o - 0.5 * obj.l - cfg.pullover_margin,
                         s_o + 0.5 * obj.l + cfg.pullover_margin))

    free = [(lo, hi)]
    for (c0, c1) in sorted(occupied):
        nxt = []
        for (a, b) in free:
            if c1 <= a or c0 >= b:
                nxt.append((a, b))
                continue
            if a < c0:
                nxt.append((a, c0))
            if c1 < b:
                nxt.append((c1, b))
        free = nxt

    best = None
    half = need / 2.0
    for (a, b) in free:
        if b - a < need:
            continue
        spot = min(max(nominal, a + half), b - half)
        key = abs(spot - nominal)
        if best is None or key < best[0]:
            best = (key, spot)
    return best[1] if best else None


# ---------------------------------------------------------------------------
# FSM core

class DecisionMaker:
    """Owns FSM state plus bookkeeping (served stops, intersection ledger)."""

    def __init__(self, hd_map: HDMap, stops_to_serve: list,
                 config: Optional[DecisionConfig] = None, t0: float = 0.0):
        self.cfg = config or DecisionConfig()
        self.hd_map = hd_map
        self.stops_pending = list(stops_to_serve)
        self.stops_served: list = []
        self.stops_skipped: list = []
        self.state = FsmState(FsmStateName.NORMAL_DRIVING, t0, {})
        self.events: list = []  # (t, tag, detail)
        self._skipped_recently: dict = {}

    # -- helpers ----------------------------------------------------------
    def _emergency(self, t: float) -> tuple:
        if self.state.value is not FsmStateName.EMERGENCY:
            self.state = FsmState(FsmStateName.EMERGENCY, t, {})
            self.events.append((t, "emergency_entered", ""))
        return self.state, DecisionOutput(
            motion=Motion.EMERGENCY_STOP, speed_cap=0.0, door=Door.CLOSED,
            target_gap=None)

    def _enter(self, name: FsmStateName, t: float, context: dict) -> None:
        self.state = FsmState(name, t, context)

    def _next_stop_ahead(self, ego_s: float):
        here = self.hd_map.query_record(self.hd_map.wrap_s(ego_s))
        for zid in self.stops_pending:
            if here.zone is Zone.BUS_STOP and here.zone_id == zid:
                return zid, 0.0
            zone_s = [r.s for r in self.hd_map.records
                      if r.zone is Zone.BUS_STOP and r.zone_id == zid]
            if not zone_s:
                continue
            gap = self.hd_map.forward_gap(ego_s, min(zone_s))
            if not self.hd_map.loop and min(zone_s) < ego_s - 1.0:
                continue
            if 0.0 <= gap <= self.cfg.d_stop:
                return zid, gap
        return None

    def _reference_offset(self, s: float) -> float:
        r = self.hd_map.query_record(self.hd_map.wrap_s(s))
        return 0.5 * (r.left_bound_offset - r.right_curb_offset)

    # -- per-tick step ----------------------------------------------------
    def step(self, inputs: DecisionInputs) -> tuple:
        """Total transition function: (FsmState, DecisionOutput)."""
        cfg = self.cfg
        t = inputs.t
        ego = inputs.ego
        state = self.state

        if state.value is not FsmStateName.EMERGENCY and (
                inputs.loc_status is LocStatus.DEMAND_SAFE_STOP
                or inputs.safety_trip or inputs.blackout):
            return self._emergency(t)

        if state.value is FsmStateName.EMERGENCY:
            cause_active = (inputs.loc_status is LocStatus.DEMAND_SAFE_STOP
                            or inputs.safety_trip or inputs.blackout)
            if inputs.reset_flag and ego.v <= cfg.stop_speed \
                    and not cause_active:
                self.events.append((t, "emergency_reset", "operator"))
                self._enter(FsmStateName.NORMAL_DRIVING, t, {})
                return self.state, DecisionOutput(
                    motion=Motion.STOP, speed_cap=0.0, target_gap=None)
            return self._emergency(t)

        dwell_ok = state.aged(t) >= cfg.min_dwell
        risk_obj = select_highest_risk(inputs.objects, ego, self.hd_map, cfg)
        risk_gap = (None if risk_obj is None
                    else max(_object_gap(self.hd_map, ego, risk_obj, cfg),
                             0.0))

        if state.value is FsmStateName.NORMAL_DRIVING:
            return self._step_normal(inputs, dwell_ok, risk_gap)
        if state.value is FsmStateName.INTERSECTION_HANDLING:
            return self._step_intersection(inputs, dwell_ok, risk_gap)
        if state.value is FsmStateName.PULLOVER:
            return self._step_pullover(inputs, dwell_ok, risk_gap)
        if state.value is FsmStateName.PASSENGER_BOARDING:
            return self._step_boarding(inputs, dwell_ok)
        if state.value is FsmStateName.MERGING:
            return self._step_merging(inputs, dwell_ok, risk_gap)
        return self._emergency(t)  # unreachable; keeps the function total

    # -- state handlers ---------------------------------------------------
    def _step_normal(self, inputs: DecisionInputs, dwell_ok: bool,
                     risk_gap) -> tuple:
        cfg, ego, t = self.cfg, inputs.ego, inputs.t
        d_int = self.hd_map.distance_to_next_zone(
            ego.s, Zone.INTERSECTION_APPROACH)
        if dwell_ok and d_int is not None and d_int < cfg.d_intersection:
            rec = self.hd_map.query_record(
                self.hd_map.wrap_s(ego.s + d_int + 0.6 * self.hd_map.ds))
            zone_id = rec.zone_id if rec.zone_id is not None else -1
            ledger = IntersectionLedger(zone_id=zone_id)
            update_intersection_ledger(ledger, inputs.objects, ego, t,
                                       self.hd_map, cfg)
            self._enter(FsmStateName.INTERSECTION_HANDLING, t,
                        {"ledger": ledger, "proceed": None})
            return self._step_intersection(inputs, False, risk_gap)

        nxt = None if not dwell_ok else self._next_stop_ahead(ego.s)
        if nxt is not None:
            zid, _ = nxt
            self._enter(FsmStateName.PULLOVER, t,
                        {"zone_id": zid, "spot": None})
            self.events.append((t, "pullover_engaged", f"zone {zid}"))
            return self._step_pullover(inputs, False, risk_gap)

        return self.state, DecisionOutput(
            motion=Motion.GO, speed_cap=cfg.v_normal,
            target_gap=risk_gap)

    def _step_intersection(self, inputs: DecisionInputs, dwell_ok: bool,
                           risk_gap) -> tuple:
        cfg, ego, t = self.cfg, inputs.ego, inputs.t
        ctx = self.state.context
        ledger: IntersectionLedger = ctx["ledger"]
        update_intersection_ledger(ledger, inputs.objects, ego, t,
                                   self.hd_map, cfg)

        d_line = self.hd_map.distance_to_next_zone(ego.s,
                                                   Zone.INTERSECTION_BOX)
        in_box = self.hd_map.query_record(
            self.hd_map.wrap_s(ego.s)).zone is Zone.INTERSECTION_BOX

        if (ledger.ego_stopped_since is None and d_line is not None
                and ego.v <= cfg.stop_speed and d_line <= cfg.arrival_dist):
            ledger.ego_stopped_since = t
            ledger.arrivals.append(("ego", t))

        if ctx.get("proceed") is None:
            decision = intersection_decision(ledger, inputs.objects, ego, t,
                                             self.hd_map, cfg)
            if decision is Crossing.HOLD:
                gap_line = (d_line + cfg.stop_standoff
                            if d_line is not None else None)
                target = _min_gap(risk_gap, gap_line)
                at_line = (ego.v <= cfg.stop_speed and d_line is not None
                           and d_line <= cfg.arrival_dist)
                return self.state, DecisionOutput(
                    motion=Motion.STOP if at_line else Motion.GO,
                    speed_cap=cfg.v_approach, target_gap=target)
            ctx["proceed"] = decision
            if decision is Crossing.PROCEED_CREEP:
                self.events.append((t, "deadlock_creep",
                                    f"zone {ledger.zone_id}"))
            else:
                self.events.append((t, "intersection_proceed",
                                    f"zone {ledger.zone_id}"))

        cap = (cfg.v_creep if ctx["proceed"] is Crossing.PROCEED_CREEP
               else cfg.v_approach)
        if dwell_ok and not in_box and (d_line is None or d_line > 2.0) \
                and ctx.get("proceed") is not None \
                and self.state.aged(t) >= cfg.min_dwell \
                and self._past_box(ego.s, ledger.zone_id):
            self._enter(FsmStateName.NORMAL_DRIVING, t, {})
            return self.state, DecisionOutput(
                motion=Motion.GO, speed_cap=cfg.v_normal, target_gap=risk_gap)
        return self.state, DecisionOutput(
            motion=Motion.GO, speed_cap=cap, target_gap=risk_gap)

    def _past_box(self, ego_s: float, zone_id: int) -> bool:
        rec = self.hd_map.query_record(self.hd_map.wrap_s(ego_s))
        if rec.zone in (Zone.INTERSECTION_BOX, Zone.INTERSECTION_APPROACH):
            return False
        box_s = [r.s for r in self.hd_map.records
                 if r.zone is Zone.INTERSECTION_BOX and r.zone_id == zone_id]
        if not box_s:
            return True
        end = max(box_s)
        if self.hd_map.loop:
            back = self.hd_map.forward_gap(ego_s, end)
            return back > self.hd_map.s_max / 2
        return ego_s > end

    def _zone_extent(self, zone_id: int):
        zone_s = [r.s for r in self.hd_map.records
                  if r.zone is Zone.BUS_STOP and r.zone_id == zone_id]
        if not zone_s:
            return None
        return min(zone_s), max(zone_s)

    def _step_pullover(self, inputs: DecisionInputs, dwell_ok: bool,
                       risk_gap) -> tuple:
        cfg, ego, t = self.cfg, inputs.ego, inputs.t
        ctx = self.state.context
        zid = ctx["zone_id"]
        spot = ctx.get("spot")
        extent = self._zone_extent(zid)
        if extent is None:
            self._skip_stop(zid, t, "zone missing from map")
            return self._step_normal(inputs, False, risk_gap)
        z0, z1 = extent
        need = cfg.ego.length + 2.0 * cfg.pullover_margin

        # refresh the spot until close, then freeze it for the maneuver
        frozen = spot is not None and (spot - ego.s) <= 8.0
        if not frozen:
            found = find_pullover_spot(self.hd_map, ego.s, inputs.objects,
                                       zid, cfg)
            if found is not None:
                if spot is None or abs(found - spot) > 0.2:
                    self.events.append((t, "pullover_planned",
                                        f"zone {zid} spot {found:.2f}"))
                spot = found
                ctx["spot"] = spot
            else:
                coverage = min(ego.s + cfg.pullover_scan, z1) - max(ego.s, z0)
                if dwell_ok and (coverage >= need or ego.s > z1 - need):
                    self._skip_stop(zid, t, "blocked")
                    return self._step_normal(inputs, False, risk_gap)
                # scan cannot reach the zone yet (or dwell pending):
                # keep approaching at merge speed
                gap_zone = max(z0 - ego.s, 0.0) + cfg.stop_standoff
                return self.state, DecisionOutput(
                    motion=Motion.GO, speed_cap=cfg.v_merge,
                    target_gap=_min_gap(risk_gap, gap_zone))

        gap_spot = spot - ego.s
        if self.hd_map.loop:
            gap_spot = self.hd_map.forward_gap(ego.s, spot)
            if gap_spot > self.hd_map.s_max / 2:
                gap_spot -= self.hd_map.s_max

        if dwell_ok and ego.v <= cfg.stop_speed \
                and abs(gap_spot) <= cfg.spot_tolerance:
            self._enter(FsmStateName.PASSENGER_BOARDING, t, {"zone_id": zid})
            self.events.append((t, "boarding_started", f"zone {zid}"))
            return self._step_boarding(inputs, False)

        target = _min_gap(risk_gap, max(gap_spot, 0.0) + cfg.stop_standoff)
        return self.state, DecisionOutput(
            motion=Motion.GO, speed_cap=cfg.v_merge,
            path_request=("pullover", spot), target_gap=target)

    def _skip_stop(self, zid: int, t: float, reason: str) -> None:
        self.events.append((t, "skip_stop", f"zone {zid} {reason}"))
        if zid in self.stops_pending:
            self.stops_pending.remove(zid)
        self.stops_skipped.append(zid)
        self._skipped_recently[zid] = t
        self._enter(FsmStateName.NORMAL_DRIVING, t, {})

    def _step_boarding(self, inputs: DecisionInputs, dwell_ok: bool) -> tuple:
        cfg, ego, t = self.cfg, inputs.ego, inputs.t
        ctx = self.state.context
        door = Door.OPEN if ego.v < 0.1 else Door.CLOSED
        boarded = self.state.aged(t) >= cfg.boarding_dwell
        rear_clear = not self._rear_approaching(inputs)
        if dwell_ok and boarded and rear_clear:
            zid = ctx["zone_id"]
            if zid in self.stops_pending:
                self.stops_pending.remove(zid)
            self.stops_served.append(zid)
            self.events.append((t, "stop_served", f"zone {zid}"))
            self._enter(FsmStateName.MERGING, t, {})
            return self._step_merging(inputs, False, None)
        return self.state, DecisionOutput(
            motion=Motion.STOP, speed_cap=0.0, door=door, target_gap=None)

    def _rear_approaching(self, inputs: DecisionInputs) -> bool:
        cfg, ego = self.cfg, inputs.ego
        for obj in inputs.objects:
            s_o, d_o = _project_obj(self.hd_map, obj)
            behind = self.hd_map.forward_gap(s_o, ego.s)
            if self.hd_map.loop and behind > self.hd_map.s_max / 2:
                continue
            if not self.hd_map.loop and s_o > ego.s:
                continue
            if behind <= 0.0 or behind > cfg.rear_gate:
                continue
            if abs(d_o) > 3.5:
                continue
            closing = obj.vx * math.cos(ego.psi) + obj.vy * math.sin(ego.psi)
            if closing > 0.1:
                return True
        return False

    def _step_merging(self, inputs: DecisionInputs, dwell_ok: bool,
                      risk_gap) -> tuple:
        cfg, ego, t = self.cfg, inputs.ego, inputs.t
        d_ref = self._reference_offset(ego.s)
        if dwell_ok and abs(ego.d - d_ref) <= cfg.merge_done_lateral:
            self.events.append((t, "merge_complete", ""))
            self._enter(FsmStateName.NORMAL_DRIVING, t, {})
            return self.state, DecisionOutput(
                motion=Motion.GO, speed_cap=cfg.v_normal, target_gap=risk_gap)
        return self.state, DecisionOutput(
            motion=Motion.GO, speed_cap=cfg.v_merge,
            path_request=("merge",), target_gap=risk_gap)


def _min_gap(a, b):
    vals = [v for v in (a, b) if v is not None]
    return min(vals) if vals else None
