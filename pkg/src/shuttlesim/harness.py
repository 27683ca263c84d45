"""The closed loop: per-tick pipeline, runtime safety monitor, black-box
ring buffer, and batch execution.

Stage order within a tick is fixed: actor scripts -> sensors -> perception
-> localization -> decision -> planning -> control -> dynamics -> safety
-> logging. No stage reads an output produced later in the same tick.
"""

from __future__ import annotations

import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import control as ctl
from . import planning as pln
from .decision import (DecisionConfig, DecisionInputs, DecisionMaker, Door,
                       EgoView, FsmStateName, Motion)
from .localization import Localizer, LocalizationConfig, LocStatus
from .perception import ObjectTracker, PerceptionConfig, perceive
from .scenario import (RunMetrics, ScenarioSpec, TickRow, WeatherMode, fmt6,
                       load_map, parse_scenario, write_summary,
                       write_tick_header, write_tick_log)
from .sensors import (CameraRig, SensorConfig, gen_camera_detections,
                      gen_lidar_scan, gen_radar_returns)
from .world import (EgoParams, HDMap, ObstacleActor, VehicleState, WorldState,
                    rect_distance)


@dataclass
class SafetyVerdict:
    ok: bool
    violations: list  # (rule_id, t, detail)

    def __post_init__(self):
        if self.ok != (len(self.violations) == 0):
            raise ValueError("ok must mirror an empty violation list")


@dataclass
class SafetyConfig:
    hard_floor: float = 1.0
    moving_speed: float = 0.1
    speed_tolerance: float = 0.1
    envelope_tau: float = 0.7  # legal speed-decay envelope after cap drops;
    # slightly slower than the plant's tau_v so it never false-trips
    blackbox_horizon: float = 30.0


@dataclass
class TickSnapshot:
    """Everything the monitor needs about one completed tick."""

    t: float
    ego: VehicleState
    actors: list
    fsm: FsmStateName
    motion: Motion
    door: Door
    speed_cap: float
    v_des: float
    loc_status: LocStatus
    prev_demand: bool  # demand_safe_stop was raised last tick
    est_xy: tuple


class SafetyMonitor:
    """Evaluates runtime rules R1-R5 each tick; any violation flips the FSM
    to emergency on the next tick and triggers a black-box dump."""

    def __init__(self, config: Optional[SafetyConfig] = None,
                 ego_params: Optional[EgoParams] = None,
                 v_ref: float = 5.556):
        self.cfg = config or SafetyConfig()
        self.ego_params = ego_params or EgoParams()
        self.v_ref = v_ref
        self._envelope = v_ref

    def check_invariants(self, snap: TickSnapshot, dt: float) -> SafetyVerdict:
        cfg = self.cfg
        violations = []

        cap = min(self.v_ref, snap.speed_cap)
        # the envelope lets the plant bleed speed down after a cap drop
        decay = math.exp(-dt / cfg.envelope_tau)
        self._envelope = max(cap, cap + (self._envelope - cap) * decay)
        if snap.ego.v > self._envelope + cfg.speed_tolerance:
            violations.append(("R2", snap.t,
                               f"v={snap.ego.v:.3f} cap={cap:.3f}"))

        if snap.ego.v > cfg.moving_speed:
            gap = true_min_gap(snap.ego, snap.actors, self.ego_params)
            if gap < cfg.hard_floor:
                violations.append(("R1", snap.t, f"gap={gap:.3f}"))

        if snap.door is Door.OPEN:
            if snap.fsm is not FsmStateName.PASSENGER_BOARDING \
                    or snap.ego.v >= 0.1:
                violations.append(("R3", snap.t,
                                   f"door open in {snap.fsm.value}"))

        if snap.prev_demand and snap.fsm is not FsmStateName.EMERGENCY:
            violations.append(("R4", snap.t, "safe-stop demand not honored"))

        values = [snap.ego.x, snap.ego.y, snap.ego.psi, snap.ego.v,
                  snap.v_des, snap.est_xy[0], snap.est_xy[1]]
        if not all(math.isfinite(v) for v in values):
            violations.append(("R5", snap.t, "non-finite state"))

        return SafetyVerdict(ok=not violations, violations=violations)


def true_min_gap(ego: VehicleState, actors: list,
                 ego_params: EgoParams) -> float:
    """Smallest footprint-to-footprint clearance to any actor."""
    if not actors:
        return math.inf
    ego_fp = ego_params.footprint(ego.x, ego.y, ego.psi)
    return min(rect_distance(ego_fp, a.footprint()) for a in actors)


class BlackBox:
    """Ring buffer of recent tick rows, dumped on violations/emergencies."""

    def __init__(self, horizon_s: float, dt: float):
        self.rows = deque(maxlen=max(1, int(round(horizon_s / dt))))

    def record(self, row: TickRow) -> None:
        self.rows.append(row)

    def dump(self, sink) -> None:
        write_tick_header(sink)
        for row in self.rows:
            write_tick_log(sink, row)


# ---------------------------------------------------------------------------
# Scenario world construction

def build_world(spec: ScenarioSpec, hd_map: HDMap) -> WorldState:
    actors = []
    for i, a in enumerate(spec.actors, start=1):
        if a.s is not None or a.d is not None:
            s = a.s if a.s is not None else 0.0
            d = a.d if a.d is not None else 0.0
            x, y = hd_map.point_at(hd_map.wrap_s(s), d)
        else:
            x = a.x if a.x is not None else 0.0
            y = a.y if a.y is not None else 0.0
        actor = ObstacleActor(
            id=i, kind=a.kind, x=x, y=y, vx=a.vx, vy=a.vy,
            length=a.length or 0.0, width=a.width or 0.0,
            height=a.height or 0.0, rcs=a.rcs,
            script=sorted(a.script, key=lambda e: (e[0], e[1])))
        if actor.speed <= 1e-3 and (a.s is not None or a.d is not None):
            actor.heading = hd_map.query_record(hd_map.wrap_s(
                a.s if a.s is not None else 0.0)).heading
        actors.append(actor)
    return WorldState(hd_map=hd_map, actors=actors)


def _apply_scripts(world: WorldState, t: float, applied: dict) -> None:
    for actor in world.actors:
        done = applied.setdefault(actor.id, 0)
        while done < len(actor.script) and actor.script[done][0] <= t + 1e-9:
            entry = actor.script[done]
            cmd = entry[1]
            if cmd == "move":
                actor.vx, actor.vy = entry[2], entry[3]
                if actor.speed > 1e-3:
                    actor.heading = math.atan2(actor.vy, actor.vx)
            elif cmd == "warp":
                actor.x, actor.y = entry[2], entry[3]
            done += 1
        applied[actor.id] = done


def _integrate_actors(world: WorldState, dt: float) -> None:
    for actor in world.actors:
        actor.x += actor.vx * dt
        actor.y += actor.vy * dt


# ---------------------------------------------------------------------------
# The closed loop

@dataclass
class RunArtifacts:
    metrics: RunMetrics
    tick_log_path: Optional[Path] = None
    summary_path: Optional[Path] = None
    blackbox_path: Optional[Path] = None


def run_scenario(spec: ScenarioSpec, hd_map: Optional[HDMap] = None,
                 out_dir: Optional[Path] = None,
                 scenario_dir: Optional[Path] = None,
                 seed_override: Optional[int] = None,
                 trace: Optional[list] = None,
                 dump_debug: bool = False) -> RunArtifacts:
    """Run one scenario to completion and return metrics (plus file paths
    when out_dir is given). Fixed seed implies byte-identical outputs."""
    if hd_map is None:
        map_path = Path(spec.map_path)
        if not map_path.is_absolute() and scenario_dir is not None:
            map_path = Path(scenario_dir) / map_path
        with open(map_path, "r", encoding="utf-8") as fh:
            hd_map = load_map(fh)

    seed = spec.seed if seed_override is None else seed_override
    rng = np.random.default_rng(np.random.PCG64(seed))

    sensor_cfg = SensorConfig()
    percep_cfg = PerceptionConfig()
    loc_cfg = LocalizationConfig()
    dec_cfg = DecisionConfig()
    plan_cfg = pln.PlanningConfig()
    lon = ctl.LongitudinalParams(dt=spec.dt)
    lat = ctl.LateralParams()
    plant = ctl.VehiclePlantParams()
    safety_cfg = SafetyConfig()
    rig = CameraRig()

    world = build_world(spec, hd_map)
    s0, d0, v0 = spec.ego_start
    ex, ey = hd_map.point_at(hd_map.wrap_s(s0), d0)
    psi0 = hd_map.query_record(hd_map.wrap_s(s0)).heading
    ego = VehicleState(x=ex, y=ey, psi=psi0, v=v0, t=0.0)

    localizer = Localizer(ego, loc_cfg)
    tracker = ObjectTracker(percep_cfg.track_gate)
    decider = DecisionMaker(hd_map, spec.stops_to_serve, dec_cfg)
    monitor = SafetyMonitor(safety_cfg, dec_cfg.ego, lon.v_ref)
    blackbox = BlackBox(safety_cfg.blackbox_horizon, spec.dt)
    reference = pln.global_path(hd_map)

    metrics = RunMetrics()
    n_ticks = int(round(spec.duration / spec.dt))
    pid = ctl.PidState()
    v_des = v0
    applied_scripts: dict = {}
    consumed_resets = 0
    safety_trip = False
    prev_demand = False
    snow = spec.weather.mode is WeatherMode.SNOW
    maneuver_path = None
    maneuver_key = None
    last_track_path = None
    progress = 0.0
    prev_s_true = s0
    emergency_entries = 0
    prev_state_name = decider.state.value
    stop_settle = 0.0

    tick_fh = None
    blackbox_path = None
    out = None
    debug_obj_fh = None
    debug_cloud_dir = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tick_fh = open(out / "ticks.csv", "w", encoding="utf-8", newline="")
        write_tick_header(tick_fh)
        blackbox_path = out / "blackbox.csv"
        if dump_debug:
            debug_cloud_dir = out / "debug_clouds"
            debug_cloud_dir.mkdir(exist_ok=True)
            debug_obj_fh = open(out / "debug_objects.csv", "w",
                                encoding="utf-8", newline="")
            debug_obj_fh.write("t,id,x,y,class,vx,vy,sources\n")

    status = "aborted" if n_ticks == 0 else "incomplete"
    try:
        for k in range(n_ticks):
            t = k * spec.dt
            _apply_scripts(world, t, applied_scripts)

            # sensing
            cloud = gen_lidar_scan(world, ego, spec.weather, rng, sensor_cfg)
            radar = gen_radar_returns(world, ego, rng, sensor_cfg)
            cams = gen_camera_detections(world, ego, spec.weather, rng, rig,
                                         sensor_cfg)

            # perception
            percep = perceive(cloud, radar, cams, hd_map, ego, snow,
                              tracker, rig, percep_cfg)
            blackout = len(cloud) == 0
            if debug_cloud_dir is not None:
                np.savetxt(debug_cloud_dir / f"frame_{k:05d}.xyz",
                           cloud.xyz, fmt="%.4f", delimiter=" ")
            if debug_obj_fh is not None:
                for o in percep.fused:
                    debug_obj_fh.write(
                        f"{fmt6(t)},{o.id},{fmt6(o.x)},{fmt6(o.y)},"
                        f"{o.cls.value},{fmt6(o.vx)},{fmt6(o.vy)},"
                        f"{'|'.join(sorted(o.sources))}\n")

            # localization
            beta = math.atan(0.5 * (math.tan(ego.delta_r)
                                    + math.tan(ego.delta_f)))
            yaw_rate = ego.v * math.cos(beta) * (
                math.tan(ego.delta_f) - math.tan(ego.delta_r)) / plant.wheelbase
            est, loc_status = localizer.step(ego, yaw_rate, spec.weather,
                                             spec.gnss_faults, t, spec.dt,
                                             hd_map, rng)

            # decision
            es, ed, _ = hd_map.project_to_s(est.x, est.y)
            ego_view = EgoView(x=est.x, y=est.y, psi=est.psi, v=ego.v,
                               s=es, d=ed)
            reset_flag = (consumed_resets < len(spec.emergency_resets)
                          and spec.emergency_resets[consumed_resets] <= t)
            inputs = DecisionInputs(
                ego=ego_view, objects=percep.fused, loc_status=loc_status,
                t=t, safety_trip=safety_trip, blackout=blackout,
                reset_flag=reset_flag)
            state, out_cmd = decider.step(inputs)
            if reset_flag and state.value is FsmStateName.NORMAL_DRIVING \
                    and prev_state_name is FsmStateName.EMERGENCY:
                consumed_resets += 1
            if state.value is FsmStateName.EMERGENCY \
                    and prev_state_name is not FsmStateName.EMERGENCY:
                emergency_entries += 1
            prev_state_name = state.value

            # planning
            track_path, blocked_s = _plan_tick(
                reference, percep, hd_map, ego, est, out_cmd, state,
                plan_cfg, last_track_path)
            if blocked_s is not None:
                metrics.events.append((t, "path_blocked",
                                       f"s={blocked_s:.1f}"))
            if out_cmd.path_request is not None \
                    and out_cmd.path_request[0] in ("pullover", "merge"):
                key = (state.value, out_cmd.path_request)
                if key != maneuver_key:
                    maneuver_path = _plan_maneuver(out_cmd.path_request, ego,
                                                   hd_map, percep.curb,
                                                   plan_cfg)
                    maneuver_key = key
                if maneuver_path is not None:
                    track_path = maneuver_path
            else:
                maneuver_key = None
                maneuver_path = None
            last_track_path = track_path

            # control
            if out_cmd.motion is Motion.EMERGENCY_STOP:
                v_des = ctl.emergency_speed(v_des, lon)
            elif out_cmd.motion is Motion.STOP:
                v_des = max(0.0, min(
                    v_des - lon.a_nom * lon.dt,
                    ctl.longitudinal_command(v_des, out_cmd.target_gap, lon,
                                             out_cmd.speed_cap)))
            else:
                v_des = ctl.longitudinal_command(v_des, out_cmd.target_gap,
                                                 lon, out_cmd.speed_cap)
            try:
                dpsi = ctl.heading_error(
                    VehicleState(est.x, est.y, est.psi, ego.v, t=t),
                    track_path, lat.lookahead(ego.v))
            except ctl.PathExhausted:
                dpsi = 0.0
            delta_f, delta_r = ctl.lateral_command(dpsi, pid, lat, spec.dt)

            # plant
            new_ego = ctl.integrate_dynamics(ego, v_des, delta_f, delta_r,
                                             spec.dt, plant)
            _integrate_actors(world, spec.dt)

            # safety
            snap = TickSnapshot(
                t=t, ego=new_ego, actors=world.actors, fsm=state.value,
                motion=out_cmd.motion, door=out_cmd.door,
                speed_cap=out_cmd.speed_cap, v_des=v_des,
                loc_status=loc_status, prev_demand=prev_demand,
                est_xy=(est.x, est.y))
            verdict = monitor.check_invariants(snap, spec.dt)
            if not verdict.ok:
                metrics.violations.extend(verdict.violations)
                safety_trip = True
            elif state.value is FsmStateName.EMERGENCY:
                safety_trip = False  # demand latched by the FSM already
            prev_demand = loc_status is LocStatus.DEMAND_SAFE_STOP

            # bookkeeping + logging
            s_true, d_true, _ = hd_map.project_to_s(ego.x, ego.y)
            gap_true = true_min_gap(ego, world.actors, dec_cfg.ego)
            metrics.min_spacing = min(metrics.min_spacing, gap_true)
            metrics.max_speed = max(metrics.max_speed, ego.v)
            name = state.value.value
            metrics.state_seconds[name] = (
                metrics.state_seconds.get(name, 0.0) + spec.dt)
            row = TickRow(
                t=t, s=s_true, d=d_true, x=ego.x, y=ego.y, psi=ego.psi,
                v=ego.v, fsm_state=name, decision=out_cmd.motion.value,
                gap_m=out_cmd.target_gap, v_des=v_des, delta_f=ego.delta_f,
                n_objects=len(percep.fused), loc_mode=est.mode.value)
            if tick_fh is not None:
                write_tick_log(tick_fh, row)
            blackbox.record(row)
            if trace is not None:
                trace.append({
                    "t": t, "s": s_true, "d": d_true, "v": ego.v,
                    "v_des": v_des, "gap": out_cmd.target_gap,
                    "speed_cap": out_cmd.speed_cap, "fsm": name,
                    "motion": out_cmd.motion.value, "dpsi": dpsi,
                    "delta_f": delta_f, "loc_status": loc_status.value,
                    "est_err": math.hypot(est.x - ego.x, est.y - ego.y),
                    "n_objects": len(percep.fused),
                    "objects": [(o.id, o.cls.value, o.x, o.y,
                                 sorted(o.sources)) for o in percep.fused],
                    "door": out_cmd.door.value,
                })

            if (not verdict.ok or state.value is FsmStateName.EMERGENCY) \
                    and blackbox_path is not None:
                with open(blackbox_path, "w", encoding="utf-8",
                          newline="") as bb:
                    blackbox.dump(bb)

            # advance
            step = s_true - prev_s_true
            if hd_map.loop:
                half = hd_map.s_max / 2.0
                step = (step + half) % hd_map.s_max - half
            progress += step
            prev_s_true = s_true
            ego = new_ego

            # termination checks
            route_done = (progress >= hd_map.s_max - 1.5 if hd_map.loop
                          else s_true >= hd_map.s_max - 1.5)
            if route_done and not decider.stops_pending:
                status = "completed"
                metrics.ticks = k + 1
                metrics.sim_time = t + spec.dt
                break
            if state.value is FsmStateName.EMERGENCY and ego.v < 0.01:
                more_resets = consumed_resets < len(spec.emergency_resets)
                if not more_resets:
                    stop_settle += spec.dt
                    if stop_settle >= 2.0:
                        status = "aborted"
                        metrics.ticks = k + 1
                        metrics.sim_time = t + spec.dt
                        break
            else:
                stop_settle = 0.0
        else:
            if n_ticks > 0:
                metrics.ticks = n_ticks
                metrics.sim_time = n_ticks * spec.dt
    finally:
        if tick_fh is not None:
            tick_fh.close()
        if debug_obj_fh is not None:
            debug_obj_fh.close()

    metrics.status = status
    metrics.stops_served = list(decider.stops_served)
    metrics.stops_skipped = list(decider.stops_skipped)
    metrics.emergency_count = emergency_entries
    metrics.events = sorted(metrics.events + decider.events,
                            key=lambda e: (e[0], e[1]))

    summary_path = None
    if out is not None:
        summary_path = out / "summary.txt"
        with open(summary_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(write_summary(metrics))
    return RunArtifacts(metrics=metrics,
                        tick_log_path=(out / "ticks.csv") if out else None,
                        summary_path=summary_path,
                        blackbox_path=blackbox_path)


def _plan_tick(reference, percep, hd_map, ego, est, out_cmd, state, plan_cfg,
               last_path):
    """Local window of the reference path, potential-field adjusted and
    smoothed. Falls back to the previous path when blocked."""
    ego_s, _, _ = hd_map.project_to_s(est.x, est.y)
    wp = reference.waypoints
    rel = wp[:, 3] - ego_s
    if hd_map.loop:
        half = hd_map.s_max / 2.0
        rel = (rel + half) % hd_map.s_max - half
    sel = (rel >= -6.0) & (rel <= 46.0)
    if not sel.any():
        return (last_path if last_path is not None
                else reference.sampled()), None
    idx = np.where(sel)[0]
    order = np.argsort(rel[idx])
    window = pln.PathSegment(wp[idx[order]], reference.kind)
    # thin to the planning waypoint step
    stride = max(1, int(round(plan_cfg.waypoint_step / hd_map.ds)))
    thin = pln.PathSegment(window.waypoints[::stride], reference.kind)
    try:
        adjusted = pln.apply_potential_field(thin, percep.fused, percep.curb,
                                             hd_map, plan_cfg)
        spec = pln.bezier_smooth(adjusted.xy, plan_cfg)
        return spec.sampled(plan_cfg.sample_step), None
    except pln.PathBlocked as e:
        return (last_path if last_path is not None
                else thin.sampled()), e.s
    except pln.CurvatureExceeded:
        return (last_path if last_path is not None
                else thin.sampled()), ego_s


def _plan_maneuver(request, ego, hd_map, curb, plan_cfg):
    try:
        if request[0] == "pullover":
            spec = pln.plan_pullover(ego, request[1], hd_map, curb, plan_cfg)
        else:
            spec = pln.plan_merge(ego, hd_map, curb, plan_cfg)
        return spec.sampled(plan_cfg.sample_step)
    except (pln.CurvatureExceeded, ValueError):
        return None


# ---------------------------------------------------------------------------
# Batch execution

def _run_one_batch_item(args):
    path_str, out_root = args
    path = Path(path_str)
    try:
        spec = parse_scenario(path.read_bytes())
        run_out = Path(out_root) / path.stem if out_root else None
        art = run_scenario(spec, out_dir=run_out, scenario_dir=path.parent)
        m = art.metrics
        by_rule = {}
        for (rule, _, _) in m.violations:
            by_rule[rule] = by_rule.get(rule, 0) + 1
        return {"scenario": path.name, "status": m.status,
                "violations": by_rule, "error": None,
                "passed": m.status != "aborted" and not m.violations}
    except Exception as e:  # never halt the batch
        return {"scenario": path.name, "status": "error",
                "violations": {}, "error": f"{type(e).__name__}: {e}",
                "passed": False}


def batch_run(directory, jobs: int = 1, out_root=None) -> dict:
    """Run every *.scn scenario in a directory; per-scenario isolation.

    Returns {"results": [...], "ok": bool}; results are ordered by
    scenario filename regardless of parallelism.
    """
    directory = Path(directory)
    files = sorted(directory.glob("*.scn"))
    args = [(str(f), str(out_root) if out_root else None) for f in files]
    if jobs <= 1 or len(files) <= 1:
        results = [_run_one_batch_item(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one_batch_item, args))
    results.sort(key=lambda r: r["scenario"])
    return {"results": results, "ok": all(r["passed"] for r in results)}


def format_batch_report(report: dict) -> str:
    lines = []
    for r in report["results"]:
        rules = ",".join(f"{k}={v}" for k, v in sorted(r["violations"].items()))
        status = "PASS" if r["passed"] else "FAIL"
        detail = r["error"] or r["status"]
        lines.append(f"{status} {r['scenario']}: {detail}"
                     + (f" [{rules}]" if rules else ""))
    lines.append(f"total = {len(report['results'])}, "
                 f"failed = {sum(not r['passed'] for r in report['results'])}")
    return "\n".join(lines) + "\n"
