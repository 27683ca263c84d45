"""Scenario file parsing, map file I/O, and the run's CSV/summary outputs.

Scenario files are sectioned key-value text: `[section]` headers,
`key = value` lines, `#` comments. Parsing is total: any byte input yields
either a ScenarioSpec or a structured error carrying a line number.
Unknown keys are hard errors; silent typos in safety scenarios are not
acceptable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Optional

import numpy as np

from .world import (ActorKind, HDMap, Landmark, LandmarkKind, SRecord, Zone,
                    wrap_angle)

FORMAT_VERSION = 1

TICK_LOG_FIELDS = ("t", "s", "d", "x", "y", "psi", "v", "fsm_state",
                   "decision", "gap_m", "v_des", "delta_f", "n_objects",
                   "loc_mode")


class ScenarioError(ValueError):
    """Base for structured scenario/map file errors."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line else message)


class ScenarioSyntaxError(ScenarioError):
    pass


class ScenarioSemanticError(ScenarioError):
    pass


class MissingSectionError(ScenarioError):
    def __init__(self, section: str):
        self.section = section
        super().__init__(f"missing required section [{section}]")


class MapFormatError(ScenarioError):
    pass


class WeatherMode(Enum):
    CLEAR = "clear"
    RAIN = "rain"
    SNOW = "snow"
    FOG = "fog"


# Per-mode defaults. Densities are points per cubic meter of the clutter
# shell; dropout is the per-detection camera loss probability.
DEFAULT_NOISE_DENSITY = {
    WeatherMode.CLEAR: 0.0,
    WeatherMode.RAIN: 0.5,
    WeatherMode.SNOW: 1.0,
    WeatherMode.FOG: 0.8,
}

DEFAULT_CAMERA_DROPOUT = {
    WeatherMode.CLEAR: 0.02,
    WeatherMode.RAIN: 0.10,
    WeatherMode.SNOW: 0.25,
    WeatherMode.FOG: 0.35,
}


@dataclass
class WeatherSpec:
    mode: WeatherMode = WeatherMode.CLEAR
    noise_density: float = 0.0
    camera_dropout: float = 0.02
    gnss_degradation: float = 0.0
    snowbank_encroachment: float = 0.0
    snowbank_from: Optional[float] = None
    snowbank_to: Optional[float] = None

    def validate(self):
        if self.noise_density < 0:
            raise ScenarioSemanticError("weather.noise_density must be >= 0")
        if not 0.0 <= self.camera_dropout <= 1.0:
            raise ScenarioSemanticError(
                "weather.camera_dropout must be in [0, 1]")
        if self.gnss_degradation < 0:
            raise ScenarioSemanticError(
                "weather.gnss_degradation must be >= 0")
        if self.snowbank_encroachment < 0:
            raise ScenarioSemanticError(
                "weather.snowbank_encroachment must be >= 0")


@dataclass
class ActorSpec:
    """Declarative actor: placement either world (x, y) or map (s, d)."""

    kind: ActorKind
    x: Optional[float] = None
    y: Optional[float] = None
    s: Optional[float] = None
    d: Optional[float] = None
    vx: float = 0.0
    vy: float = 0.0
    length: Optional[float] = None
    width: Optional[float] = None
    height: Optional[float] = None
    rcs: Optional[float] = None
    script: list = field(default_factory=list)  # (t, cmd, args...) tuples

    def validate(self):
        has_xy = self.x is not None or self.y is not None
        has_sd = self.s is not None or self.d is not None
        if has_xy and has_sd:
            raise ScenarioSemanticError(
                "actor placement must be x/y or s/d, not both")
        if not has_xy and not has_sd:
            raise ScenarioSemanticError("actor needs x/y or s/d placement")
        for name in ("length", "width", "height"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ScenarioSemanticError(f"actor.{name} must be > 0")


@dataclass
class ScenarioSpec:
    map_path: str
    duration: float
    dt: float = 0.1
    seed: int = 0
    ego_start: tuple = (0.0, 0.0, 0.0)  # (s, d, v)
    actors: list = field(default_factory=list)
    weather: WeatherSpec = field(default_factory=WeatherSpec)
    gnss_faults: list = field(default_factory=list)  # (t0, t1) windows
    stops_to_serve: list = field(default_factory=list)
    emergency_resets: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def validate(self):
        if not 0.0 < self.dt <= 0.5:
            raise ScenarioSemanticError(
                f"run.dt must be in (0, 0.5], got {self.dt}")
        if self.duration <= 0:
            raise ScenarioSemanticError("run.duration must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ScenarioSemanticError("run.seed must fit in 64 bits")
        if self.ego_start[2] < 0:
            raise ScenarioSemanticError("ego.start_v must be >= 0")
        self.weather.validate()
        for a in self.actors:
            a.validate()
        for (t0, t1) in self.gnss_faults:
            if t1 <= t0:
                raise ScenarioSemanticError(
                    f"gnss outage window ({t0}, {t1}) is empty")
            if t0 < 0 or t1 > self.duration:
                raise ScenarioSemanticError(
                    f"gnss outage ({t0}, {t1}) outside [0, duration]")


def _normalize_outages(windows: list, duration: float) -> list:
    """Clip to [0, duration], sort, and merge overlaps."""
    clipped = []
    for (t0, t1) in windows:
        t0, t1 = max(0.0, t0), min(duration, t1)
        if t1 > t0:
            clipped.append((t0, t1))
    clipped.sort()
    merged = []
    for w in clipped:
        if merged and w[0] <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], w[1]))
        else:
            merged.append(w)
    return merged


# ---------------------------------------------------------------------------
# Scenario parsing

_KNOWN_SECTIONS = {"map", "run", "ego", "weather", "gnss_faults", "events",
                   "actor"}
_REPEATABLE_SECTIONS = {"actor"}

# section -> key -> (repeatable, parser); parser gets (raw string, line no)
def _p_float(raw, line):
    try:
        return float(raw)
    except ValueError:
        raise ScenarioSyntaxError(f"expected a number, got {raw!r}", line)


def _p_int(raw, line):
    try:
        return int(raw, 0)
    except ValueError:
        raise ScenarioSyntaxError(f"expected an integer, got {raw!r}", line)


def _p_str(raw, line):
    return raw


def _p_floats(n):
    def parse(raw, line):
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != n:
            raise ScenarioSyntaxError(
                f"expected {n} comma-separated numbers, got {raw!r}", line)
        return tuple(_p_float(p, line) for p in parts)
    return parse


def _p_int_list(raw, line):
    raw = raw.strip()
    if not raw:
        return []
    return [_p_int(p.strip(), line) for p in raw.split(",")]


_SCHEMA = {
    "map": {"path": (False, _p_str)},
    "run": {"dt": (False, _p_float), "duration": (False, _p_float),
            "seed": (False, _p_int), "stops": (False, _p_int_list)},
    "ego": {"start_s": (False, _p_float), "start_d": (False, _p_float),
            "start_v": (False, _p_float)},
    "weather": {"mode": (False, _p_str), "noise_density": (False, _p_float),
                "camera_dropout": (False, _p_float),
                "gnss_degradation": (False, _p_float),
                "snowbank_encroachment": (False, _p_float),
                "snowbank_from": (False, _p_float),
                "snowbank_to": (False, _p_float)},
    "gnss_faults": {"outage": (True, _p_floats(2))},
    "events": {"emergency_reset": (True, _p_float)},
    "actor": {"kind": (False, _p_str),
              "x": (False, _p_float), "y": (False, _p_float),
              "s": (False, _p_float), "d": (False, _p_float),
              "vx": (False, _p_float), "vy": (False, _p_float),
              "length": (False, _p_float), "width": (False, _p_float),
              "height": (False, _p_float), "rcs": (False, _p_float),
              "move": (True, _p_floats(3)), "warp": (True, _p_floats(3))},
}


def _decode(text: bytes) -> str:
    try:
        return text.decode("utf-8")
    except UnicodeDecodeError as e:
        line = text[:e.start].count(b"\n") + 1
        raise ScenarioSyntaxError("invalid UTF-8", line)


def parse_scenario(text: bytes) -> ScenarioSpec:
    """Parse scenario bytes into a validated ScenarioSpec.

    Raises ScenarioSyntaxError / ScenarioSemanticError / MissingSectionError;
    never anything unstructured.
    """
    if isinstance(text, str):
        text = text.encode("utf-8")
    decoded = _decode(text)

    # ordered list of (section_name, {key: value-or-list}, line)
    sections = []
    current = None
    top_level = {}
    for line_no, raw in enumerate(decoded.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ScenarioSyntaxError("unterminated section header",
                                          line_no)
            name = stripped[1:-1].strip()
            if name not in _KNOWN_SECTIONS:
                raise ScenarioSemanticError(f"unknown section [{name}]",
                                            line_no)
            if (name not in _REPEATABLE_SECTIONS
                    and any(sec == name for sec, _, _ in sections)):
                raise ScenarioSemanticError(f"duplicate section [{name}]",
                                            line_no)
            current = {}
            sections.append((name, current, line_no))
            continue
        if "=" not in stripped:
            raise ScenarioSyntaxError(
                f"expected 'key = value', got {stripped!r}", line_no)
        key, _, raw_val = stripped.partition("=")
        key, raw_val = key.strip(), raw_val.strip()
        if not key:
            raise ScenarioSyntaxError("empty key", line_no)
        if current is None:
            if key != "format_version":
                raise ScenarioSemanticError(
                    f"key {key!r} before any section", line_no)
            top_level["format_version"] = (_p_int(raw_val, line_no), line_no)
            continue
        sec_name = sections[-1][0]
        schema = _SCHEMA[sec_name]
        if key not in schema:
            raise ScenarioSemanticError(
                f"unknown key {key!r} in section [{sec_name}]", line_no)
        repeatable, parser = schema[key]
        value = parser(raw_val, line_no)
        if repeatable:
            current.setdefault(key, []).append(value)
        elif key in current:
            raise ScenarioSemanticError(
                f"duplicate key {key!r} in section [{sec_name}]", line_no)
        else:
            current[key] = value

    fmt = top_level.get("format_version", (FORMAT_VERSION, None))[0]
    if fmt != FORMAT_VERSION:
        raise ScenarioSemanticError(
            f"unsupported format_version {fmt} (supported: {FORMAT_VERSION})")

    by_name = {name: data for name, data, _ in sections
               if name not in _REPEATABLE_SECTIONS}
    if "map" not in by_name:
        raise MissingSectionError("map")
    if "run" not in by_name:
        raise MissingSectionError("run")
    if "path" not in by_name["map"]:
        raise ScenarioSemanticError("section [map] needs a 'path' key")
    if "duration" not in by_name["run"]:
        raise ScenarioSemanticError("section [run] needs a 'duration' key")

    run = by_name["run"]
    ego = by_name.get("ego", {})
    weather = _build_weather(by_name.get("weather", {}))
    duration = run["duration"]

    actors = []
    for name, data, line_no in sections:
        if name != "actor":
            continue
        if "kind" not in data:
            raise ScenarioSemanticError("actor needs a 'kind' key", line_no)
        try:
            kind = ActorKind(data["kind"])
        except ValueError:
            raise ScenarioSemanticError(
                f"unknown actor kind {data['kind']!r}", line_no)
        script = []
        for (t, vx, vy) in data.get("move", []):
            script.append((t, "move", vx, vy))
        for (t, x, y) in data.get("warp", []):
            script.append((t, "warp", x, y))
        script.sort(key=lambda e: (e[0], e[1]))
        actors.append(ActorSpec(
            kind=kind, x=data.get("x"), y=data.get("y"),
            s=data.get("s"), d=data.get("d"),
            vx=data.get("vx", 0.0), vy=data.get("vy", 0.0),
            length=data.get("length"), width=data.get("width"),
            height=data.get("height"), rcs=data.get("rcs"), script=script))

    spec = ScenarioSpec(
        map_path=by_name["map"]["path"],
        duration=duration,
        dt=run.get("dt", 0.1),
        seed=run.get("seed", 0),
        ego_start=(ego.get("start_s", 0.0), ego.get("start_d", 0.0),
                   ego.get("start_v", 0.0)),
        actors=actors,
        weather=weather,
        gnss_faults=_normalize_outages(
            by_name.get("gnss_faults", {}).get("outage", []), duration),
        stops_to_serve=run.get("stops", []),
        emergency_resets=sorted(
            by_name.get("events", {}).get("emergency_reset", [])),
        format_version=fmt,
    )
    spec.validate()
    return spec


def _build_weather(data: dict) -> WeatherSpec:
    mode_raw = data.get("mode", "clear")
    try:
        mode = WeatherMode(mode_raw)
    except ValueError:
        raise ScenarioSemanticError(f"unknown weather mode {mode_raw!r}")
    return WeatherSpec(
        mode=mode,
        noise_density=data.get("noise_density", DEFAULT_NOISE_DENSITY[mode]),
        camera_dropout=data.get("camera_dropout",
                                DEFAULT_CAMERA_DROPOUT[mode]),
        gnss_degradation=data.get("gnss_degradation", 0.0),
        snowbank_encroachment=data.get("snowbank_encroachment", 0.0),
        snowbank_from=data.get("snowbank_from"),
        snowbank_to=data.get("snowbank_to"),
    )


def serialize_scenario(spec: ScenarioSpec) -> str:
    """Write a spec back to text; parse(serialize(spec)) == spec."""
    out = [f"format_version = {spec.format_version}", ""]
    out += ["[map]", f"path = {spec.map_path}", ""]
    out += ["[run]",
            f"dt = {spec.dt!r}",
            f"duration = {spec.duration!r}",
            f"seed = {spec.seed}"]
    if spec.stops_to_serve:
        out.append("stops = " + ", ".join(str(z) for z in spec.stops_to_serve))
    out.append("")
    s, d, v = spec.ego_start
    out += ["[ego]", f"start_s = {s!r}", f"start_d = {d!r}",
            f"start_v = {v!r}", ""]
    w = spec.weather
    out += ["[weather]", f"mode = {w.mode.value}",
            f"noise_density = {w.noise_density!r}",
            f"camera_dropout = {w.camera_dropout!r}",
            f"gnss_degradation = {w.gnss_degradation!r}",
            f"snowbank_encroachment = {w.snowbank_encroachment!r}"]
    if w.snowbank_from is not None:
        out.append(f"snowbank_from = {w.snowbank_from!r}")
    if w.snowbank_to is not None:
        out.append(f"snowbank_to = {w.snowbank_to!r}")
    out.append("")
    if spec.gnss_faults:
        out.append("[gnss_faults]")
        for (t0, t1) in spec.gnss_faults:
            out.append(f"outage = {t0!r}, {t1!r}")
        out.append("")
    if spec.emergency_resets:
        out.append("[events]")
        for t in spec.emergency_resets:
            out.append(f"emergency_reset = {t!r}")
        out.append("")
    for a in spec.actors:
        out.append("[actor]")
        out.append(f"kind = {a.kind.value}")
        for name in ("x", "y", "s", "d"):
            val = getattr(a, name)
            if val is not None:
                out.append(f"{name} = {val!r}")
        if a.vx != 0.0:
            out.append(f"vx = {a.vx!r}")
        if a.vy != 0.0:
            out.append(f"vy = {a.vy!r}")
        for name in ("length", "width", "height", "rcs"):
            val = getattr(a, name)
            if val is not None:
                out.append(f"{name} = {val!r}")
        for entry in a.script:
            t, cmd = entry[0], entry[1]
            args = ", ".join(repr(float(v)) for v in entry[2:])
            out.append(f"{cmd} = {t!r}, {args}")
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Map file I/O
#
# One record per line: s,cx,cy,heading,right_curb_offset,left_bound_offset,
# zone,zone_id (zone_id empty for normal records). Landmark lines start with
# `L,`; `#` starts a comment.

def save_map(hd_map: HDMap, sink: IO[str]) -> None:
    sink.write("# s,cx,cy,heading,right_curb_offset,left_bound_offset,"
               "zone,zone_id\n")
    for r in hd_map.records:
        zid = "" if r.zone_id is None else str(r.zone_id)
        sink.write(f"{r.s!r},{r.cx!r},{r.cy!r},{r.heading!r},"
                   f"{r.right_curb_offset!r},{r.left_bound_offset!r},"
                   f"{r.zone.value},{zid}\n")
    for lm in hd_map.landmarks:
        geom = ",".join(repr(float(v)) for v in lm.geometry.ravel())
        s0, s1 = lm.s_visible_from
        sink.write(f"L,{lm.id},{lm.kind.value},{geom},{s0!r},{s1!r}\n")


def load_map(source) -> HDMap:
    """Load a map from a text stream or a string of file content."""
    if hasattr(source, "read"):
        content = source.read()
    else:
        content = source
    records, landmarks = [], []
    for line_no, raw in enumerate(content.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if parts[0] == "L":
            landmarks.append(_parse_landmark(parts, line_no))
            continue
        if len(parts) != 8:
            raise MapFormatError(
                f"expected 8 fields in record line, got {len(parts)}",
                line_no)
        try:
            zone = Zone(parts[6])
        except ValueError:
            raise MapFormatError(f"unknown zone {parts[6]!r}", line_no)
        zid = None if parts[7] == "" else int(parts[7])
        try:
            records.append(SRecord(
                s=float(parts[0]), cx=float(parts[1]), cy=float(parts[2]),
                heading=wrap_angle(float(parts[3])),
                right_curb_offset=float(parts[4]),
                left_bound_offset=float(parts[5]),
                zone=zone, zone_id=zid))
        except ValueError as e:
            raise MapFormatError(str(e), line_no)
    if not records:
        raise MapFormatError("map file has no records")
    return HDMap(records, landmarks)


def _parse_landmark(parts: list, line_no: int) -> Landmark:
    try:
        kind = LandmarkKind(parts[2])
    except (ValueError, IndexError):
        raise MapFormatError("bad landmark kind", line_no)
    n_geom = 2 if kind is LandmarkKind.LIGHT_POLE else 4
    if len(parts) != 3 + n_geom + 2:
        raise MapFormatError(
            f"landmark line needs {3 + n_geom + 2} fields", line_no)
    try:
        vals = [float(p) for p in parts[3:]]
        geom = np.array(vals[:n_geom])
        if n_geom == 4:
            geom = geom.reshape(2, 2)
        return Landmark(id=int(parts[1]), kind=kind, geometry=geom,
                        s_visible_from=(vals[-2], vals[-1]))
    except ValueError as e:
        raise MapFormatError(str(e), line_no)


# ---------------------------------------------------------------------------
# Tick log and run summary

def fmt6(v: float) -> str:
    """Fixed 6-significant-digit float formatting for byte-stable logs."""
    return np.format_float_positional(float(v), precision=6, unique=False,
                                      fractional=False, trim="k")


@dataclass
class TickRow:
    t: float
    s: float
    d: float
    x: float
    y: float
    psi: float
    v: float
    fsm_state: str
    decision: str
    gap_m: Optional[float]
    v_des: float
    delta_f: float
    n_objects: int
    loc_mode: str

    def to_csv(self) -> str:
        gap = "" if self.gap_m is None else fmt6(self.gap_m)
        return ",".join([
            fmt6(self.t), fmt6(self.s), fmt6(self.d), fmt6(self.x),
            fmt6(self.y), fmt6(self.psi), fmt6(self.v), self.fsm_state,
            self.decision, gap, fmt6(self.v_des), fmt6(self.delta_f),
            str(self.n_objects), self.loc_mode])


def write_tick_header(sink: IO[str]) -> None:
    sink.write(f"# format_version={FORMAT_VERSION}\n")
    sink.write(",".join(TICK_LOG_FIELDS) + "\n")


def write_tick_log(sink: IO[str], row: TickRow) -> None:
    """Append one CSV row. Identical runs produce byte-identical files."""
    sink.write(row.to_csv() + "\n")


@dataclass
class RunMetrics:
    status: str = "aborted"  # completed | incomplete | aborted
    ticks: int = 0
    sim_time: float = 0.0
    min_spacing: float = math.inf
    max_speed: float = 0.0
    stops_served: list = field(default_factory=list)
    stops_skipped: list = field(default_factory=list)
    emergency_count: int = 0
    violations: list = field(default_factory=list)  # (rule, t, detail)
    state_seconds: dict = field(default_factory=dict)
    events: list = field(default_factory=list)  # (t, tag, detail)


_FSM_STATE_ORDER = ("normal_driving", "intersection_handling", "pullover",
                    "passenger_boarding", "merging", "emergency")


def write_summary(metrics: RunMetrics) -> str:
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"status = {metrics.status}",
        f"ticks = {metrics.ticks}",
        f"sim_time_s = {fmt6(metrics.sim_time)}",
        "min_spacing_m = " + (
            "inf" if math.isinf(metrics.min_spacing)
            else fmt6(metrics.min_spacing)),
        f"max_speed_mps = {fmt6(metrics.max_speed)}",
        "stops_served = " + ",".join(str(z) for z in metrics.stops_served),
        "stops_skipped = " + ",".join(str(z) for z in metrics.stops_skipped),
        f"emergency_count = {metrics.emergency_count}",
        f"violation_count = {len(metrics.violations)}",
    ]
    for name in _FSM_STATE_ORDER:
        secs = metrics.state_seconds.get(name, 0.0)
        lines.append(f"state_s_{name} = {fmt6(secs)}")
    for (rule, t, detail) in metrics.violations:
        lines.append(f"violation = {rule}, {fmt6(t)}, {detail}")
    for (t, tag, detail) in metrics.events:
        lines.append(f"event = {fmt6(t)}, {tag}, {detail}")
    return "\n".join(lines) + "\n"
