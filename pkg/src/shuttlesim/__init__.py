"""shuttlesim: a deterministic desk-scale simulator of an all-weather
autonomous shuttle stack (synthetic sensing, perception, localization,
FSM decision making, potential-field/Bezier planning, control, and a
runtime safety monitor), driven by declarative scenario files."""

__version__ = "0.1.0"

from .world import (ActorKind, EgoParams, HDMap, Landmark, LandmarkKind,
                    ObstacleActor, SRecord, VehicleState, WorldState, Zone,
                    make_loop_map, make_straight_map)
from .scenario import (ScenarioSpec, WeatherMode, WeatherSpec,
                       parse_scenario, serialize_scenario, load_map,
                       save_map)
from .harness import batch_run, run_scenario

__all__ = [
    "ActorKind", "EgoParams", "HDMap", "Landmark", "LandmarkKind",
    "ObstacleActor", "SRecord", "VehicleState", "WorldState", "Zone",
    "make_loop_map", "make_straight_map", "ScenarioSpec", "WeatherMode",
    "WeatherSpec", "parse_scenario", "serialize_scenario", "load_map",
    "save_map", "batch_run", "run_scenario", "__version__",
]
