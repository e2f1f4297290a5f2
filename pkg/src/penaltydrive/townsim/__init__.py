from .scenario import ScenarioConfig, ScenarioPack, dump_pack, load_pack, parse_pack, random_routes
from .sim import (
    DEFAULT_SIM,
    InfractionEvent,
    InfractionKind,
    NpcScript,
    RuleContext,
    SignEncounter,
    SimConfig,
    SimState,
    boxes_overlap,
    initial_state,
    route_progress,
    rule_context,
    step,
)
from .world import (
    Color,
    GridTown,
    Junction,
    Lane,
    Obstacle,
    Route,
    StopLine,
    StopSign,
    TownMap,
    TrafficLight,
    build_route,
    light_color_at,
    make_town,
)

__all__ = [name for name in dir() if not name.startswith("_")]
