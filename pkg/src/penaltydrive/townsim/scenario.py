"""Scenario packs: one town plus a list of routes, stored as ``townsim/1`` text."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..kvfile import KVFormatError, parse_kv, parse_options, parse_points
from .sim import DEFAULT_SIM, NpcScript, SimConfig, SimState, initial_state
from .world import Color, GridTown, Junction, Obstacle, Route, TownMap, build_route, make_town

HEADER = "townsim/1"
DEFAULT_PACK_PATH = Path(__file__).resolve().parent.parent / "packs" / "standard.town"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    town: TownMap
    route: Route
    npc_scripts: tuple[NpcScript, ...] = ()
    time_limit: float = 120.0
    dt: float = 0.5
    start_time: float = 0.0
    index: int = 0

    def __post_init__(self) -> None:
        if len(self.route.goals) < 2:
            raise ValueError("route needs at least two points")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def initial_state(self, seed: int = 0, config: SimConfig = DEFAULT_SIM) -> SimState:
        from dataclasses import replace
        st = initial_state(self.town, self.route, self.npc_scripts, rng_seed=seed, config=config)
        if self.start_time:
            npcs = tuple(s.state_at(self.start_time) for s in self.npc_scripts)
            st = replace(st, time=self.start_time, npcs=npcs)
        return st


@dataclass
class ScenarioPack:
    name: str
    grid: GridTown
    town: TownMap
    scenarios: list[ScenarioConfig] = field(default_factory=list)


def _fmt(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def parse_pack(text: str) -> ScenarioPack:
    entries = parse_kv(text, HEADER)
    name = "pack"
    lane_width, stop_distance, sign_radius = 4.0, 6.0, 4.0
    schedule = None
    roads, junctions, obstacles = [], [], []
    routes, npcs = [], []
    for key, value in entries:
        pos, opts = parse_options(value)
        try:
            if key == "name":
                name = value
            elif key == "lane_width":
                lane_width = float(value)
            elif key == "stop_distance":
                stop_distance = float(value)
            elif key == "sign_radius":
                sign_radius = float(value)
            elif key == "light_schedule":
                schedule = tuple((Color(p.split(":")[0]), float(p.split(":")[1])) for p in pos)
            elif key == "road":
                roads.append(tuple(float(v) for v in pos))
                if len(roads[-1]) != 4:
                    raise KVFormatError("road needs x0 y0 x1 y1")
            elif key == "junction":
                junctions.append(Junction((float(pos[0]), float(pos[1])), pos[2],
                                          float(opts.get("offset", 0.0))))
            elif key == "obstacle":
                vals = [float(v) for v in pos]
                obstacles.append(Obstacle(len(obstacles), *vals))
            elif key == "route":
                routes.append(opts)
            elif key == "npc":
                npcs.append(opts)
            else:
                raise KVFormatError(f"unknown key {key!r}")
        except (IndexError, ValueError) as exc:
            raise KVFormatError(f"{key} = {value}: {exc}") from exc
    grid_kw = dict(roads=tuple(roads), junctions=tuple(junctions), lane_width=lane_width,
                   stop_distance=stop_distance, sign_radius=sign_radius, obstacles=tuple(obstacles))
    if schedule is not None:
        grid_kw["light_schedule"] = schedule
    grid = GridTown(**grid_kw)
    town = make_town(grid)
    pack = ScenarioPack(name, grid, town)
    for i, r in enumerate(routes):
        rname = r.get("name", f"route{i}")
        goals = parse_points(r["points"])
        route = build_route(goals, lane_width, name=rname)
        scripts = tuple(NpcScript(tuple(parse_points(n["path"])), float(n.get("speed", 4.0)),
                                  float(n.get("start", 0.0)))
                        for n in npcs if n.get("route") == rname)
        pack.scenarios.append(ScenarioConfig(
            name=rname, town=town, route=route, npc_scripts=scripts,
            time_limit=float(r.get("time_limit", 120.0)), dt=float(r.get("dt", 0.5)),
            start_time=float(r.get("clock", 0.0)), index=i))
    return pack


def load_pack(path: str | Path) -> ScenarioPack:
    return parse_pack(Path(path).read_text())


def dump_pack(pack: ScenarioPack) -> str:
    g = pack.grid
    lines = [HEADER, f"name = {pack.name}", f"lane_width = {_fmt(g.lane_width)}",
             f"stop_distance = {_fmt(g.stop_distance)}", f"sign_radius = {_fmt(g.sign_radius)}",
             "light_schedule = " + " ".join(f"{c.value}:{_fmt(d)}" for c, d in g.light_schedule)]
    lines += ["road = " + " ".join(_fmt(v) for v in r) for r in g.roads]
    for j in g.junctions:
        lines.append(f"junction = {_fmt(j.center[0])} {_fmt(j.center[1])} {j.control} offset={_fmt(j.light_offset)}")
    for o in g.obstacles:
        lines.append("obstacle = " + " ".join(_fmt(v) for v in (o.x, o.y, o.heading, o.length, o.width)))
    for sc in pack.scenarios:
        pts = " ; ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in sc.route.goals)
        lines.append(f"route = name={sc.name} time_limit={_fmt(sc.time_limit)} dt={_fmt(sc.dt)} "
                     f"clock={_fmt(sc.start_time)} points= {pts}")
        for n in sc.npc_scripts:
            pts = " ; ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in n.path)
            lines.append(f"npc = route={sc.name} speed={_fmt(n.speed)} start={_fmt(n.start_time)} path= {pts}")
    return "\n".join(lines) + "\n"


def random_routes(pack: ScenarioPack, n: int, seed: int, prefix: str = "gen",
                  min_legs: int = 2, max_legs: int = 3, time_limit: float = 120.0) -> ScenarioPack:
    """New pack on the same town with ``n`` random grid walks.

    Each route starts mid-block, passes ``min_legs``..``max_legs`` junctions
    (turning or going straight) and ends mid-block; the world clock at spawn is
    random so routes meet lights in every phase.
    """
    rng = np.random.default_rng(seed)
    nodes = [np.asarray(j.center, dtype=float) for j in pack.grid.junctions]
    town = pack.town
    out = ScenarioPack(f"{pack.name}-{prefix}{seed}", pack.grid, town)
    dirs = [np.array(d, dtype=float) for d in ((0, 1), (0, -1), (1, 0), (-1, 0))]

    def has_node(p):
        return any(np.allclose(p, q) for q in nodes)

    def spacing_along(p, d):
        best = math.inf
        for q in nodes:
            rel = q - p
            along = rel @ d
            if along > 1e-6 and abs(rel @ np.array([d[1], -d[0]])) < 1e-6:
                best = min(best, along)
        return best

    while len(out.scenarios) < n:
        cur = nodes[rng.integers(len(nodes))]
        d = dirs[rng.integers(4)]
        back = spacing_along(cur, -d)
        if not math.isfinite(back):
            back = 60.0
        start = cur - d * min(back / 2, 40.0)
        if not town.drivable(start[None])[0]:
            continue
        goals = [start, cur]
        legs = int(rng.integers(min_legs, max_legs + 1))
        ok = True
        for _ in range(legs - 1):
            choices = [d]
            choices += [np.array([d[1], -d[0]]), np.array([-d[1], d[0]])]
            rng.shuffle(choices)
            moved = False
            for nd in choices:
                dist = spacing_along(cur, nd)
                if math.isfinite(dist):
                    cur, d, moved = cur + nd * dist, nd, True
                    goals.append(cur)
                    break
            if not moved:
                ok = False
                break
        if not ok:
            continue
        exits = [d, np.array([d[1], -d[0]]), np.array([-d[1], d[0]])]
        rng.shuffle(exits)
        end = None
        for nd in exits:
            dist = spacing_along(cur, nd)
            cand = cur + nd * (min(dist / 2, 40.0) if math.isfinite(dist) else 40.0)
            if town.drivable(cand[None])[0] and town.drivable((cur + nd * 20.0)[None])[0]:
                end = cand
                break
        if end is None:
            continue
        goals.append(end)
        clean = [goals[0]]
        for g in goals[1:]:
            if not np.allclose(g, clean[-1]):
                clean.append(g)
        try:
            route = build_route(clean, town.lane_width, name=f"{prefix}{len(out.scenarios)}")
        except ValueError:
            continue
        clock = float(rng.integers(0, 40))
        out.scenarios.append(ScenarioConfig(route.name, town, route, time_limit=time_limit,
                                            start_time=clock, index=len(out.scenarios)))
    return out
