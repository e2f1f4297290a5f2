import math
from dataclasses import replace

import pytest

from penaltydrive.core import Pose2D, VehicleState
from penaltydrive.townsim import Color, GridTown, Junction, build_route, initial_state, make_town

RED_GREEN = ((Color.RED, 10.0), (Color.GREEN, 10.0))


def junction_town(control="light", schedule=RED_GREEN, obstacles=()):
    return make_town(GridTown(roads=((0, -80, 0, 80), (-80, 0, 80, 0)),
                              junctions=(Junction((0, 0), control),), light_schedule=schedule,
                              obstacles=obstacles))


def north_state(town, y=-40.0, speed=0.0, npc_scripts=()):
    route = build_route([(0, -60), (0, 60)], 4.0)
    s = initial_state(town, route, npc_scripts=npc_scripts)
    return replace(s, ego=VehicleState(Pose2D(2.0, y, math.pi / 2), speed=speed),
                   progress_s=route.project((2.0, y))[0])


@pytest.fixture
def town():
    return junction_town()


def random_frames(cfg, n, seed=0):
    """Synthetic frames shaped for ``cfg`` (a ModelConfig)."""
    import numpy as np

    from penaltydrive.dataset import Frame

    rng = np.random.default_rng(seed)
    c, h, w = cfg.cam_shape
    _, hl, wl = cfg.lidar_shape
    hot = lambda shape: np.eye(4)[rng.integers(0, 4, shape)].transpose(2, 0, 1)  # noqa: E731
    out = []
    for i in range(n):
        red = float(rng.random() < 0.5)
        wps = np.cumsum(rng.uniform(0.2, 2.0, (4, 2)) * [0.1, 1.0], axis=0)
        out.append(Frame(camera=rng.uniform(size=(c, h, w)), lidar=rng.integers(0, 2, (2, hl, wl)).astype(float),
                         front_seg=hot((h, w)), td_seg=hot((hl, wl)), meas=rng.normal(size=4),
                         light_state=np.eye(4)[rng.integers(4)], stop_sign_flag=float(rng.random() < 0.5),
                         is_red=red, y_stop=float(rng.uniform(0.5, 5.0)) if red else float("inf"),
                         delta_heading=float(rng.uniform(-1, 1)), goal=rng.normal(size=2) * 10, waypoints=wps))
    return out


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
