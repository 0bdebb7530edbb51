from typing import Dict, List, Optional, Tuple

import numpy as np
import pytest

from dfostrace.simulator import Lane, SceneSpec, VehicleClass, VehicleSpec, render_scene
from dfostrace.scenes import highway_geometry

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_RESULTS: Dict[int, Tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def single_vehicle_scene(
    lane: Lane = Lane.NEAR,
    speed: float = 100.0,
    length_km: float = 1.0,
    duration: float = 60.0,
    noise_sigma: float = 0.0,
    lane_timeline: Optional[List[Tuple[float, Lane]]] = None,
    vehicle_class: VehicleClass = VehicleClass.SMALL,
    dropouts=(),
    seed: int = 0,
    checkpoints=None,
) -> SceneSpec:
    g = highway_geometry(8.3, length_km)
    timeline = lane_timeline or [(2.0, lane)]
    v = VehicleSpec("a", 2.0, 8.3, [(0.0, speed)], timeline, vehicle_class, dropouts=list(dropouts))
    return SceneSpec(g, duration, [v], noise_sigma=noise_sigma, rng_seed=seed,
                     checkpoints=checkpoints if checkpoints is not None else [8.35, 8.3 + length_km - 0.05])


@pytest.fixture(scope="session")
def near_render():
    return render_scene(single_vehicle_scene(Lane.NEAR))


@pytest.fixture(scope="session")
def far_render():
    return render_scene(single_vehicle_scene(Lane.FAR))


def true_channel(gt, vehicle_id, geometry):
    return (gt.positions[vehicle_id] - geometry.origin_kp) * 1000.0 / geometry.spatial_resolution
