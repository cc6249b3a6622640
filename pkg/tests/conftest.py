import json
import math
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).resolve().parent / "fixtures"
sys.path.insert(0, str(ROOT))

from geometry import Intrinsics, Pose  # noqa: E402
from memory_store import SpatialMemory  # noqa: E402
from world import generate_terrain, height_at, make_revisit_trajectory, render_depth, \
    unroll_trajectory  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the long timing benchmarks")
    parser.addoption("--regen-golden", action="store_true", default=False,
                     help="rewrite tests/fixtures/*.json from the current output")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long timing benchmark, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def check_golden(path, value, regen=False):
    """Compare a JSON-serializable value with the fixture at path, or rewrite it when regen"""
    if regen:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(value, indent=2, sort_keys=True) + "\n")
        return
    if not path.exists():
        pytest.fail("missing golden fixture {0}; rerun with --regen-golden".format(path.name))
    assert json.loads(path.read_text()) == json.loads(json.dumps(value))


@pytest.fixture
def golden(request):
    """check_golden against tests/fixtures/<name>.json"""

    def check(name, value):
        check_golden(FIXTURES / (name + ".json"), value, request.config.getoption("--regen-golden"))

    return check




@pytest.fixture(scope="session")
def small_intr():
    """Working-resolution camera of the engine tests"""
    return Intrinsics.from_fov(70.0, 96, 56)


@pytest.fixture(scope="session")
def tiny_intr():
    return Intrinsics.from_fov(70.0, 48, 28)


@pytest.fixture(scope="session")
def flat_terrain():
    return generate_terrain(0, 128.0, 1.0, 0.0)


@pytest.fixture(scope="session")
def terrain():
    return generate_terrain(42, 128.0, 1.0, 0.5)


def ground_pose(hf, x, z, pitch=0.35, yaw=0.0, eye_height=1.62):
    return Pose(x, float(height_at(hf, x, z)) + eye_height, z, pitch, yaw)


@pytest.fixture(scope="session")
def revisit_stream(terrain, small_intr):
    """200 rendered frames of a two-loop revisit walk: list of (pose, depth, confidence)"""
    script = make_revisit_trajectory(7, 200, 2)
    poses = unroll_trajectory(script, terrain)
    return [(pose,) + render_depth(terrain, pose, small_intr) for pose in poses]


def angle_difference(a, b):
    return abs(math.remainder(a - b, 2.0 * math.pi))


@pytest.fixture(scope="session")
def revisit_memory(revisit_stream, small_intr):
    """SpatialMemory fed the whole revisit stream and flushed, with its per-frame decisions"""
    memory = SpatialMemory(small_intr)
    decisions = [memory.observe(fid, pose, depth, conf)
                 for fid, (pose, depth, conf) in enumerate(revisit_stream)]
    memory.flush()
    return memory, decisions
