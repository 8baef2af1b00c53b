import numpy as np
import pytest

from artifit import synth
from artifit.geometry import ArticulatedModel, HingeSpec, PoseParams
from artifit.render import CameraIntrinsics


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_camera():
    return CameraIntrinsics(80.0, 80.0, 32.0, 32.0, 64, 64)


@pytest.fixture(scope="session")
def small_scene(small_camera):
    """A 3-frame 64x64 scene, the size used for gradient checks."""
    spec = synth.SceneSpec(seed=11, category="cabinet", edge_id=0, extent_mode="full", n_frames=3,
                           camera=small_camera, shape="open", max_angle_deg=(70.0, 70.0))
    return synth.gen_scene(spec, video_id="small")


def make_model(edge_id=0, offset=0.0, extent=1.0, angles=(0.0,), rotation=(0, 0, 0), translation=(0, 0, 3.0),
               base=(1.0, 1.2, 0.6), thickness=0.04):
    width = base[1] if edge_id in (2, 3) else base[0]
    return ArticulatedModel.build(base, width, thickness, HingeSpec(edge_id, offset, extent),
                                  PoseParams(rotation, translation), angles)


CRITERIA: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Print and remember one PASS/FAIL line for an acceptance criterion."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
