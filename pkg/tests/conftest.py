import numpy as np
import pytest

from lunaloc.geometry import Pose, Rotation

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def random_pose(rng: np.random.Generator, max_angle: float = np.pi - 0.1, scale: float = 5.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose(Rotation.from_rotvec(axis * rng.uniform(0, max_angle)), rng.normal(scale=scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
