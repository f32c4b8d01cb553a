import numpy as np
import pytest
from scipy.linalg import expm, logm

from magloc.liegroups import Pose
from magloc.scenario import SceneSpec, sample_batch, sample_pose

ACCEPTANCE_LINES = []


def hat4(xi):
    xi = np.asarray(xi, dtype=float)
    w = xi[3:]
    M = np.zeros((4, 4))
    M[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
    M[:3, 3] = xi[:3]
    return M


def vee4(M):
    return np.array([M[0, 3], M[1, 3], M[2, 3], M[2, 1], M[0, 2], M[1, 0]])


def expm_pose(xi):
    """Reference SE(3) exponential through the generic matrix exponential."""
    return Pose.from_matrix(expm(hat4(xi)))


def logm_twist(T):
    """Reference SE(3) logarithm through the generic matrix logarithm."""
    return vee4(np.real(logm(T)))


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def random_scene(rng, m=2, n=4):
    scene = SceneSpec(m=m, n=n)
    T = sample_pose(scene.workspace, rng)
    batch = sample_batch(scene.planes, scene.moment, n, rng, min_configs=1)
    return T, batch


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
