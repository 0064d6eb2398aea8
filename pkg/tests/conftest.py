import numpy as np
import pytest

from mapbench.trajeval import Pose, Trajectory


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (QR of a Gaussian matrix, det fixed to +1)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def make_trajectory(
    rng: np.random.Generator,
    n: int = 50,
    dt: float = 0.1,
    t0: float = 0.0,
    wobble: float = 1.0,
) -> Trajectory:
    """Smooth synthetic trajectory: a noisy 3D curve with random orientations."""
    ts = t0 + dt * np.arange(n)
    base = np.cumsum(rng.normal(scale=wobble * 0.1, size=(n, 3)), axis=0)
    poses = tuple(
        Pose(t=float(ts[i]), position=base[i], orientation=random_quaternion(rng))
        for i in range(n)
    )
    return Trajectory(poses)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
