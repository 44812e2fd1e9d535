import numpy as np
import pytest

from gridpose.geometry import CameraIntrinsics, Pose, model_from_points
from gridpose.simulator import random_rotation


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=800.0, fy=800.0, cx=304.0, cy=304.0, width=608, height=608)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_random_pose(rng, depth=(0.8, 2.5), lateral=0.3):
    return Pose(
        random_rotation(rng),
        np.array([rng.uniform(-lateral, lateral), rng.uniform(-lateral, lateral), rng.uniform(*depth)]),
    )


def make_blob_model(model_id=1, n_points=60, scale=0.1, seed=0, symmetric=False):
    """Random point-cloud model; keypoints/diameter derived by the factory."""
    r = np.random.default_rng(seed)
    return model_from_points(model_id, f"blob{model_id}", r.uniform(-scale, scale, (n_points, 3)), symmetric)


def make_symmetric_model(model_id=1, n_base=40, seed=0):
    """Point set closed under 90-degree rotation about z (4-fold symmetric)."""
    r = np.random.default_rng(seed)
    base = r.uniform([0.02, 0.02, -0.1], [0.1, 0.1, 0.1], (n_base, 3))
    rot90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    pts = [base]
    for _ in range(3):
        pts.append(pts[-1] @ rot90.T)
    return model_from_points(model_id, "fourfold", np.vstack(pts), symmetric=True)


@pytest.fixture
def blob_model():
    return make_blob_model()


@pytest.fixture
def symmetric_model():
    return make_symmetric_model()
