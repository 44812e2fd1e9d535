"""Pinhole camera model, rigid transforms, object models, and pose-accuracy metrics.

Conventions used throughout the package:

* World/model points are row vectors; a pose maps model frame to camera
  frame as ``x_cam = R @ x_model + t``.
* The camera looks down +z; only points with depth ``z > DEPTH_EPS`` project.
* Pixel coordinates are ``(u, v)`` with u horizontal, v vertical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import BehindCameraError, ConfigError, DataError, EmptyModelError

DEPTH_EPS = 1e-9
_ROTATION_TOL = 1e-9
_DIAMETER_REL_TOL = 1e-6


def _checked_array(value, shape, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise DataError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ConfigError("image size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Rigid transform from model frame to camera frame.

    The rotation must be orthonormal with determinant +1 to within 1e-9;
    construction fails otherwise. Instances are immutable.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _checked_array(self.rotation, (3, 3), "rotation")
        t = _checked_array(self.translation, (3,), "translation")
        if np.linalg.norm(r.T @ r - np.eye(3)) >= _ROTATION_TOL:
            raise DataError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) >= _ROTATION_TOL:
            raise DataError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        """Map model-frame points of shape (..., 3) into the camera frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """Return self ∘ other, i.e. apply `other` first, then `self`."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def rotation_from_quaternion(q) -> np.ndarray:
    """Convert a quaternion (w, x, y, z), not necessarily unit, to a matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def aabb_corners(points) -> np.ndarray:
    """Corners of the axis-aligned bounding box, in binary (x, y, z) order."""
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return np.array(
        [
            [(lo, hi)[a][0], (lo, hi)[b][1], (lo, hi)[c][2]]
            for a in (0, 1)
            for b in (0, 1)
            for c in (0, 1)
        ]
    )


def max_pairwise_distance(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    best = 0.0
    for i in range(0, len(pts), 256):
        chunk = pts[i : i + 256]
        d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


@dataclass(frozen=True)
class ObjectModel:
    """A rigid object: sampled surface points plus its 8 bounding-box corners.

    The keypoints must be exactly the AABB corners of `surface_points` and the
    stored diameter must match the recomputed max pairwise surface distance to
    within 1e-6 relative; construction re-checks both, so models loaded from
    files are rejected when stale.
    """

    id: int
    name: str
    keypoints: np.ndarray
    surface_points: np.ndarray
    diameter: float
    symmetric: bool = False

    def __post_init__(self):
        if self.id < 1:
            raise DataError(f"model id must be >= 1, got {self.id}")
        pts = np.asarray(self.surface_points, dtype=float)
        if pts.size == 0:
            raise EmptyModelError(f"model {self.name!r} has no surface points")
        pts = _checked_array(pts, (len(pts), 3), "surface_points")
        kp = _checked_array(self.keypoints, (8, 3), "keypoints")
        corners = aabb_corners(pts)
        tol = 1e-9 * max(1.0, self.diameter)
        if not np.allclose(kp, corners, rtol=0.0, atol=tol):
            raise DataError(
                f"model {self.name!r}: keypoints are not the surface AABB corners"
            )
        recomputed = max_pairwise_distance(pts)
        if recomputed <= 0.0:
            raise DataError(f"model {self.name!r}: degenerate (zero diameter)")
        if abs(recomputed - self.diameter) > _DIAMETER_REL_TOL * recomputed:
            raise DataError(
                f"model {self.name!r}: stored diameter {self.diameter} "
                f"disagrees with recomputed {recomputed}"
            )
        object.__setattr__(self, "surface_points", pts)
        object.__setattr__(self, "keypoints", kp)


def model_from_points(model_id: int, name: str, points, symmetric: bool = False) -> ObjectModel:
    """Build a model from raw surface points; keypoints and diameter derived."""
    pts = np.asarray(points, dtype=float)
    return ObjectModel(
        id=model_id,
        name=name,
        keypoints=aabb_corners(pts),
        surface_points=pts,
        diameter=max_pairwise_distance(pts),
        symmetric=symmetric,
    )


def sample_mesh_surface(vertices, faces, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sample points uniformly by area from a triangle mesh."""
    verts = np.asarray(vertices, dtype=float)
    tris = verts[np.asarray(faces, dtype=int)]
    cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    if areas.sum() <= 0:
        raise DataError("mesh has zero total area")
    idx = rng.choice(len(tris), size=count, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    a, b, c = tris[idx, 0], tris[idx, 1], tris[idx, 2]
    return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c


def model_from_mesh(
    model_id: int,
    name: str,
    vertices,
    faces,
    count: int = 500,
    symmetric: bool = False,
    rng: np.random.Generator | None = None,
) -> ObjectModel:
    if rng is None:
        rng = np.random.default_rng(0)
    return model_from_points(
        model_id, name, sample_mesh_surface(vertices, faces, count, rng), symmetric
    )


def project_points(points, pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project model-frame points (n, 3) to pixels (n, 2).

    Raises:
        BehindCameraError: if any camera-frame depth is <= DEPTH_EPS.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    cam = pts @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    if np.any(z <= DEPTH_EPS):
        raise BehindCameraError(
            f"{int(np.count_nonzero(z <= DEPTH_EPS))} point(s) at or behind the camera"
        )
    u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    return np.stack([u, v], axis=1)


def project(point, pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project a single 3D point; returns (u, v)."""
    return project_points(np.asarray(point, dtype=float).reshape(1, 3), pose, intrinsics)[0]


def rotation_geodesic(ra, rb) -> float:
    """Geodesic angle between two rotations, clamped into [0, pi]."""
    ra = np.asarray(ra, dtype=float)
    rb = np.asarray(rb, dtype=float)
    cos = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def _surface_or_raise(model) -> np.ndarray:
    pts = np.asarray(model.surface_points, dtype=float)
    if pts.size == 0:
        raise EmptyModelError("model has no surface points")
    return pts.reshape(-1, 3)


def add_metric(est: Pose, gt: Pose, model) -> float:
    """Mean 3D distance between surface points under the two poses."""
    pts = _surface_or_raise(model)
    return float(np.linalg.norm(est.apply(pts) - gt.apply(pts), axis=1).mean())


def adds_metric(est: Pose, gt: Pose, model) -> float:
    """Nearest-neighbor (symmetric-object) variant of the 3D distance metric."""
    pts = _surface_or_raise(model)
    d, _ = cKDTree(gt.apply(pts)).query(est.apply(pts))
    return float(np.mean(d))


def rep_metric(est: Pose, gt: Pose, model, intrinsics: CameraIntrinsics, symmetric: bool) -> float:
    """Mean 2D reprojection distance in pixels between the two poses.

    For symmetric objects the per-point distance is taken to the nearest
    projected ground-truth point rather than the identically-indexed one.
    """
    pts = _surface_or_raise(model)
    pe = project_points(pts, est, intrinsics)
    pg = project_points(pts, gt, intrinsics)
    if symmetric:
        d, _ = cKDTree(pg).query(pe)
        return float(np.mean(d))
    return float(np.linalg.norm(pe - pg, axis=1).mean())
