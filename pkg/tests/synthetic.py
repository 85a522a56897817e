"""Independent synthetic-scene oracles used by the test suite.

Everything here is built from first principles (Rodrigues rotations, forward
projection, DLT triangulation) so that the library code under test is checked
against a second, unrelated route to the same quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from matchbench.geometry import Calibration, Pose


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_rotation(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues' formula: R = I + sin(a) K + (1 - cos(a)) K^2."""
    axis = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.eye(3)
    K = skew(axis / n)
    return np.eye(3) + math.sin(angle_rad) * K + (1.0 - math.cos(angle_rad)) * (K @ K)


def random_rotation(rng: np.random.Generator, max_angle_rad: float = math.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    angle = rng.uniform(0.0, max_angle_rad)
    return axis_angle_rotation(axis, angle)


def random_unit_quaternion(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return q


def quat_geodesic_deg(q1, q2) -> float:
    """Angle between two rotations from quaternion chord length (sign-aligned).

    ||q1 - q2|| = 2 sin(theta/4) under the double cover, hence the factor 4.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    chord = min(np.linalg.norm(q1 - q2), np.linalg.norm(q1 + q2))
    return math.degrees(4.0 * math.asin(min(chord / 2.0, 1.0)))


def essential_from_pose(R, t) -> np.ndarray:
    """E = [t]x R for the convention x2 = R x1 + t."""
    return skew(t) @ R


def fundamental_from_pose(R, t, K1: Calibration, K2: Calibration) -> np.ndarray:
    E = essential_from_pose(R, t)
    return np.linalg.inv(K2.matrix()).T @ E @ np.linalg.inv(K1.matrix())


def project(points: np.ndarray, K: Calibration) -> np.ndarray:
    """Pinhole projection of (N, 3) camera-frame points to (N, 2) pixels."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    uv = points[:, :2] / points[:, 2:3]
    Km = K.matrix()
    return uv @ Km[:2, :2].T + Km[:2, 2]


def dlt_triangulate(correspondence, R, t, K1: Calibration, K2: Calibration) -> np.ndarray:
    """Linear (DLT) triangulation, independent of the library's midpoint method.

    Returns the homogeneous point dehomogenized into the camera-1 frame; a
    point at infinity comes back with a huge (or inf) magnitude rather than
    raising.
    """
    x1, y1, x2, y2 = np.asarray(correspondence, dtype=float).reshape(4)
    P1 = K1.matrix() @ np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = K2.matrix() @ np.hstack([np.asarray(R, dtype=float), np.asarray(t, dtype=float).reshape(3, 1)])
    A = np.array(
        [
            x1 * P1[2] - P1[0],
            y1 * P1[2] - P1[1],
            x2 * P2[2] - P2[0],
            y2 * P2[2] - P2[1],
        ]
    )
    _, _, Vt = np.linalg.svd(A)
    X = Vt[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return X[:3] / X[3]


@dataclass
class TwoViewScene:
    """A synthetic calibrated pair: known pose, points, and correspondences."""

    correspondences: np.ndarray  # (N, 4) pixels, possibly noisy/corrupted
    inlier_mask: np.ndarray  # (N,) bool ground-truth labels
    pose: Pose  # camera2-from-camera1, metric translation
    K1: Calibration
    K2: Calibration
    points: np.ndarray  # (N, 3) camera-1 frame (true points for inliers)


def make_scene(
    rng: np.random.Generator,
    n_points: int = 100,
    depth_range: tuple[float, float] = (2.0, 10.0),
    baseline_range: tuple[float, float] = (0.1, 1.0),
    max_rotation_deg: float = 10.0,
    noise_px: float = 0.0,
    outlier_fraction: float = 0.0,
    image_size: tuple[int, int] = (640, 480),
    focal: float = 600.0,
    off_geometry_min_sampson: float | None = None,
) -> TwoViewScene:
    """Generate a random two-view scene by forward projection.

    Points are sampled in the first camera's frustum and kept only when they
    land inside both images with positive depth.  ``outlier_fraction`` of the
    correspondences are replaced by uniform random pixels in image 2; when
    ``off_geometry_min_sampson`` is set, outliers are rejection-sampled until
    their Sampson distance to the true geometry exceeds it.
    """
    w, h = image_size
    K1 = Calibration(focal, focal, w / 2.0 - 0.5, h / 2.0 - 0.5)
    K2 = Calibration(focal, focal, w / 2.0 - 0.5, h / 2.0 - 0.5)
    R = random_rotation(rng, math.radians(max_rotation_deg))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(*baseline_range)

    pts = np.empty((0, 3))
    while pts.shape[0] < n_points:
        z = rng.uniform(depth_range[0], depth_range[1], size=4 * n_points)
        x = z * (rng.uniform(0.0, w - 1.0, size=z.size) - K1.cx) / K1.fx
        y = z * (rng.uniform(0.0, h - 1.0, size=z.size) - K1.cy) / K1.fy
        cand = np.column_stack([x, y, z])
        in_cam2 = cand @ R.T + t
        px2 = project(in_cam2, K2)
        ok = (
            (in_cam2[:, 2] > 0.1)
            & (px2[:, 0] >= 0.0)
            & (px2[:, 0] <= w - 1.0)
            & (px2[:, 1] >= 0.0)
            & (px2[:, 1] <= h - 1.0)
        )
        pts = np.vstack([pts, cand[ok]])
    pts = pts[:n_points]

    px1 = project(pts, K1)
    px2 = project(pts @ R.T + t, K2)
    corr = np.column_stack([px1, px2])
    if noise_px > 0.0:
        corr = corr + rng.normal(0.0, noise_px, size=corr.shape)

    inlier_mask = np.ones(n_points, dtype=bool)
    n_out = int(round(outlier_fraction * n_points))
    if n_out > 0:
        F_true = fundamental_from_pose(R, t, K1, K2)
        idx = rng.choice(n_points, size=n_out, replace=False)
        for i in idx:
            while True:
                fake = np.array([rng.uniform(0.0, w - 1.0), rng.uniform(0.0, h - 1.0)])
                corr[i, 2:] = fake
                if off_geometry_min_sampson is None:
                    break
                if _sampson_one(F_true, corr[i]) > off_geometry_min_sampson:
                    break
            inlier_mask[i] = False

    return TwoViewScene(corr, inlier_mask, Pose(R, t), K1, K2, pts)


def _sampson_one(F: np.ndarray, row: np.ndarray) -> float:
    x1 = np.array([row[0], row[1], 1.0])
    x2 = np.array([row[2], row[3], 1.0])
    Fx1 = F @ x1
    Ftx2 = F.T @ x2
    denom = Fx1[0] ** 2 + Fx1[1] ** 2 + Ftx2[0] ** 2 + Ftx2[1] ** 2
    if denom == 0.0:
        return math.inf
    return float((x2 @ Fx1) ** 2 / denom)
