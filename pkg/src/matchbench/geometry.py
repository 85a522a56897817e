"""Two-view epipolar geometry: pose types, error metrics, essential-matrix handling.

Conventions used throughout the harness:

* Rotations are 3x3 orthonormal matrices with determinant +1.
* Quaternions are Hamilton convention, ordered ``(qw, qx, qy, qz)``.
* A stored pose is world-from-camera: ``x_world = R @ x_cam + t`` with ``t``
  the camera center in world coordinates.
* A relative pose maps camera-i coordinates into camera-j coordinates:
  ``x_j = R @ x_i + t``.  For ground truth ``t`` is metric; for estimates it
  is a unit direction (``scale_free=True``).
* Correspondences are ``(N, 4)`` float arrays with rows ``x1 y1 x2 y2`` in
  pixels of the first and second image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousDecompositionError, DegenerateTranslationError, InvalidInputError

# Cheirality: depths below this do not count as "in front".
_MIN_DEPTH = 1e-9
# Rays with |cos angle| above sqrt(1 - this) are treated as parallel.
_PARALLEL_EPS = 1e-12


@dataclass
class Calibration:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(eq=False)
class Pose:
    """Rigid transform: rotation plus translation (see module conventions).

    Treat instances as immutable; they are shared freely across workers.
    """

    rotation: np.ndarray
    translation: np.ndarray
    scale_free: bool = False

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        require_rotation(self.rotation)
        if not np.all(np.isfinite(self.translation)):
            raise InvalidInputError("translation must be finite")
        if self.scale_free and abs(np.linalg.norm(self.translation) - 1.0) > 1e-9:
            raise InvalidInputError("scale-free translation must be unit norm")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))


def require_rotation(R: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate the rotation-matrix invariants and return the array."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise InvalidInputError(f"rotation must be 3x3, got {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) >= tol:
        raise InvalidInputError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) >= tol:
        raise InvalidInputError("rotation must have determinant +1")
    return R


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a Hamilton quaternion ``(qw, qx, qy, qz)``.

    Renormalizes internally; quaternions further than 1e-6 from unit norm are
    still accepted, only an exactly-degenerate (near-zero) quaternion is
    rejected.
    """
    q = np.asarray(q, dtype=float).reshape(4)
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        raise InvalidInputError("zero-norm quaternion has no rotation")
    w, x, y, z = q / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Quaternion ``(qw, qx, qy, qz)`` of a rotation matrix, qw >= 0.

    Shepperd's method: branch on the largest of trace/diagonal for stability.
    """
    R = require_rotation(R)
    t = np.trace(R)
    if t > R[0, 0] and t > R[1, 1] and t > R[2, 2]:
        s = math.sqrt(1.0 + t) * 2.0
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def relative_pose(pose_i: Pose, pose_j: Pose) -> Pose:
    """Relative pose camera_j-from-camera_i of two world-from-camera poses.

    ``R_rel = R_j^T R_i`` and ``t_rel = R_j^T (c_i - c_j)`` so that a world
    point seen at ``x_i`` in camera i appears at ``x_j = R_rel x_i + t_rel``.
    """
    R_rel = pose_j.rotation.T @ pose_i.rotation
    t_rel = pose_j.rotation.T @ (pose_i.translation - pose_j.translation)
    return Pose(R_rel, t_rel)


def rotation_error_deg(R_est: np.ndarray, R_gt: np.ndarray) -> float:
    """Geodesic angle in degrees between two rotations, in [0, 180].

    Equals ``arccos(clamp((trace(R_gt^T R_est) - 1) / 2, -1, 1))``; evaluated
    through atan2 of the sine/cosine parts because plain arccos loses ~1e-6
    degrees of precision near 0 and 180.
    """
    R_est = require_rotation(R_est)
    R_gt = require_rotation(R_gt)
    D = R_gt.T @ R_est
    # clamp: floating-point guard
    cos_angle = np.clip((np.trace(D) - 1.0) / 2.0, -1.0, 1.0)
    sin_angle = 0.5 * math.sqrt(
        (D[2, 1] - D[1, 2]) ** 2 + (D[0, 2] - D[2, 0]) ** 2 + (D[1, 0] - D[0, 1]) ** 2
    )
    return math.degrees(math.atan2(sin_angle, cos_angle))


def translation_error_deg(t_est, t_gt) -> float:
    """Angle in degrees between two translation directions.

    Scale-free: invariant to positive scaling of either argument.  Raises
    :class:`DegenerateTranslationError` when either vector is (near) zero;
    the caller decides the policy for that case.
    """
    t_est = np.asarray(t_est, dtype=float).reshape(3)
    t_gt = np.asarray(t_gt, dtype=float).reshape(3)
    n_est = np.linalg.norm(t_est)
    n_gt = np.linalg.norm(t_gt)
    if n_est < 1e-9 or n_gt < 1e-9:
        raise DegenerateTranslationError("translation direction undefined for near-zero vector")
    cos_angle = np.clip(np.dot(t_est / n_est, t_gt / n_gt), -1.0, 1.0)
    return math.degrees(math.acos(cos_angle))


def pose_error(e_r: float, e_t: float) -> float:
    """Combined pose error: the larger of the rotational and translational errors."""
    return max(e_r, e_t)


def fundamental_to_essential(F: np.ndarray, K1: Calibration, K2: Calibration) -> np.ndarray:
    """Essential matrix ``E = K2^T F K1`` projected to singular values (s, s, 0).

    The projection averages the two largest singular values; noisy products
    otherwise violate the equal-singular-value constraint required for
    decomposition.
    """
    F = np.asarray(F, dtype=float)
    E = K2.matrix().T @ F @ K1.matrix()
    U, S, Vt = np.linalg.svd(E)
    s = 0.5 * (S[0] + S[1])
    return U @ np.diag([s, s, 0.0]) @ Vt


def essential_candidates(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """The four (R, t) decompositions of an essential matrix, ||t|| = 1."""
    U, _, Vt = np.linalg.svd(np.asarray(E, dtype=float))
    # keep proper rotations
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def decompose_essential(E: np.ndarray, correspondences, K1: Calibration, K2: Calibration) -> Pose:
    """Recover the scale-free relative pose from an essential matrix.

    Picks, among the four candidate decompositions, the one under which the
    most correspondences triangulate with strictly positive depth in both
    cameras (cheirality).  A tie raises
    :class:`AmbiguousDecompositionError` carrying the tied candidates.
    """
    corr = np.asarray(correspondences, dtype=float).reshape(-1, 4)
    if corr.shape[0] < 1:
        raise InvalidInputError("need at least one correspondence for cheirality")
    candidates = essential_candidates(E)
    counts = [_count_in_front(corr, R, t, K1, K2) for R, t in candidates]
    best = max(counts)
    winners = [i for i, c in enumerate(counts) if c == best]
    if len(winners) > 1:
        raise AmbiguousDecompositionError(
            f"cheirality tie: {len(winners)} candidates each place {best} point(s) in front",
            candidates=[candidates[i] for i in winners],
        )
    R, t = candidates[winners[0]]
    return Pose(R, t / np.linalg.norm(t), scale_free=True)


def _count_in_front(corr: np.ndarray, R: np.ndarray, t: np.ndarray, K1: Calibration, K2: Calibration) -> int:
    """Vectorized twin of :func:`triangulate` that only counts positive depths."""
    n = corr.shape[0]
    ones = np.ones(n)
    d1 = np.linalg.solve(K1.matrix(), np.column_stack([corr[:, 0], corr[:, 1], ones]).T).T
    d1 /= np.linalg.norm(d1, axis=1, keepdims=True)
    b2 = np.linalg.solve(K2.matrix(), np.column_stack([corr[:, 2], corr[:, 3], ones]).T).T
    d2 = b2 @ R  # = (R.T @ b2.T).T
    d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
    o2 = -R.T @ t
    c = np.sum(d1 * d2, axis=1)
    denom = 1.0 - c * c
    usable = denom >= _PARALLEL_EPS  # at infinity: counts for no candidate
    denom = np.where(usable, denom, 1.0)
    d1r = d1 @ o2
    d2r = d2 @ o2
    a = (d1r - c * d2r) / denom
    b = (c * d1r - d2r) / denom
    points = 0.5 * (a[:, None] * d1 + o2[None, :] + b[:, None] * d2)
    z1 = points[:, 2]
    z2 = points @ R[2] + t[2]
    return int(np.count_nonzero(usable & (z1 > _MIN_DEPTH) & (z2 > _MIN_DEPTH)))


def triangulate(correspondence, pose: Pose, K1: Calibration, K2: Calibration) -> np.ndarray | None:
    """Midpoint triangulation of one correspondence, in the camera-1 frame.

    ``pose`` maps camera-1 coordinates to camera-2 coordinates.  Returns the
    3D point, or ``None`` when the two rays are parallel (point at infinity).
    """
    x1, y1, x2, y2 = np.asarray(correspondence, dtype=float).reshape(4)
    d1 = np.linalg.solve(K1.matrix(), np.array([x1, y1, 1.0]))
    d1 /= np.linalg.norm(d1)
    R, t = pose.rotation, pose.translation
    # camera-2 center and ray direction expressed in the camera-1 frame
    o2 = -R.T @ t
    d2 = R.T @ np.linalg.solve(K2.matrix(), np.array([x2, y2, 1.0]))
    d2 /= np.linalg.norm(d2)
    c = float(np.dot(d1, d2))
    denom = 1.0 - c * c
    if denom < _PARALLEL_EPS:
        return None
    # closest points on the two rays: o1 + a*d1 and o2 + b*d2
    r = o2
    a = (np.dot(d1, r) - c * np.dot(d2, r)) / denom
    b = (c * np.dot(d1, r) - np.dot(d2, r)) / denom
    p1 = a * d1
    p2 = o2 + b * d2
    return 0.5 * (p1 + p2)


def sampson_distance(F: np.ndarray, correspondences) -> np.ndarray | float:
    """First-order epipolar error in squared pixels.

    ``(x2^T F x1)^2 / ((Fx1)_1^2 + (Fx1)_2^2 + (F^T x2)_1^2 + (F^T x2)_2^2)``
    with homogeneous pixel coordinates.  A zero denominator yields +inf
    (treated as an outlier).  Accepts a single ``(4,)`` correspondence or an
    ``(N, 4)`` array; returns a scalar or an ``(N,)`` array accordingly.
    """
    F = np.asarray(F, dtype=float)
    corr = np.asarray(correspondences, dtype=float)
    single = corr.ndim == 1
    corr = corr.reshape(-1, 4)
    n = corr.shape[0]
    x1 = np.column_stack([corr[:, 0], corr[:, 1], np.ones(n)])
    x2 = np.column_stack([corr[:, 2], corr[:, 3], np.ones(n)])
    Fx1 = x1 @ F.T
    Ftx2 = x2 @ F
    residual = np.sum(x2 * Fx1, axis=1)
    denom = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(denom > 0.0, residual**2 / np.where(denom > 0.0, denom, 1.0), np.inf)
    # exact epipolar incidence with a degenerate denominator is still 0/0 -> inf
    return float(d[0]) if single else d
