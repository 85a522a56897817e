"""Robust two-view geometry fitting.

Hartley-normalized 8-point fundamental estimation inside a seeded RANSAC
loop, then fundamental → essential → cheirality-disambiguated pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, EstimationFailedError, InsufficientDataError, InvalidInputError
from .geometry import Calibration, Pose, decompose_essential, fundamental_to_essential, sampson_distance

MIN_SAMPLE = 8
# second-smallest singular value of the design matrix below this (relative to
# the largest) means the configuration cannot pin down a fundamental matrix
_DEGENERACY_RTOL = 1e-10


@dataclass
class RansacConfig:
    """Settings for the robust fundamental-matrix loop.

    ``inlier_threshold`` is in pixels of the original image; a correspondence
    is an inlier when its Sampson distance (px^2) is below its square.
    ``max_correspondences`` optionally caps the consensus stage by uniform
    subsampling (off by default); the returned inlier mask always covers the
    full input.
    """

    inlier_threshold: float = 1.0
    confidence: float = 0.999
    max_iterations: int = 10000
    min_iterations: int = 100
    seed: int = 0
    max_correspondences: int | None = None

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise InvalidInputError(f"confidence must be in (0, 1), got {self.confidence}")
        if self.inlier_threshold <= 0.0:
            raise InvalidInputError("inlier_threshold must be positive")
        if self.min_iterations > self.max_iterations:
            raise InvalidInputError("min_iterations must not exceed max_iterations")


@dataclass
class RansacResult:
    fundamental: np.ndarray
    inlier_mask: np.ndarray
    num_iterations: int


@dataclass
class PoseEstimate:
    """Scale-free relative pose with its supporting inliers."""

    pose: Pose
    inlier_mask: np.ndarray
    num_iterations: int
    mean_inlier_sampson: float


def normalize_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid to origin, mean distance sqrt(2).

    Returns the 3x3 similarity transform and the transformed points.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if points.shape[0] < 2:
        raise InvalidInputError("need at least 2 points to normalize")
    centroid = points.mean(axis=0)
    shifted = points - centroid
    mean_dist = np.mean(np.linalg.norm(shifted, axis=1))
    if mean_dist < 1e-12:
        raise DegenerateConfigurationError("all points coincident")
    s = math.sqrt(2.0) / mean_dist
    T = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return T, shifted * s


def eight_point_fundamental(correspondences: np.ndarray) -> np.ndarray:
    """Normalized 8-point algorithm with rank-2 enforcement."""
    corr = np.asarray(correspondences, dtype=float).reshape(-1, 4)
    n = corr.shape[0]
    if n < MIN_SAMPLE:
        raise InsufficientDataError(f"need >= {MIN_SAMPLE} correspondences, got {n}")
    T1, p1 = normalize_points(corr[:, :2])
    T2, p2 = normalize_points(corr[:, 2:])
    x1, y1 = p1[:, 0], p1[:, 1]
    x2, y2 = p2[:, 0], p2[:, 1]
    A = np.column_stack([x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, np.ones(n)])
    _, S, Vt = np.linalg.svd(A)
    if S[min(n, 9) - 2] < _DEGENERACY_RTOL * S[0]:
        raise DegenerateConfigurationError("degenerate configuration: design matrix rank-deficient")
    F = Vt[-1].reshape(3, 3)
    # rank-2 enforcement
    U, s, V = np.linalg.svd(F)
    F = U @ np.diag([s[0], s[1], 0.0]) @ V
    F = T2.T @ F @ T1
    return F / np.linalg.norm(F)


def ransac_fundamental(correspondences: np.ndarray, config: RansacConfig) -> RansacResult:
    """Seeded RANSAC around the 8-point solver, scored by Sampson distance.

    Adaptive termination at log(1-confidence)/log(1-w^8) iterations for the
    best inlier ratio w seen so far, never fewer than ``min_iterations``.
    The final model is refit once on all inliers.  Deterministic for a fixed
    (correspondences, config).
    """
    corr = np.asarray(correspondences, dtype=float).reshape(-1, 4)
    n = corr.shape[0]
    if n < MIN_SAMPLE:
        raise InsufficientDataError(f"need >= {MIN_SAMPLE} correspondences, got {n}")
    rng = np.random.Generator(np.random.Philox(config.seed))

    pool = np.arange(n)
    if config.max_correspondences is not None and n > config.max_correspondences:
        pool = rng.choice(n, size=config.max_correspondences, replace=False)
        pool.sort()
    scored = corr[pool]

    sq_threshold = config.inlier_threshold**2
    best_F = None
    best_mask = None
    best_count = 0
    best_mean = math.inf
    iteration = 0
    required = config.max_iterations
    while iteration < max(min(required, config.max_iterations), config.min_iterations):
        iteration += 1
        sample = rng.choice(pool.size, size=MIN_SAMPLE, replace=False)
        try:
            F = eight_point_fundamental(scored[sample])
        except DegenerateConfigurationError:
            continue
        distances = sampson_distance(F, scored)
        mask = distances < sq_threshold
        count = int(np.count_nonzero(mask))
        if count < MIN_SAMPLE:
            continue
        mean = float(np.mean(distances[mask]))
        # best inlier set: larger count wins, equal counts fall back to the
        # tighter fit (discriminates models on near-noiseless data)
        if count > best_count or (count == best_count and mean < best_mean):
            best_F, best_mask, best_count, best_mean = F, mask, count, mean
            w = count / pool.size
            if w >= 1.0:
                required = 0
            else:
                # log1p keeps the denominator nonzero when w^8 underflows
                required = math.ceil(math.log(1.0 - config.confidence) / math.log1p(-(w**MIN_SAMPLE)))

    if best_count < MIN_SAMPLE:
        raise EstimationFailedError(f"no consensus: best inlier count {best_count} < {MIN_SAMPLE}")

    # one refit on all consensus inliers; keep it only when it does not lose
    # support, else fall back to the best sample model
    F = best_F
    try:
        refit = eight_point_fundamental(scored[best_mask])
        if np.count_nonzero(sampson_distance(refit, scored) < sq_threshold) >= best_count:
            F = refit
    except DegenerateConfigurationError:
        pass
    full_mask = sampson_distance(F, corr) < sq_threshold
    if np.count_nonzero(full_mask) < MIN_SAMPLE:
        F = best_F
        full_mask = sampson_distance(F, corr) < sq_threshold
    return RansacResult(F, full_mask, iteration)


def estimate_relative_pose(
    correspondences: np.ndarray, K1: Calibration, K2: Calibration, config: RansacConfig
) -> PoseEstimate:
    """Full pipeline: RANSAC fundamental → essential → cheirality pose."""
    corr = np.asarray(correspondences, dtype=float).reshape(-1, 4)
    result = ransac_fundamental(corr, config)
    E = fundamental_to_essential(result.fundamental, K1, K2)
    inliers = corr[result.inlier_mask]
    pose = decompose_essential(E, inliers, K1, K2)
    mean_sampson = float(np.mean(sampson_distance(result.fundamental, inliers)))
    return PoseEstimate(pose, result.inlier_mask, result.num_iterations, mean_sampson)
