"""Built-in reference matcher and the external correspondence-file boundary.

The built-in matcher (Harris corners + BRIEF-style binary descriptors +
brute-force Hamming matching + ratio test) exists so the harness runs
end-to-end without third-party binaries; externally produced correspondences
enter through ``.corr`` files (see ``load_correspondences``).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, PairNotFoundError, ParseError

CORR_MAGIC = "matchbench-corr 1"
DESCRIPTOR_BITS = 256
TIMING_UNKNOWN = -1.0

_HARRIS_K = 0.04
_BORDER = 16  # descriptor patch clearance in pixels
_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int32)


@dataclass
class Keypoint:
    x: float
    y: float
    response: float
    scale: float = 1.0


@dataclass
class TentativeMatch:
    index_a: int
    index_b: int
    distance: float
    second_distance: float


@dataclass
class MatcherConfig:
    max_features: int = 1500
    ratio: float = 0.8


@dataclass
class CorrespondenceSet:
    """One matcher's output for one pair: pixel matches plus stage timings.

    Timings are milliseconds, ``-1`` when unknown.
    """

    pair_id: int
    correspondences: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    detect_ms: float = TIMING_UNKNOWN
    match_ms: float = TIMING_UNKNOWN
    select_ms: float = TIMING_UNKNOWN

    def __post_init__(self):
        self.correspondences = np.asarray(self.correspondences, dtype=float).reshape(-1, 4)

    def __len__(self):
        return self.correspondences.shape[0]


# ------------------------------------------------------------------ detection


def _shift_sum(a, kernel, axis):
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    p = np.pad(a, pad, mode="edge")
    sl = [slice(None), slice(None)]
    out = np.zeros_like(a)
    for i, k in enumerate(kernel):
        if k == 0:
            continue
        sl[axis] = slice(i, i + a.shape[axis])
        out = out + k * p[tuple(sl)]
    return out


def _box5(a):
    out = a
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (2, 2)
        p = np.pad(out, pad, mode="edge")
        sl = [slice(None), slice(None)]
        acc = np.zeros_like(out)
        for i in range(5):
            sl[axis] = slice(i, i + out.shape[axis])
            acc = acc + p[tuple(sl)]
        out = acc
    return out / 25.0


def detect_corners(image: np.ndarray, max_features: int) -> list[Keypoint]:
    """Harris corners with 3x3 non-maximum suppression, strongest first."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 32:
        raise InvalidInputError(f"image must be a 2-D array of at least 32x32, got {img.shape}")
    # Sobel gradients (separable)
    gx = _shift_sum(_shift_sum(img, (1, 2, 1), axis=0), (-1, 0, 1), axis=1)
    gy = _shift_sum(_shift_sum(img, (1, 2, 1), axis=1), (-1, 0, 1), axis=0)
    ixx = _box5(gx * gx)
    iyy = _box5(gy * gy)
    ixy = _box5(gx * gy)
    response = ixx * iyy - ixy * ixy - _HARRIS_K * (ixx + iyy) ** 2
    # gradient + window support is unreliable at the border
    response[:3, :] = -np.inf
    response[-3:, :] = -np.inf
    response[:, :3] = -np.inf
    response[:, -3:] = -np.inf

    neighborhood = np.full_like(response, -np.inf)
    p = np.pad(response, 1, mode="constant", constant_values=-np.inf)
    h, w = response.shape
    for dy in range(3):
        for dx in range(3):
            if dy == 1 and dx == 1:
                continue
            neighborhood = np.maximum(neighborhood, p[dy : dy + h, dx : dx + w])
    ys, xs = np.nonzero((response >= neighborhood) & (response > 0.0))
    if ys.size == 0:
        return []
    order = np.lexsort((xs, ys, -response[ys, xs]))
    accepted: list[Keypoint] = []
    taken = set()
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        # suppress ties inside the same 3x3 plateau
        if any((y + dy, x + dx) in taken for dy in (-1, 0, 1) for dx in (-1, 0, 1)):
            continue
        taken.add((y, x))
        accepted.append(Keypoint(float(x), float(y), float(response[y, x])))
        if len(accepted) == max_features:
            break
    return accepted


# --------------------------------------------------------------- description


def _load_pattern() -> np.ndarray:
    text = resources.files("matchbench").joinpath("data/brief_pattern_256.txt").read_text()
    rows = [line.split() for line in text.splitlines() if line and not line.startswith("#")]
    pattern = np.array(rows, dtype=np.int64)
    if pattern.shape != (DESCRIPTOR_BITS, 4):
        raise ParseError(f"descriptor pattern must be {DESCRIPTOR_BITS}x4, got {pattern.shape}")
    return pattern


_PATTERN = _load_pattern()


def compute_descriptors(image: np.ndarray, keypoints: list[Keypoint]) -> tuple[list[Keypoint], np.ndarray]:
    """256-bit binary descriptors from pairwise intensity tests on a smoothed patch.

    Keypoints closer than 16 px to the border are dropped; returns the
    surviving keypoints and an (M, 32) uint8 descriptor array.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    kept = [
        kp
        for kp in keypoints
        if _BORDER <= round(kp.x) <= w - 1 - _BORDER and _BORDER <= round(kp.y) <= h - 1 - _BORDER
    ]
    if not kept:
        return [], np.empty((0, DESCRIPTOR_BITS // 8), dtype=np.uint8)
    smooth = _box5(img)
    cx = np.array([round(kp.x) for kp in kept], dtype=np.int64)
    cy = np.array([round(kp.y) for kp in kept], dtype=np.int64)
    a = smooth[cy[:, None] + _PATTERN[:, 1], cx[:, None] + _PATTERN[:, 0]]
    b = smooth[cy[:, None] + _PATTERN[:, 3], cx[:, None] + _PATTERN[:, 2]]
    bits = (a < b).astype(np.uint8)
    return kept, np.packbits(bits, axis=1)


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    """Number of differing bits between two packed 256-bit descriptors."""
    return int(_POPCOUNT[np.bitwise_xor(a, b)].sum())


def _hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int32)
    step = max(1, (1 << 22) // max(1, b.shape[0] * b.shape[1]))  # ~4 MB blocks
    for start in range(0, a.shape[0], step):
        block = a[start : start + step]
        xor = np.bitwise_xor(block[:, None, :], b[None, :, :])
        out[start : start + step] = _POPCOUNT[xor].sum(axis=2, dtype=np.int32)
    return out


def match_nn(desc_a: np.ndarray, desc_b: np.ndarray) -> list[TentativeMatch]:
    """Nearest and second-nearest neighbor in b for every descriptor in a.

    Hamming distance; ties broken by lower index.  With fewer than two
    candidates the second distance is the max-distance sentinel (256).
    """
    a = np.asarray(desc_a, dtype=np.uint8).reshape(-1, DESCRIPTOR_BITS // 8)
    b = np.asarray(desc_b, dtype=np.uint8).reshape(-1, DESCRIPTOR_BITS // 8)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidInputError("both descriptor sets must be non-empty")
    D = _hamming_matrix(a, b)
    best = D.argmin(axis=1)  # argmin takes the first (lowest-index) minimum
    rows = np.arange(a.shape[0])
    best_d = D[rows, best]
    if b.shape[0] < 2:
        second_d = np.full(a.shape[0], DESCRIPTOR_BITS, dtype=np.int32)
    else:
        D[rows, best] = DESCRIPTOR_BITS + 1
        second_d = D[rows, D.argmin(axis=1)]
    return [
        TentativeMatch(int(i), int(best[i]), float(best_d[i]), float(second_d[i]))
        for i in rows
    ]


def ratio_test(matches: list[TentativeMatch], threshold: float = 0.8) -> list[TentativeMatch]:
    """Keep matches whose distance beats ``threshold`` times the second best."""
    return [m for m in matches if m.distance < threshold * m.second_distance]


def run_builtin_matcher(image_a, image_b, config: MatcherConfig | None = None, pair_id: int = 0) -> CorrespondenceSet:
    """detect -> describe -> match -> ratio test, with per-stage wall-clock timings.

    ``detect_ms`` covers detection plus description for both images; matching
    and selection are timed separately.
    """
    config = config or MatcherConfig()
    t0 = time.perf_counter()
    kps_a, desc_a = compute_descriptors(image_a, detect_corners(image_a, config.max_features))
    kps_b, desc_b = compute_descriptors(image_b, detect_corners(image_b, config.max_features))
    detect_ms = (time.perf_counter() - t0) * 1000.0
    if len(kps_a) == 0 or len(kps_b) == 0:
        return CorrespondenceSet(pair_id, np.empty((0, 4)), detect_ms, 0.0, 0.0)
    t1 = time.perf_counter()
    tentative = match_nn(desc_a, desc_b)
    match_ms = (time.perf_counter() - t1) * 1000.0
    t2 = time.perf_counter()
    selected = ratio_test(tentative, config.ratio)
    select_ms = (time.perf_counter() - t2) * 1000.0
    corr = np.array(
        [[kps_a[m.index_a].x, kps_a[m.index_a].y, kps_b[m.index_b].x, kps_b[m.index_b].y] for m in selected]
    ).reshape(-1, 4)
    return CorrespondenceSet(pair_id, corr, detect_ms, match_ms, select_ms)


# ----------------------------------------------------------- correspondence IO


def corr_path(directory, pair_id: int) -> Path:
    return Path(directory) / f"{pair_id}.corr"


def _format_timing(value: float) -> str:
    return "-" if value < 0 else repr(float(value))


def _parse_timing(token: str, path, line: int) -> float:
    if token == "-":
        return TIMING_UNKNOWN
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"bad timing token {token!r}", path=path, line=line) from None
    if not np.isfinite(value) or value < 0:
        raise ParseError(f"timings must be non-negative decimals, got {token!r}", path=path, line=line)
    return value


def save_correspondences(corr_set: CorrespondenceSet, directory) -> Path:
    """Write ``<pair_id>.corr`` in the exchange format; returns the path."""
    path = corr_path(directory, corr_set.pair_id)
    lines = [
        CORR_MAGIC,
        "times %s %s %s"
        % (
            _format_timing(corr_set.detect_ms),
            _format_timing(corr_set.match_ms),
            _format_timing(corr_set.select_ms),
        ),
    ]
    for row in corr_set.correspondences:
        lines.append("%s %s %s %s" % tuple(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class DirectoryCorrespondenceSource:
    """Picklable pair -> CorrespondenceSet resolver over a ``.corr`` directory."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, task) -> CorrespondenceSet:
        return load_correspondences(self.directory, task.pair_id)


def load_correspondences(directory, pair_id: int) -> CorrespondenceSet:
    """Read ``<pair_id>.corr`` from a directory of externally produced matches."""
    path = corr_path(directory, pair_id)
    if not path.is_file():
        raise PairNotFoundError(f"no correspondence file for pair {pair_id} at {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CORR_MAGIC:
        raise ParseError(f"expected magic line {CORR_MAGIC!r}", path=path, line=1)
    if len(lines) < 2 or not lines[1].startswith("times"):
        raise ParseError("expected 'times <detect> <match> <select>'", path=path, line=2)
    tokens = lines[1].split()
    if len(tokens) != 4:
        raise ParseError("expected 'times <detect> <match> <select>'", path=path, line=2)
    detect_ms, match_ms, select_ms = (_parse_timing(t, path, 2) for t in tokens[1:])
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 4 coordinates, got {len(parts)}", path=path, line=lineno)
        try:
            row = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {line!r}", path=path, line=lineno) from None
        if not all(np.isfinite(v) for v in row):
            raise ParseError("coordinates must be finite", path=path, line=lineno)
        rows.append(row)
    return CorrespondenceSet(pair_id, np.array(rows).reshape(-1, 4), detect_ms, match_ms, select_ms)
