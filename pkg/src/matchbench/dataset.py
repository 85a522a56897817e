"""Sequence ingestion and pair-list generation.

Importers converge TUM-, KITTI-, and Strecha-style layouts onto one canonical
manifest (JSON) so the evaluation core never touches raw dataset layouts.
Poses are stored world-from-camera; see :mod:`matchbench.geometry` for the
conventions.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySequenceError, InvalidInputError, ParseError
from .geometry import Calibration, Pose, quat_to_rotation, relative_pose, rotation_to_quat

log = logging.getLogger(__name__)

MANIFEST_CONVENTION = "world_from_camera;x_j=Rx_i+t"
TUM_ASSOCIATION_WINDOW_S = 0.02
TUM_DEFAULT_CALIBRATION = Calibration(525.0, 525.0, 319.5, 239.5)
# rotations parsed from text are snapped to the nearest rotation when slightly
# off-orthonormal; beyond this they are rejected as corrupt
_ROTATION_SNAP_TOL = 1e-4

_MANIFEST_IMAGE_FIELDS = (
    "path", "timestamp", "fx", "fy", "cx", "cy", "skew",
    "qw", "qx", "qy", "qz", "tx", "ty", "tz", "has_pose",
)


@dataclass
class ImageEntry:
    path: str
    timestamp: float
    calibration: Calibration
    pose: Pose | None = None
    # exact source quaternion (qw, qx, qy, qz) when the pose was parsed from
    # one; reused on serialization so file round trips are bit-stable
    quat: np.ndarray | None = None

    @property
    def has_pose(self) -> bool:
        return self.pose is not None


@dataclass
class SequenceManifest:
    """Canonical sequence description: images, intrinsics, ground-truth poses."""

    name: str
    fps: float
    images: list[ImageEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.fps > 0:
            stamps = [im.timestamp for im in self.images]
            if any(b < a for a, b in zip(stamps, stamps[1:])):
                raise InvalidInputError("timestamps must be non-decreasing for an ordered sequence")

    def __len__(self):
        return len(self.images)


@dataclass
class PairTask:
    """One evaluation unit: reference/query images plus ground-truth relative pose."""

    pair_id: int
    ref_index: int
    query_index: int
    gt_relative: Pose

    def __post_init__(self):
        if self.ref_index == self.query_index:
            raise InvalidInputError("a pair must join two distinct images")


@dataclass
class PairGenConfig:
    mode: str  # short-fragment | wide-exhaustive | wide-window
    k: int = 15
    window: int = 9

    def __post_init__(self):
        if self.mode not in ("short-fragment", "wide-exhaustive", "wide-window"):
            raise InvalidInputError(f"unknown pair-generation mode {self.mode!r}")
        if self.mode == "short-fragment" and self.k < 2:
            raise InvalidInputError("short-fragment mode needs k >= 2")
        if self.mode == "wide-window" and self.window < 1:
            raise InvalidInputError("wide-window mode needs window >= 1")


# ----------------------------------------------------------------- primitives


def _finite(value: float, what: str, path=None, line=None) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ParseError(f"{what} must be finite, got {value}", path=path, line=line)
    return value


def _snap_rotation(R: np.ndarray, path=None, line=None) -> np.ndarray:
    """Accept exact rotations as-is; snap slightly drifted ones; reject garbage."""
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err < 1e-9 and abs(np.linalg.det(R) - 1.0) < 1e-9:
        return R
    if err > _ROTATION_SNAP_TOL:
        raise ParseError("matrix is not a rotation", path=path, line=line)
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def attach_ground_truth(index_pairs, manifest: SequenceManifest) -> list[PairTask]:
    """Build pair tasks with gt_relative; pairs lacking a pose are dropped and logged."""
    tasks = []
    dropped = 0
    for ref, query in sorted(index_pairs):
        ref_im, query_im = manifest.images[ref], manifest.images[query]
        if ref_im.pose is None or query_im.pose is None:
            log.warning("dropping pair (%d, %d): missing ground-truth pose", ref, query)
            dropped += 1
            continue
        tasks.append(PairTask(len(tasks), ref, query, relative_pose(ref_im.pose, query_im.pose)))
    if dropped:
        log.info("dropped %d of %d pairs for missing poses", dropped, dropped + len(tasks))
    return tasks


# ------------------------------------------------------------ pair generation


def generate_short_baseline_pairs(manifest: SequenceManifest, k: int) -> list[PairTask]:
    """Split into consecutive k-frame fragments; frame 0 of each is the reference.

    Yields n - ceil(n/k) pairs before ground-truth drops; the last fragment may
    be partial and contributes its available queries.
    """
    n = len(manifest)
    if n < 2:
        raise EmptySequenceError(f"need at least 2 images, got {n}")
    if manifest.fps <= 0:
        raise InvalidInputError("short-baseline pairing needs an ordered sequence (fps > 0)")
    if k < 2:
        raise InvalidInputError("fragment length k must be >= 2")
    index_pairs = []
    for start in range(0, n, k):
        for query in range(start + 1, min(start + k, n)):
            index_pairs.append((start, query))
    return attach_ground_truth(index_pairs, manifest)


def generate_wide_exhaustive(manifest: SequenceManifest) -> list[PairTask]:
    """All n(n-1)/2 unordered pairs; the lower index is the reference."""
    n = len(manifest)
    if n < 2:
        raise EmptySequenceError(f"need at least 2 images, got {n}")
    return attach_ground_truth([(i, j) for i in range(n) for j in range(i + 1, n)], manifest)


def generate_wide_window_pairs(manifest: SequenceManifest, window: int = 9) -> list[PairTask]:
    """Each image paired with the next at most ``window`` images."""
    n = len(manifest)
    if n < 2:
        raise EmptySequenceError(f"need at least 2 images, got {n}")
    if window < 1:
        raise InvalidInputError("window must be >= 1")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, min(i + window, n - 1) + 1)]
    return attach_ground_truth(pairs, manifest)


def subsample_fragments(manifest: SequenceManifest, k: int = 15) -> SequenceManifest:
    """Keep the first image of every k-frame fragment (indices 0, k, 2k, ...)."""
    if k < 1:
        raise InvalidInputError("fragment length k must be >= 1")
    if manifest.fps <= 0:
        raise InvalidInputError("fragment subsampling needs an ordered sequence (fps > 0)")
    return SequenceManifest(manifest.name, manifest.fps / k, manifest.images[::k])


def generate_pairs(manifest: SequenceManifest, config: PairGenConfig) -> list[PairTask]:
    if config.mode == "short-fragment":
        return generate_short_baseline_pairs(manifest, config.k)
    if config.mode == "wide-exhaustive":
        return generate_wide_exhaustive(manifest)
    return generate_wide_window_pairs(manifest, config.window)


# -------------------------------------------------------------- manifest file


def write_manifest(manifest: SequenceManifest, path) -> None:
    """Serialize to the canonical JSON manifest (lossless, stable byte layout)."""
    images = []
    for im in manifest.images:
        if im.pose is not None:
            q = im.quat if im.quat is not None else rotation_to_quat(im.pose.rotation)
            t = im.pose.translation
        else:
            q = np.array([1.0, 0.0, 0.0, 0.0])
            t = np.zeros(3)
        c = im.calibration
        images.append(
            {
                "path": im.path,
                "timestamp": float(im.timestamp),
                "fx": float(c.fx), "fy": float(c.fy), "cx": float(c.cx), "cy": float(c.cy),
                "skew": float(c.skew),
                "qw": float(q[0]), "qx": float(q[1]), "qy": float(q[2]), "qz": float(q[3]),
                "tx": float(t[0]), "ty": float(t[1]), "tz": float(t[2]),
                "has_pose": im.pose is not None,
            }
        )
    doc = {
        "name": manifest.name,
        "fps": float(manifest.fps),
        "convention": MANIFEST_CONVENTION,
        "images": images,
    }
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def read_manifest(path) -> SequenceManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")

    def reject_constant(token):
        raise ParseError(f"non-finite value {token!r} not allowed", path=path)

    try:
        doc = json.loads(text, parse_constant=reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from exc
    for key in ("name", "fps", "convention", "images"):
        if key not in doc:
            raise ParseError(f"manifest missing required field {key!r}", path=path)
    if doc["convention"] != MANIFEST_CONVENTION:
        raise ParseError(f"unsupported pose convention {doc['convention']!r}", path=path)
    images = []
    for i, entry in enumerate(doc["images"]):
        for key in _MANIFEST_IMAGE_FIELDS:
            if key not in entry:
                raise ParseError(f"image {i} missing required field {key!r}", path=path)
        for key in _MANIFEST_IMAGE_FIELDS[1:-1]:
            _finite(entry[key], f"image {i} field {key!r}", path=path)
        cal = Calibration(entry["fx"], entry["fy"], entry["cx"], entry["cy"], entry["skew"])
        pose = None
        quat = None
        if entry["has_pose"]:
            quat = np.array([entry["qw"], entry["qx"], entry["qy"], entry["qz"]], dtype=float)
            pose = Pose(quat_to_rotation(quat), [entry["tx"], entry["ty"], entry["tz"]])
        images.append(ImageEntry(str(entry["path"]), float(entry["timestamp"]), cal, pose, quat))
    return SequenceManifest(str(doc["name"]), float(doc["fps"]), images)


# ------------------------------------------------------------- pair-list file


def write_pairs_csv(pairs: list[PairTask], path) -> None:
    lines = ["pair_id,ref,query"]
    for p in pairs:
        lines.append(f"{p.pair_id},{p.ref_index},{p.query_index}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pairs_csv(path) -> list[tuple[int, int, int]]:
    """Raw (pair_id, ref, query) rows; ground truth is re-attached from a manifest."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "pair_id,ref,query":
        raise ParseError("expected header 'pair_id,ref,query'", path=path, line=1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"expected 3 columns, got {len(parts)}", path=path, line=lineno)
        try:
            rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
        except ValueError:
            raise ParseError(f"non-integer pair row {line!r}", path=path, line=lineno) from None
    return rows


def pairs_from_rows(rows, manifest: SequenceManifest) -> list[PairTask]:
    """Rebuild pair tasks from CSV rows, keeping the file's pair ids."""
    tasks = []
    for pair_id, ref, query in rows:
        if not (0 <= ref < len(manifest) and 0 <= query < len(manifest)):
            raise InvalidInputError(f"pair {pair_id} references image out of range")
        ref_im, query_im = manifest.images[ref], manifest.images[query]
        if ref_im.pose is None or query_im.pose is None:
            log.warning("dropping pair %d: missing ground-truth pose", pair_id)
            continue
        tasks.append(PairTask(pair_id, ref, query, relative_pose(ref_im.pose, query_im.pose)))
    return tasks


# -------------------------------------------------------------- TUM importer


def _read_listing(path, n_fields, what):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != n_fields:
                raise ParseError(
                    f"{what} line needs {n_fields} fields, got {len(parts)}", path=path, line=lineno
                )
            rows.append((parts, lineno))
    return rows


def import_tum(directory) -> SequenceManifest:
    """TUM-style layout: ``rgb.txt`` (timestamp path), ``groundtruth.txt``
    (timestamp tx ty tz qx qy qz qw), optional ``calibration.txt`` (fx fy cx cy [skew]).

    Images are associated to the nearest trajectory sample within 0.02 s.
    """
    directory = Path(directory)
    index_path = directory / "rgb.txt"
    traj_path = directory / "groundtruth.txt"
    if not index_path.is_file():
        raise FileNotFoundError(f"missing image index file {index_path}")
    if not traj_path.is_file():
        raise FileNotFoundError(f"missing trajectory file {traj_path}")

    calibration = TUM_DEFAULT_CALIBRATION
    calib_path = directory / "calibration.txt"
    if calib_path.is_file():
        tokens = calib_path.read_text(encoding="utf-8").split()
        if len(tokens) not in (4, 5):
            raise ParseError("calibration.txt needs 'fx fy cx cy [skew]'", path=calib_path, line=1)
        vals = [_finite(t, "calibration value", path=calib_path, line=1) for t in tokens]
        calibration = Calibration(*vals)

    image_rows = _read_listing(index_path, 2, "image index")
    if not image_rows:
        raise EmptySequenceError(f"no images listed in {index_path}")
    images = []
    for (stamp, rel_path), lineno in image_rows:
        images.append((_finite(stamp, "timestamp", path=index_path, line=lineno), rel_path))
    images.sort(key=lambda it: it[0])

    stamps, poses, quats = [], [], []
    for parts, lineno in _read_listing(traj_path, 8, "trajectory"):
        vals = [_finite(v, "trajectory value", path=traj_path, line=lineno) for v in parts]
        ts, tx, ty, tz, qx, qy, qz, qw = vals
        stamps.append(ts)
        quats.append(np.array([qw, qx, qy, qz]))
        poses.append(Pose(quat_to_rotation([qw, qx, qy, qz]), [tx, ty, tz]))
    order = np.argsort(stamps)
    stamps = np.asarray(stamps)[order]
    poses = [poses[i] for i in order]
    quats = [quats[i] for i in order]

    entries = []
    associated = 0
    for ts, rel_path in images:
        pose = quat = None
        if len(stamps):
            i = int(np.searchsorted(stamps, ts))
            best = min(
                (j for j in (i - 1, i) if 0 <= j < len(stamps)),
                key=lambda j: abs(stamps[j] - ts),
            )
            if abs(stamps[best] - ts) <= TUM_ASSOCIATION_WINDOW_S:
                pose = poses[best]
                quat = quats[best]
                associated += 1
        entries.append(ImageEntry(rel_path, ts, calibration, pose, quat))
    if associated == 0:
        raise EmptySequenceError("no image could be associated with a ground-truth pose")
    return SequenceManifest(directory.name, 30.0, entries)


def export_tum(manifest: SequenceManifest, directory) -> None:
    """Write a TUM-style layout (rgb.txt / groundtruth.txt / calibration.txt)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rgb_lines = ["# timestamp path"]
    gt_lines = ["# timestamp tx ty tz qx qy qz qw"]
    for im in manifest.images:
        rgb_lines.append(f"{float(im.timestamp)!r} {im.path}")
        if im.pose is not None:
            q = im.quat if im.quat is not None else rotation_to_quat(im.pose.rotation)
            t = im.pose.translation
            gt_lines.append(
                " ".join(repr(float(v)) for v in (im.timestamp, t[0], t[1], t[2], q[1], q[2], q[3], q[0]))
            )
    (directory / "rgb.txt").write_text("\n".join(rgb_lines) + "\n", encoding="utf-8")
    (directory / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n", encoding="utf-8")
    c = manifest.images[0].calibration if manifest.images else TUM_DEFAULT_CALIBRATION
    (directory / "calibration.txt").write_text(
        " ".join(repr(float(v)) for v in (c.fx, c.fy, c.cx, c.cy, c.skew)) + "\n", encoding="utf-8"
    )


# ------------------------------------------------------------- KITTI importer


def import_kitti(directory, sequence_id: str) -> SequenceManifest:
    """KITTI-odometry layout: ``poses/<id>.txt`` (row-major 3x4 world-from-camera)
    and ``sequences/<id>/calib.txt`` providing the evaluated camera's P0.

    Timestamps come from ``sequences/<id>/times.txt`` when present, else index/fps.
    """
    directory = Path(directory)
    poses_path = directory / "poses" / f"{sequence_id}.txt"
    calib_path = directory / "sequences" / sequence_id / "calib.txt"
    if not poses_path.is_file():
        raise FileNotFoundError(f"missing poses file {poses_path}")
    if not calib_path.is_file():
        raise FileNotFoundError(f"missing calibration file {calib_path}")

    calibration = None
    for lineno, line in enumerate(calib_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        tag, _, rest = line.partition(":")
        if tag.strip() != "P0":
            continue
        vals = rest.split()
        if len(vals) != 12:
            raise ParseError(f"P0 needs 12 numbers, got {len(vals)}", path=calib_path, line=lineno)
        P = np.array([_finite(v, "P0 entry", path=calib_path, line=lineno) for v in vals]).reshape(3, 4)
        calibration = Calibration(P[0, 0], P[1, 1], P[0, 2], P[1, 2], P[0, 1])
        break
    if calibration is None:
        raise ParseError("no P0 projection found", path=calib_path)

    poses = []
    for lineno, line in enumerate(poses_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 12:
            raise ParseError(f"pose line needs 12 numbers, got {len(vals)}", path=poses_path, line=lineno)
        M = np.array([_finite(v, "pose entry", path=poses_path, line=lineno) for v in vals]).reshape(3, 4)
        R = _snap_rotation(M[:, :3], path=poses_path, line=lineno)
        poses.append(Pose(R, M[:, 3]))
    if not poses:
        raise EmptySequenceError(f"no poses in {poses_path}")

    fps = 10.0
    times_path = directory / "sequences" / sequence_id / "times.txt"
    if times_path.is_file():
        stamps = [
            _finite(tok, "timestamp", path=times_path, line=i)
            for i, tok in enumerate(times_path.read_text(encoding="utf-8").split(), start=1)
        ]
        if len(stamps) < len(poses):
            raise ParseError(
                f"times.txt has {len(stamps)} entries for {len(poses)} poses", path=times_path
            )
    else:
        stamps = [i / fps for i in range(len(poses))]

    entries = [
        ImageEntry(f"sequences/{sequence_id}/image_0/{i:06d}.png", stamps[i], calibration, pose)
        for i, pose in enumerate(poses)
    ]
    return SequenceManifest(f"{sequence_id}-kitti", fps, entries)


def export_kitti(manifest: SequenceManifest, directory, sequence_id: str) -> None:
    """Write a KITTI-odometry layout (poses/<id>.txt, sequences/<id>/calib.txt, times.txt)."""
    directory = Path(directory)
    (directory / "poses").mkdir(parents=True, exist_ok=True)
    seq_dir = directory / "sequences" / sequence_id
    seq_dir.mkdir(parents=True, exist_ok=True)
    pose_lines = []
    time_lines = []
    for im in manifest.images:
        if im.pose is None:
            log.warning("skipping image %s in KITTI export: no pose", im.path)
            continue
        M = np.hstack([im.pose.rotation, im.pose.translation.reshape(3, 1)])
        pose_lines.append(" ".join(repr(float(v)) for v in M.reshape(-1)))
        time_lines.append(repr(float(im.timestamp)))
    (directory / "poses" / f"{sequence_id}.txt").write_text("\n".join(pose_lines) + "\n", encoding="utf-8")
    (seq_dir / "times.txt").write_text("\n".join(time_lines) + "\n", encoding="utf-8")
    c = manifest.images[0].calibration if manifest.images else TUM_DEFAULT_CALIBRATION
    p0 = (c.fx, c.skew, c.cx, 0.0, 0.0, c.fy, c.cy, 0.0, 0.0, 0.0, 1.0, 0.0)
    (seq_dir / "calib.txt").write_text("P0: " + " ".join(repr(float(v)) for v in p0) + "\n", encoding="utf-8")


# ----------------------------------------------------------- Strecha importer


def import_strecha(directory) -> SequenceManifest:
    """Strecha-style layout: one ``<image>.camera`` text file per image.

    Grammar (whitespace-separated numbers, 8 lines):
    rows 1-3 the 3x3 K, rows 4-6 the 3x3 world-from-camera rotation, row 7 the
    camera center, row 8 ``width height``.
    """
    directory = Path(directory)
    camera_files = sorted(directory.glob("*.camera"))
    if not camera_files:
        raise EmptySequenceError(f"no .camera files in {directory}")
    entries = []
    for index, cam_path in enumerate(camera_files):
        rows = [line.split() for line in cam_path.read_text(encoding="utf-8").splitlines() if line.strip()]
        if len(rows) != 8 or [len(r) for r in rows] != [3, 3, 3, 3, 3, 3, 3, 2]:
            raise ParseError("expected 3x3 K, 3x3 R, center, 'width height'", path=cam_path)
        try:
            K = np.array([[_finite(v, "K entry", path=cam_path) for v in r] for r in rows[:3]])
            R = np.array([[_finite(v, "R entry", path=cam_path) for v in r] for r in rows[3:6]])
            center = np.array([_finite(v, "center entry", path=cam_path) for v in rows[6]])
            width, height = (int(v) for v in rows[7])
        except ValueError as exc:
            raise ParseError(f"non-numeric value: {exc}", path=cam_path) from None
        if width <= 0 or height <= 0:
            raise ParseError(f"bad image dimensions {width}x{height}", path=cam_path)
        calibration = Calibration(K[0, 0], K[1, 1], K[0, 2], K[1, 2], K[0, 1])
        pose = Pose(_snap_rotation(R, path=cam_path), center)
        entries.append(ImageEntry(cam_path.name[: -len(".camera")], float(index), calibration, pose))
    return SequenceManifest(directory.name, 0.0, entries)


def export_strecha(manifest: SequenceManifest, directory, image_size: tuple[int, int] = (3072, 2048)) -> None:
    """Write one ``<image>.camera`` file per posed image."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for im in manifest.images:
        if im.pose is None:
            log.warning("skipping image %s in Strecha export: no pose", im.path)
            continue
        c = im.calibration
        K = ((c.fx, c.skew, c.cx), (0.0, c.fy, c.cy), (0.0, 0.0, 1.0))
        lines = [" ".join(repr(float(v)) for v in row) for row in K]
        lines += [" ".join(repr(float(v)) for v in row) for row in im.pose.rotation]
        lines.append(" ".join(repr(float(v)) for v in im.pose.translation))
        lines.append(f"{image_size[0]} {image_size[1]}")
        # camera files sit flat next to the images, keyed by basename
        (directory / f"{Path(im.path).name}.camera").write_text("\n".join(lines) + "\n", encoding="utf-8")
