#!/usr/bin/env python3
"""Render the checked-in 30-frame synthetic sequence at tests/fixtures/smoke/.

Seventy small textured panels scattered through the viewing volume (general
position for two-view geometry) plus a far backdrop, viewed by a camera
translating sideways with a slow tracking yaw.  Poses are exact, images are
640x480 grayscale PNG, and the layout is TUM-style (rgb.txt / groundtruth.txt
/ calibration.txt) so the sequence exercises the importer end to end.
Deterministic; rerun only to regenerate.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from matchbench.geometry import rotation_to_quat  # noqa: E402
from PIL import Image  # noqa: E402

W, H = 640, 480
FX = FY = 560.0
CX, CY = 319.5, 239.5
FRAMES = 30
FPS = 30.0
STEP_X = 0.10  # meters per frame
YAW_PER_FRAME = -0.004  # radians per frame (gentle tracking turn)
SEED = 42


def rot_y(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def make_texture(rng, cells=64, upscale=8):
    """Blocky base plus a fine per-texel layer; the detail keeps local patches
    globally distinctive so repetitive-structure false matches stay rare."""
    base = rng.integers(40, 216, size=(cells, cells), dtype=np.int16)
    coarse = np.kron(base, np.ones((upscale, upscale), dtype=np.int16))
    detail = rng.integers(-24, 25, size=coarse.shape, dtype=np.int16)
    fine = np.kron(detail[:: 2, :: 2], np.ones((2, 2), dtype=np.int16))
    return np.clip(coarse + fine[: coarse.shape[0], : coarse.shape[1]], 0, 255).astype(np.uint8)


class Plane:
    """Textured rectangle: origin point, two spanning edges, a texture."""

    def __init__(self, origin, edge_u, edge_v, texture):
        self.origin = np.asarray(origin, dtype=float)
        self.edge_u = np.asarray(edge_u, dtype=float)
        self.edge_v = np.asarray(edge_v, dtype=float)
        self.normal = np.cross(self.edge_u, self.edge_v)
        self.texture = texture


SUPERSAMPLE = 3  # rays per pixel edge; box-averaged down (anti-aliasing keeps
# rendered corner positions faithful to the sub-pixel geometry)


def _projected_bbox(plane, R_wc, center, ss):
    """Supersampled-pixel bounding box of a plane's four corners, or None."""
    corners = [
        plane.origin,
        plane.origin + plane.edge_u,
        plane.origin + plane.edge_v,
        plane.origin + plane.edge_u + plane.edge_v,
    ]
    us, vs = [], []
    for c in corners:
        x = R_wc.T @ (np.asarray(c) - center)
        if x[2] < 0.05:
            return 0, H * ss, 0, W * ss  # crosses the image plane: no cheap bound
        us.append(FX * x[0] / x[2] + CX)
        vs.append(FY * x[1] / x[2] + CY)
    u0 = int(max(0, np.floor((min(us) - 1) * ss)))
    u1 = int(min(W * ss, np.ceil((max(us) + 2) * ss)))
    v0 = int(max(0, np.floor((min(vs) - 1) * ss)))
    v1 = int(min(H * ss, np.ceil((max(vs) + 2) * ss)))
    if u0 >= u1 or v0 >= v1:
        return None
    return v0, v1, u0, u1


def render(planes, R_wc, center):
    ss = SUPERSAMPLE
    sub_u = (np.arange(W * ss, dtype=float) + 0.5) / ss - 0.5
    sub_v = (np.arange(H * ss, dtype=float) + 0.5) / ss - 0.5
    image = np.full((H * ss, W * ss), 128.0)
    depth = np.full((H * ss, W * ss), np.inf)
    for plane in planes:
        bbox = _projected_bbox(plane, R_wc, center, ss)
        if bbox is None:
            continue
        v0, v1, u0, u1 = bbox
        us, vs = np.meshgrid(sub_u[u0:u1], sub_v[v0:v1])
        rays = np.stack([(us - CX) / FX, (vs - CY) / FY, np.ones_like(us)], axis=-1) @ R_wc.T
        denom = rays @ plane.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((plane.origin - center) @ plane.normal) / denom
        hit = center + t[..., None] * rays
        rel = hit - plane.origin
        uu = rel @ plane.edge_u / (plane.edge_u @ plane.edge_u)
        vv = rel @ plane.edge_v / (plane.edge_v @ plane.edge_v)
        window_depth = depth[v0:v1, u0:u1]
        ok = (t > 0.1) & (t < window_depth) & (uu >= 0) & (uu < 1) & (vv >= 0) & (vv < 1) & np.isfinite(t)
        th, tw = plane.texture.shape
        ti = np.clip((vv * th).astype(int), 0, th - 1)
        tj = np.clip((uu * tw).astype(int), 0, tw - 1)
        window_image = image[v0:v1, u0:u1]
        window_image[ok] = plane.texture[ti[ok], tj[ok]]
        window_depth[ok] = t[ok]
    box = image.reshape(H, ss, W, ss).mean(axis=(1, 3))
    return np.floor(box + 0.5).astype(np.uint8)


def make_panels(rng, count=70):
    """Small textured panels scattered through the viewing volume.

    Spreading corners across depths 2.2-7.5 m keeps the fundamental-matrix
    problem in general position; a single dominant plane would put the
    estimate on the homography-ambiguity plateau.
    """
    panels = []
    for _ in range(count):
        z = rng.uniform(2.2, 7.5)
        cx = rng.uniform(-2.2, 5.6)
        cy = rng.uniform(-1.5, 1.5) * (z / 4.0)
        size = rng.uniform(0.45, 0.95) * (z / 4.0)
        yaw, pitch = rng.uniform(-0.55, 0.55, size=2)
        normal_frame = rot_y(yaw) @ np.array(
            [[1.0, 0.0, 0.0], [0.0, np.cos(pitch), -np.sin(pitch)], [0.0, np.sin(pitch), np.cos(pitch)]]
        )
        eu = normal_frame[:, 0] * size
        ev = normal_frame[:, 1] * size
        origin = np.array([cx, cy, z]) - 0.5 * eu - 0.5 * ev
        cells = int(np.clip(size / z * 560.0 / 16.0, 4, 14))  # ~16 px blocks in view
        panels.append(Plane(origin, eu, ev, make_texture(rng, cells=cells, upscale=12)))
    return panels


def main():
    rng = np.random.default_rng(SEED)
    out = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "smoke"
    (out / "rgb").mkdir(parents=True, exist_ok=True)

    # far backdrop behind the panels so little flat background is visible
    backdrop = Plane([-5.0, -5.0, 8.2], [13.0, 0.0, 0.8], [0.0, 10.0, 0.0], make_texture(rng, cells=96))
    panels = make_panels(rng) + [backdrop]

    rgb_lines = ["# timestamp path"]
    gt_lines = ["# timestamp tx ty tz qx qy qz qw"]
    for i in range(FRAMES):
        R_wc = rot_y(YAW_PER_FRAME * i)
        center = np.array([STEP_X * i, 0.0, 0.004 * i])
        image = render(panels, R_wc, center)
        name = f"rgb/frame_{i:04d}.png"
        Image.fromarray(image, mode="L").save(out / name, optimize=True)
        ts = i / FPS
        q = rotation_to_quat(R_wc)
        rgb_lines.append(f"{ts!r} {name}")
        gt_lines.append(
            " ".join(
                repr(float(v))
                for v in (ts, center[0], center[1], center[2], q[1], q[2], q[3], q[0])
            )
        )
    (out / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (out / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n")
    (out / "calibration.txt").write_text(f"{FX!r} {FY!r} {CX!r} {CY!r}\n")
    print(f"rendered {FRAMES} frames into {out}")


if __name__ == "__main__":
    main()
