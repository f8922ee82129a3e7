"""Pinhole cameras: world->camera transforms, projection, near-plane clipping.

Camera frame follows the usual CV convention: +x right, +y down, +z forward
(optical axis).  A world point p projects to continuous pixel coordinates

    p_cam = R @ p + t,   u = fx * x / z + cx,   v = fy * y / z + cy

with pixel centers at integer coordinates.  Points with camera-frame depth
z <= near are "behind" the camera and yield no projection; polyline segments
crossing the plane z = near are intersected exactly before the perspective
divide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_NEAR = 0.1


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")


@dataclass(frozen=True)
class CameraExtrinsics:
    """World->camera rotation and translation: p_cam = R @ p_world + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"bad extrinsic shapes {r.shape}, {t.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant != 1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def compose_world_transform(self, g_rot: np.ndarray, g_trans: np.ndarray) -> "CameraExtrinsics":
        """Extrinsics seeing the world moved by p' = G p (i.e. this camera o G^-1)."""
        new_r = self.rotation @ g_rot.T
        new_t = self.translation - new_r @ np.asarray(g_trans, dtype=np.float64)
        return CameraExtrinsics(new_r, new_t)


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[tuple[CameraIntrinsics, CameraExtrinsics], ...]
    near: float = DEFAULT_NEAR

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ValueError("rig needs at least one camera")
        if self.near <= 0:
            raise ValueError(f"near plane must be positive, got {self.near}")

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    @property
    def image_size(self) -> tuple[int, int]:
        intr = self.cameras[0][0]
        return (intr.height, intr.width)

    def transformed(self, g_rot: np.ndarray, g_trans: np.ndarray) -> "CameraRig":
        return CameraRig(
            tuple((i, e.compose_world_transform(g_rot, g_trans)) for i, e in self.cameras),
            near=self.near,
        )


# world frame: x right, y forward, z up.  _BASE maps it onto the camera
# convention for a camera looking along +y.
_BASE = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def build_camera(position, yaw_deg: float = 0.0, pitch_deg: float = 0.0) -> CameraExtrinsics:
    """Extrinsics for a camera at ``position`` looking along world +y.

    ``yaw_deg`` turns left (+) / right (-) about world z; ``pitch_deg`` tilts
    the optical axis down (+) about the camera x axis.
    """
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    cz, sz = math.cos(yaw), math.sin(yaw)
    rot_yaw = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    cx_, sx_ = math.cos(pitch), math.sin(pitch)
    rot_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cx_, -sx_], [0.0, sx_, cx_]])
    r = rot_pitch @ _BASE @ rot_yaw.T
    t = -r @ np.asarray(position, dtype=np.float64)
    return CameraExtrinsics(r, t)


def project_point(p_world, intr: CameraIntrinsics, extr: CameraExtrinsics, near: float = DEFAULT_NEAR):
    """Continuous pixel (u, v) of a world point, or None if behind the camera.

    Coordinates may fall outside the image; callers clip.
    """
    p_cam = extr.rotation @ np.asarray(p_world, dtype=np.float64) + extr.translation
    z = p_cam[2]
    if z <= near:
        return None
    return (intr.fx * p_cam[0] / z + intr.cx, intr.fy * p_cam[1] / z + intr.cy)


def project_points(pts_world: np.ndarray, intr: CameraIntrinsics, extr: CameraExtrinsics, near: float = DEFAULT_NEAR):
    """Vectorized projection: (uv array Nx2, valid mask).  Invalid rows are NaN."""
    p_cam = pts_world @ extr.rotation.T + extr.translation
    z = p_cam[:, 2]
    valid = z > near
    uv = np.full((len(pts_world), 2), np.nan)
    zs = np.where(valid, z, 1.0)
    uv[:, 0] = np.where(valid, intr.fx * p_cam[:, 0] / zs + intr.cx, np.nan)
    uv[:, 1] = np.where(valid, intr.fy * p_cam[:, 1] / zs + intr.cy, np.nan)
    return uv, valid


def clip_project_polyline(polyline: np.ndarray, intr: CameraIntrinsics, extr: CameraExtrinsics, near: float = DEFAULT_NEAR):
    """Project a world polyline into 2-D pixel segments, clipping at z = near.

    Returns a list of ((u0, v0), (u1, v1)) tuples.  Segments fully behind the
    camera are dropped; crossing segments are intersected exactly at the plane.
    """
    poly = np.asarray(polyline, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[0] < 2 or poly.shape[1] != 3:
        raise ValueError(f"polyline must be (N>=2, 3), got {poly.shape}")
    cam = poly @ extr.rotation.T + extr.translation
    segments = []
    for i in range(len(cam) - 1):
        a, b = cam[i], cam[i + 1]
        za, zb = a[2], b[2]
        if za <= near and zb <= near:
            continue
        if za <= near or zb <= near:
            s = (near - za) / (zb - za)
            crossing = a + s * (b - a)
            crossing[2] = near  # exact on the plane, kept just in front below
            if za <= near:
                a = crossing
                za = near
            else:
                b = crossing
                zb = near
        ua = (intr.fx * a[0] / za + intr.cx, intr.fy * a[1] / za + intr.cy)
        ub = (intr.fx * b[0] / zb + intr.cx, intr.fy * b[1] / zb + intr.cy)
        segments.append((ua, ub))
    return segments


def rigid_transform(rng=None, rot: np.ndarray | None = None, trans=None):
    """Helper producing a random proper rotation + translation (for tests/CLI).

    With ``rng`` given, draws a uniform-ish rotation via Gram-Schmidt on
    Gaussian vectors and a translation in [-10, 10)^3.
    """
    if rot is None:
        g = rng.normal((3, 3))
        q, r = np.linalg.qr(g)
        q *= np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        rot = q
    if trans is None:
        trans = (rng.uniform((3,)) - 0.5) * 20.0
    return np.asarray(rot), np.asarray(trans, dtype=np.float64)
