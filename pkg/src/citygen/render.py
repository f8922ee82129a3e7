"""Deterministic ground-truth renderer.

Painter's algorithm over a flat world: procedural-textured ground plane,
vegetation discs, lane paint (exactly the rasterized lane channels), shaded
box faces far-to-near, sky gradient where rays miss the ground.  Everything
except the sky is modulated by the style's ambient-light scalar, so the color
of any pixel can be predicted in closed form from the style parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import raster
from .geometry import CameraRig
from .rng import Rng, derive_seed
from .scene import BOX_FACES, SceneGraph, box_corners

VEHICLE_RGB = np.array([0.28, 0.30, 0.36])
PEDESTRIAN_RGB = np.array([0.58, 0.26, 0.20])
VEGETATION_RGB = np.array([0.16, 0.38, 0.18])
LIGHT_DIR = np.array([0.35, -0.45, 0.82]) / np.linalg.norm([0.35, -0.45, 0.82])
TEXTURE_AMP = 0.35


@dataclass(frozen=True)
class CityStyleParams:
    """Appearance knobs for one rendered frame set; channels all in [0, 1]."""

    ground_rgb: tuple[float, float, float]
    lane_rgb: tuple[float, float, float]
    sky_top: tuple[float, float, float]
    sky_bottom: tuple[float, float, float]
    texture_freq: float  # cycles per meter
    ambient: float
    vegetation: float

    def __post_init__(self):
        for name in ("ground_rgb", "lane_rgb", "sky_top", "sky_bottom"):
            vals = getattr(self, name)
            if min(vals) < 0 or max(vals) > 1:
                raise ValueError(f"{name} channels must lie in [0, 1], got {vals}")
        if not (0 <= self.ambient <= 1) or not (0 <= self.vegetation <= 1):
            raise ValueError("ambient and vegetation must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "ground_rgb": list(self.ground_rgb),
            "lane_rgb": list(self.lane_rgb),
            "sky_top": list(self.sky_top),
            "sky_bottom": list(self.sky_bottom),
            "texture_freq": self.texture_freq,
            "ambient": self.ambient,
            "vegetation": self.vegetation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CityStyleParams":
        return cls(
            tuple(d["ground_rgb"]),
            tuple(d["lane_rgb"]),
            tuple(d["sky_top"]),
            tuple(d["sky_bottom"]),
            float(d["texture_freq"]),
            float(d["ambient"]),
            float(d["vegetation"]),
        )


@dataclass
class FrameSet:
    images: np.ndarray  # (V, 3, H, W) in [0, 1]
    scene: SceneGraph
    style: CityStyleParams


def _uniform_triple(lo, hi, rng: Rng) -> tuple[float, float, float]:
    return tuple(float(lo[i] + rng.uniform() * (hi[i] - lo[i])) for i in range(3))


def sample_style_params(ranges, rng: Rng) -> CityStyleParams:
    """Draw one frame-set style from a city's (lo, hi) range config."""
    return CityStyleParams(
        ground_rgb=_uniform_triple(ranges.ground_rgb_lo, ranges.ground_rgb_hi, rng),
        lane_rgb=_uniform_triple(ranges.lane_rgb_lo, ranges.lane_rgb_hi, rng),
        sky_top=_uniform_triple(ranges.sky_top_lo, ranges.sky_top_hi, rng),
        sky_bottom=_uniform_triple(ranges.sky_bottom_lo, ranges.sky_bottom_hi, rng),
        texture_freq=float(ranges.texture_freq[0] + rng.uniform() * (ranges.texture_freq[1] - ranges.texture_freq[0])),
        ambient=float(ranges.ambient[0] + rng.uniform() * (ranges.ambient[1] - ranges.ambient[0])),
        vegetation=float(ranges.vegetation[0] + rng.uniform() * (ranges.vegetation[1] - ranges.vegetation[0])),
    )


def ground_texture(x: np.ndarray, y: np.ndarray, freq: float, phases: tuple[float, float]) -> np.ndarray:
    """Multiplicative texture in [1 - AMP, 1]; seeded via the two phases."""
    s = np.sin(2.0 * math.pi * freq * x + phases[0]) * np.sin(2.0 * math.pi * freq * y + phases[1])
    return 1.0 - TEXTURE_AMP + TEXTURE_AMP * (0.5 + 0.5 * s)


def _vegetation_discs(seed: int, density: float, half_extent: float, max_count: int = 40):
    rng = Rng(derive_seed(seed, "vegetation"))
    count = int(round(density * max_count))
    discs = []
    for _ in range(count):
        x = (rng.uniform() * 2.0 - 1.0) * half_extent
        y = (rng.uniform() * 2.0 - 1.0) * half_extent
        r = 0.5 + rng.uniform() * 1.2
        discs.append((x, y, r))
    return discs


def render_views(sg: SceneGraph, rig: CameraRig, style: CityStyleParams, seed: int,
                 half_extent: float = 50.0, thickness: int = 1) -> FrameSet:
    """Raster all rig views of a scene under one style; bitwise deterministic."""
    h, w = rig.image_size
    phases = (
        Rng(derive_seed(seed, "texture", 0)).uniform() * 2.0 * math.pi,
        Rng(derive_seed(seed, "texture", 1)).uniform() * 2.0 * math.pi,
    )
    discs = _vegetation_discs(seed, style.vegetation, half_extent)
    struct = raster.build_structural_map(sg, rig, thickness=thickness)
    images = np.zeros((rig.n_views, 3, h, w))
    ground = np.asarray(style.ground_rgb)
    lane = np.asarray(style.lane_rgb)
    sky_t = np.asarray(style.sky_top)
    sky_b = np.asarray(style.sky_bottom)

    for v, (intr, extr) in enumerate(rig.cameras):
        cam_center = extr.camera_center()
        us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        dirs_cam = np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1)
        dirs_world = dirs_cam @ extr.rotation  # == (R^T @ d) per pixel
        dz = dirs_world[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = np.where(dz < 0, -cam_center[2] / dz, np.inf)
        ground_ok = (t_hit >= rig.near) & np.isfinite(t_hit)
        gx = cam_center[0] + t_hit * dirs_world[..., 0]
        gy = cam_center[1] + t_hit * dirs_world[..., 1]

        img = np.zeros((h, w, 3))
        # sky
        frac = (vs / max(h - 1, 1))[..., None]
        img[:] = sky_t * (1.0 - frac) + sky_b * frac
        # ground with procedural texture
        tex = ground_texture(np.where(ground_ok, gx, 0.0), np.where(ground_ok, gy, 0.0), style.texture_freq, phases)
        ground_col = ground[None, None, :] * tex[..., None] * style.ambient
        img = np.where(ground_ok[..., None], ground_col, img)
        # vegetation discs recolor ground
        for dx, dy, r in discs:
            hit = ground_ok & ((gx - dx) ** 2 + (gy - dy) ** 2 <= r * r)
            img[hit] = VEGETATION_RGB * style.ambient
        # lane paint: exactly the structural lane channels, on ground pixels
        lane_mask = (np.maximum(struct[v, raster.CHANNEL_BOUNDARY], struct[v, raster.CHANNEL_CENTERLINE]) > 0) & ground_ok
        img[lane_mask] = lane * style.ambient
        # boxes far to near
        order = sorted(
            range(len(sg.boxes)),
            key=lambda i: -float(np.linalg.norm(np.asarray(sg.boxes[i].center) - cam_center)),
        )
        for bi in order:
            box = sg.boxes[bi]
            base = VEHICLE_RGB if box.cls == "vehicle" else PEDESTRIAN_RGB
            corners = box_corners(box)
            box_center = np.asarray(box.center)
            for face in BOX_FACES:
                pts3 = corners[list(face)]
                fc = pts3.mean(axis=0)
                n = np.cross(pts3[1] - pts3[0], pts3[3] - pts3[0])
                nn = np.linalg.norm(n)
                if nn == 0:
                    continue
                n /= nn
                if n @ (fc - box_center) < 0:
                    n = -n
                if n @ (fc - cam_center) >= 0:
                    continue  # facing away
                cam_pts = pts3 @ extr.rotation.T + extr.translation
                uvs = []
                for i in range(4):
                    a, b = cam_pts[i], cam_pts[(i + 1) % 4]
                    za, zb = a[2], b[2]
                    if za <= rig.near and zb <= rig.near:
                        continue
                    if za <= rig.near or zb <= rig.near:
                        s = (rig.near - za) / (zb - za)
                        cpt = a + s * (b - a)
                        cpt[2] = rig.near
                        if za <= rig.near:
                            a = cpt
                        else:
                            b = cpt
                    for p in (a, b):
                        uvs.append((intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy))
                if len(uvs) < 3:
                    continue
                fill = raster.fill_convex(np.array(uvs), h, w) > 0
                shade = (0.45 + 0.55 * max(0.0, float(n @ LIGHT_DIR))) * style.ambient
                img[fill] = base * shade
        images[v] = img.transpose(2, 0, 1)
    return FrameSet(images=np.clip(images, 0.0, 1.0), scene=sg, style=style)
