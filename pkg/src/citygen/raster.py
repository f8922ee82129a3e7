"""Rasterization of projected primitives into per-view mask channels.

Pixel (i, j) owns the cell [j - 0.5, j + 0.5) x [i - 0.5, i + 0.5) around its
center; line rasterization is a grid-traversal DDA that marks every cell the
continuous segment passes through, so the pixel set matches dense parametric
sampling of the same segment.  Convex fills set every pixel whose center lies
inside or on the hull.
"""

from __future__ import annotations

import math

import numpy as np

from . import geometry, scene

CHANNEL_BOUNDARY = 0
CHANNEL_CENTERLINE = 1
CHANNEL_BOX = 2
N_CHANNELS = 3


def _cell(x: float) -> int:
    return int(math.floor(x + 0.5))


def traverse_cells(x0: float, y0: float, x1: float, y1: float):
    """All grid cells crossed by the segment, in order (grid-traversal DDA)."""
    ix, iy = _cell(x0), _cell(y0)
    ex, ey = _cell(x1), _cell(y1)
    dx, dy = x1 - x0, y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    t_max_x = ((ix + 0.5 * step_x) - x0) / dx if dx != 0 else math.inf
    t_max_y = ((iy + 0.5 * step_y) - y0) / dy if dy != 0 else math.inf
    t_dx = abs(1.0 / dx) if dx != 0 else math.inf
    t_dy = abs(1.0 / dy) if dy != 0 else math.inf
    cells = [(ix, iy)]
    guard = abs(ex - ix) + abs(ey - iy) + 4
    while (ix, iy) != (ex, ey) and guard > 0:
        if t_max_x < t_max_y:
            ix += step_x
            t_max_x += t_dx
        else:
            iy += step_y
            t_max_y += t_dy
        cells.append((ix, iy))
        guard -= 1
    return cells


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask
    out = mask.copy()
    h, w = mask.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            ys = slice(max(0, dy), h + min(0, dy))
            xs = slice(max(0, dx), w + min(0, dx))
            ys_src = slice(max(0, -dy), h + min(0, -dy))
            xs_src = slice(max(0, -dx), w + min(0, -dx))
            out[ys, xs] = np.maximum(out[ys, xs], mask[ys_src, xs_src])
    return out


def rasterize_segments(segments, h: int, w: int, thickness: int = 1) -> np.ndarray:
    """Binary (h, w) mask of 2-D pixel segments; see module docstring for cells."""
    if thickness < 1:
        raise ValueError(f"thickness must be >= 1, got {thickness}")
    mask = np.zeros((h, w), dtype=np.float64)
    for (u0, v0), (u1, v1) in segments:
        for cx, cy in traverse_cells(u0, v0, u1, v1):
            if 0 <= cx < w and 0 <= cy < h:
                mask[cy, cx] = 1.0
    return dilate_mask(mask, thickness // 2)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices counter-clockwise."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross2(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2 and cross2(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def fill_convex(points, h: int, w: int) -> np.ndarray:
    """Mask of pixel centers inside or on the convex hull of ``points``."""
    mask = np.zeros((h, w), dtype=np.float64)
    hull = convex_hull(np.asarray(points, dtype=np.float64))
    if len(hull) < 3:
        return mask
    ys = hull[:, 1]
    v_lo = max(0, int(math.ceil(ys.min())))
    v_hi = min(h - 1, int(math.floor(ys.max())))
    n = len(hull)
    for v in range(v_lo, v_hi + 1):
        xs = []
        for i in range(n):
            p, q = hull[i], hull[(i + 1) % n]
            py, qy = p[1], q[1]
            if py == qy:
                if py == v:
                    xs.extend([p[0], q[0]])
                continue
            if min(py, qy) <= v <= max(py, qy):
                xs.append(p[0] + (v - py) * (q[0] - p[0]) / (qy - py))
        if not xs:
            continue
        u_lo = max(0, int(math.ceil(min(xs))))
        u_hi = min(w - 1, int(math.floor(max(xs))))
        if u_lo <= u_hi:
            mask[v, u_lo : u_hi + 1] = 1.0
    return mask


def project_box_hull_points(box: scene.Box3D, intr, extr, near: float):
    """Projected 2-D points of the box's twelve near-plane-clipped edges."""
    corners = scene.box_corners(box)
    cam = corners @ extr.rotation.T + extr.translation
    pts = []
    for a_i, b_i in scene.BOX_EDGES:
        a, b = cam[a_i], cam[b_i]
        za, zb = a[2], b[2]
        if za <= near and zb <= near:
            continue
        if za <= near or zb <= near:
            s = (near - za) / (zb - za)
            crossing = a + s * (b - a)
            crossing[2] = near
            if za <= near:
                a = crossing
            else:
                b = crossing
        for p in (a, b):
            pts.append((intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy))
    return np.array(pts) if pts else np.zeros((0, 2))


def project_box_silhouette(box: scene.Box3D, intr, extr, h: int, w: int, near: float = geometry.DEFAULT_NEAR) -> np.ndarray:
    """Filled convex hull of the projected box; all-zero if fully behind."""
    pts = project_box_hull_points(box, intr, extr, near)
    if len(pts) < 3:
        return np.zeros((h, w), dtype=np.float64)
    return fill_convex(pts, h, w)


def build_structural_map(sg: scene.SceneGraph, rig: geometry.CameraRig, thickness: int = 1) -> np.ndarray:
    """(V, 3, H, W) binary tensor: lane boundaries, centerlines, box silhouettes."""
    h, w = rig.image_size
    out = np.zeros((rig.n_views, N_CHANNELS, h, w), dtype=np.float64)
    for v, (intr, extr) in enumerate(rig.cameras):
        for channel, polys in ((CHANNEL_BOUNDARY, sg.lane_boundaries), (CHANNEL_CENTERLINE, sg.lane_centerlines)):
            segs = []
            for poly in polys:
                segs.extend(geometry.clip_project_polyline(poly, intr, extr, rig.near))
            out[v, channel] = rasterize_segments(segs, h, w, thickness)
        for box in sg.boxes:
            out[v, CHANNEL_BOX] = np.maximum(
                out[v, CHANNEL_BOX], project_box_silhouette(box, intr, extr, h, w, rig.near)
            )
    return out
