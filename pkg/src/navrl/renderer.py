"""Column raycaster producing aligned RGB, depth, and segmentation planes.

One ray per pixel column is traced through the cell grid (DDA) and against
every slab object; vertical spans are the perspective projection of the
full-height surfaces, camera tilt shears the horizon. All planes are painted
from the same hit records, so RGB, depth, and segmentation are aligned pixel
for pixel by construction. Depth is the Euclidean 3-D distance to the hit
point, in meters.
"""
from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass

import numpy as np

from .world import (
    CLASS_CEILING,
    CLASS_FLOOR,
    CLASS_WALL,
    FLOOR,
    MazeLayout,
    Pose,
)


@dataclass(frozen=True)
class RenderSettings:
    frame_hw: int = 84
    fov_deg: float = 90.0
    wall_height: float = 1.0
    camera_height: float = 0.5
    fog_strength: float = 0.12     # RGB brightness falls off as 1/(1 + fog*depth)
    y_side_shade: float = 0.8      # walls crossed on a y gridline are darker


@dataclass
class Observation:
    """Aligned planes plus the episode's target views. rgb/seg in [0,1]."""

    rgb: np.ndarray         # (H, W, 3) float32
    depth: np.ndarray       # (H, W) float32, meters
    seg: np.ndarray         # (H, W, 3) float32, exact palette colors
    target_rgb: np.ndarray  # (H, W, 3) float32
    target_seg: np.ndarray  # (H, W, 3) float32


@dataclass
class Frames:
    rgb: np.ndarray
    depth: np.ndarray
    seg: np.ndarray
    class_map: np.ndarray   # (H, W) int32 segmentation class per pixel


@dataclass(frozen=True)
class Palette:
    colors: np.ndarray  # (n, 3) float32 in [0, 1]

    def __len__(self) -> int:
        return len(self.colors)

    def to_json(self) -> str:
        return json.dumps({"colors": [[float(c) for c in row] for row in self.colors]})


def class_palette(n_classes: int) -> Palette:
    """Palette with hues equally spaced on the HSV circle, full S and V."""
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    colors = np.array(
        [colorsys.hsv_to_rgb(i / n_classes, 1.0, 1.0) for i in range(n_classes)],
        dtype=np.float32,
    )
    if len({tuple(c) for c in colors.tolist()}) != n_classes:
        raise ValueError(f"palette entries not distinct for n_classes={n_classes}")
    return Palette(colors)


def max_ray_length(layout: MazeLayout, settings: RenderSettings) -> float:
    """Upper bound on any rendered 3-D depth; used to normalize depth targets."""
    w, h = layout.extent
    return math.hypot(math.hypot(w, h), settings.wall_height)


def _face_tint(seed: int, ci: np.ndarray, cj: np.ndarray, axis: np.ndarray, side: np.ndarray) -> np.ndarray:
    """Deterministic per-wall-face brightness in [0.6, 1.0] (splitmix-style hash)."""
    x = (
        np.uint64(seed & 0xFFFFFFFF)
        ^ (ci.astype(np.uint64) << np.uint64(40))
        ^ (cj.astype(np.uint64) << np.uint64(20))
        ^ (axis.astype(np.uint64) << np.uint64(10))
        ^ side.astype(np.uint64)
    )
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    x = x ^ (x >> np.uint64(31))
    h01 = (x >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return (0.6 + 0.4 * h01).astype(np.float32)


def _raycast_walls(layout: MazeLayout, px: float, py: float, dirx: np.ndarray, diry: np.ndarray):
    """Vectorized DDA over all columns. Returns (t, axis, cell_i, cell_j, side).

    t is in forward-advance units (dir is unnormalized with dir.f == 1); axis
    is 0 when the hit crossed an x1 gridline, 1 for x2; side is the step sign
    (0/1) on that axis; out-of-grid cells count as wall so every ray hits.
    """
    cs = layout.cell_size
    rows, cols = layout.rows, layout.cols
    n = dirx.shape[0]
    ci = np.full(n, int(math.floor(py / cs)), dtype=np.int64)
    cj = np.full(n, int(math.floor(px / cs)), dtype=np.int64)
    with np.errstate(divide="ignore"):
        inv_x = np.where(dirx != 0, 1.0 / dirx, np.inf)
        inv_y = np.where(diry != 0, 1.0 / diry, np.inf)
    step_j = np.where(dirx > 0, 1, -1).astype(np.int64)
    step_i = np.where(diry > 0, 1, -1).astype(np.int64)
    next_x = (cj + (step_j > 0)) * cs
    next_y = (ci + (step_i > 0)) * cs
    tmax_x = np.abs((next_x - px) * inv_x)
    tmax_y = np.abs((next_y - py) * inv_y)
    tdelta_x = np.abs(cs * inv_x)
    tdelta_y = np.abs(cs * inv_y)

    t_hit = np.zeros(n)
    axis = np.zeros(n, dtype=np.int64)
    side = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for _ in range(rows + cols + 4):
        if not alive.any():
            break
        take_x = alive & (tmax_x <= tmax_y)
        take_y = alive & ~take_x
        t_hit = np.where(take_x, tmax_x, t_hit)
        t_hit = np.where(take_y, tmax_y, t_hit)
        axis = np.where(take_x, 0, axis)
        axis = np.where(take_y, 1, axis)
        side = np.where(take_x, (step_j > 0).astype(np.int64), side)
        side = np.where(take_y, (step_i > 0).astype(np.int64), side)
        cj = cj + np.where(take_x, step_j, 0)
        ci = ci + np.where(take_y, step_i, 0)
        tmax_x = tmax_x + np.where(take_x, tdelta_x, 0.0)
        tmax_y = tmax_y + np.where(take_y, tdelta_y, 0.0)
        outside = (ci < 0) | (ci >= rows) | (cj < 0) | (cj >= cols)
        wall = np.zeros(n, dtype=bool)
        inb = ~outside
        if inb.any():
            wall[inb] = layout.cell_grid[ci[inb], cj[inb]] != FLOOR
        hit = alive & (outside | wall)
        alive = alive & ~hit
    return t_hit, axis, ci, cj, side


def _span_mask(slope: np.ndarray, t: np.ndarray, valid: np.ndarray,
               camera_height: float, wall_height: float) -> np.ndarray:
    """(H, W) mask of pixels whose ray meets a full-height surface at advance t."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = -camera_height / t
        hi = (wall_height - camera_height) / t
    s = slope[:, None]
    return valid[None, :] & (s >= lo[None, :]) & (s <= hi[None, :])


def render_planes(layout: MazeLayout, pose: Pose, settings: RenderSettings,
                  palette: Palette = None) -> Frames:
    """Render RGB, depth, segmentation, and the per-pixel class map at a pose.

    Pure function of its arguments: repeated calls are bit-identical.
    """
    if palette is None:
        palette = class_palette(layout.n_classes)
    hw = settings.frame_hw
    H = W = hw
    proj = (W / 2.0) / math.tan(math.radians(settings.fov_deg) / 2.0)
    th = math.radians(pose.theta)
    fx, fy = math.cos(th), math.sin(th)
    rx, ry = fy, -fx  # screen-right in world coords

    u = ((np.arange(W) + 0.5) - W / 2.0) / proj
    dirx = fx + u * rx
    diry = fy + u * ry

    v = (H / 2.0 - np.arange(H) - 0.5) / proj
    slope = v + math.tan(math.radians(pose.sigma))
    norm = np.sqrt(1.0 + u[None, :] ** 2 + slope[:, None] ** 2)

    hc = settings.camera_height
    zw = settings.wall_height

    # base layer: floor below the horizon, ceiling above
    with np.errstate(divide="ignore"):
        t_plane = np.where(slope < 0, -hc / slope, np.where(slope > 0, (zw - hc) / slope, np.inf))
    t_surf = np.broadcast_to(t_plane[:, None], (H, W)).copy()
    class_map = np.where(slope < 0, CLASS_FLOOR, CLASS_CEILING).astype(np.int32)
    class_map = np.broadcast_to(class_map[:, None], (H, W)).copy()
    shade = np.ones((H, W), dtype=np.float32)

    # walls
    t_wall, axis, ci, cj, side = _raycast_walls(layout, pose.x1, pose.x2, dirx, diry)
    wall_mask = _span_mask(slope, t_wall, np.ones(W, dtype=bool), hc, zw)
    t_surf = np.where(wall_mask, t_wall[None, :], t_surf)
    class_map = np.where(wall_mask, CLASS_WALL, class_map)
    wall_shade = np.where(axis == 1, settings.y_side_shade, 1.0).astype(np.float32)
    wall_shade = wall_shade * _face_tint(layout.seed, ci, cj, axis, side)
    shade = np.where(wall_mask, wall_shade[None, :], shade)

    # slab objects, z-buffered against whatever is painted already
    for obj in layout.objects:
        t_obj, o_axis = _slab_entry(pose.x1, pose.x2, dirx, diry, obj.footprint)
        valid = np.isfinite(t_obj) & (t_obj > 1e-9)
        if not valid.any():
            continue
        mask = _span_mask(slope, t_obj, valid, hc, zw) & (t_obj[None, :] < t_surf)
        if not mask.any():
            continue
        t_surf = np.where(mask, t_obj[None, :], t_surf)
        class_map = np.where(mask, obj.class_id, class_map)
        obj_shade = np.where(o_axis == 1, settings.y_side_shade, 1.0).astype(np.float32)
        shade = np.where(mask, obj_shade[None, :], shade)

    max_ray = max_ray_length(layout, settings)
    depth = np.minimum(t_surf * norm, max_ray).astype(np.float32)

    seg = palette.colors[class_map]
    fog = (1.0 / (1.0 + settings.fog_strength * depth)).astype(np.float32)
    rgb = np.clip(seg * (shade * fog)[:, :, None], 0.0, 1.0).astype(np.float32)
    return Frames(rgb=rgb, depth=depth, seg=seg.astype(np.float32), class_map=class_map)


def _slab_entry(px, py, dirx, diry, box):
    """Vectorized segment/AABB entry over columns: (t_entry, entry_axis)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        tx1 = (box[0] - px) / dirx
        tx2 = (box[2] - px) / dirx
        ty1 = (box[1] - py) / diry
        ty2 = (box[3] - py) / diry
    tx_lo = np.minimum(tx1, tx2)
    tx_hi = np.maximum(tx1, tx2)
    ty_lo = np.minimum(ty1, ty2)
    ty_hi = np.maximum(ty1, ty2)
    # rays parallel to an axis never cross that slab pair
    parallel_x = dirx == 0
    parallel_y = diry == 0
    inside_x = (px >= box[0]) & (px <= box[2])
    inside_y = (py >= box[1]) & (py <= box[3])
    tx_lo = np.where(parallel_x, np.where(inside_x, -np.inf, np.inf), tx_lo)
    tx_hi = np.where(parallel_x, np.where(inside_x, np.inf, -np.inf), tx_hi)
    ty_lo = np.where(parallel_y, np.where(inside_y, -np.inf, np.inf), ty_lo)
    ty_hi = np.where(parallel_y, np.where(inside_y, np.inf, -np.inf), ty_hi)
    t_enter = np.maximum(tx_lo, ty_lo)
    t_exit = np.minimum(tx_hi, ty_hi)
    axis = (ty_lo > tx_lo).astype(np.int64)  # 1 when the y slab decides entry
    t = np.where((t_enter < t_exit) & (t_exit > 0), t_enter, np.inf)
    return t, axis


# ---------------------------------------------------------------------------
# plane utilities
# ---------------------------------------------------------------------------

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luminance with the fixed 0.299/0.587/0.114 weights."""
    return rgb @ GRAY_WEIGHTS


def downsample(plane: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean pooling by factor x factor, per channel."""
    h, w = plane.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"plane dims {h}x{w} not divisible by factor {factor}")
    nh, nw = h // factor, w // factor
    if plane.ndim == 2:
        return plane.reshape(nh, factor, nw, factor).mean(axis=(1, 3))
    return plane.reshape(nh, factor, nw, factor, plane.shape[2]).mean(axis=(1, 3))


def export_png(plane: np.ndarray, path: str) -> None:
    """Write a plane as 8-bit PNG (depth planes are max-normalized first)."""
    from PIL import Image

    arr = plane
    if arr.ndim == 2:
        m = float(arr.max()) if arr.size and arr.max() > 0 else 1.0
        arr = arr / m
    img = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path)
