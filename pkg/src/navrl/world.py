"""Continuous-pose maze world with discrete actions and a sparse goal reward.

The world is a rectangular grid of floor/wall cells; everything outside the
grid counts as solid wall. Each navigation target is marked by a full-height
colored beacon slab placed in its cell, and optional decorative slabs serve
as visual landmarks. The agent is a disc of fixed radius moving in continuous
(x1, x2) coordinates with a heading and a camera tilt.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

WALL = 0
FLOOR = 1

# segmentation class ids shared with the renderer
CLASS_WALL = 0
CLASS_FLOOR = 1
CLASS_CEILING = 2
N_RESERVED_CLASSES = 3

AGENT_RADIUS = 0.15
TILT_LIMIT = 60.0

# slab obstacles are square boxes of this half-extent (in units of cell_size)
OBJECT_HALF_EXTENT = 0.15

LAYOUT_FORMAT_VERSION = 1


class MazeGenerationError(ValueError):
    """Raised when a generation spec cannot be satisfied."""


class PoseCollisionError(ValueError):
    """Raised when a requested pose intersects a wall or object."""


class EpisodeFinishedError(RuntimeError):
    """Raised when step() is called after the episode terminated."""


class Action(Enum):
    FORWARD = 0
    BACKWARD = 1
    LEFT = 2
    RIGHT = 3
    ROTATE_LEFT = 4
    ROTATE_RIGHT = 5
    TILT_UP = 6
    TILT_DOWN = 7


ALL_ACTIONS = tuple(Action)

# 6-action set used by most experiments (no camera tilt)
PLANAR_ACTIONS = (
    Action.FORWARD,
    Action.BACKWARD,
    Action.LEFT,
    Action.RIGHT,
    Action.ROTATE_LEFT,
    Action.ROTATE_RIGHT,
)


@dataclass(frozen=True)
class Pose:
    """Agent state: planar position (meters), heading and camera tilt (degrees).

    Heading is normalized to [0, 360); tilt is clamped to [-60, 60].
    """

    x1: float
    x2: float
    theta: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.theta) % 360.0)
        object.__setattr__(self, "sigma", min(TILT_LIMIT, max(-TILT_LIMIT, float(self.sigma))))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x1, self.x2)


def _xy(p) -> tuple[float, float]:
    if isinstance(p, Pose):
        return (p.x1, p.x2)
    return (float(p[0]), float(p[1]))


def dist(s1, s2) -> float:
    """Euclidean distance between the planar positions of two states.

    Accepts Pose instances or (x1, x2) pairs.
    """
    a = _xy(s1)
    b = _xy(s2)
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True)
class TargetSpec:
    target_id: int
    pose: Pose                     # viewpoint the target image is rendered from
    position: tuple[float, float]  # position the reach test is measured against
    reach_radius: float = 1.0

    def __post_init__(self):
        if self.reach_radius <= 0:
            raise ValueError("reach_radius must be positive")


@dataclass(frozen=True)
class WorldObject:
    """Full-height slab obstacle with an axis-aligned footprint."""

    object_id: int
    class_id: int
    footprint: tuple[float, float, float, float]  # (x1min, x2min, x1max, x2max)
    position: tuple[float, float]


@dataclass(frozen=True)
class GenerationSpec:
    rows: int
    cols: int
    style: str = "maze"  # "maze" (carved corridors) or "open" (all floor)
    cell_size: float = 1.0
    n_targets: int = 1
    n_decor: int = 0
    reach_radius: float = 1.0

    def __post_init__(self):
        if self.style not in ("maze", "open"):
            raise MazeGenerationError(f"unknown layout style {self.style!r}")

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "style": self.style,
            "cell_size": self.cell_size,
            "n_targets": self.n_targets,
            "n_decor": self.n_decor,
            "reach_radius": self.reach_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationSpec":
        return cls(**d)


@dataclass
class MazeLayout:
    seed: int
    spec: GenerationSpec
    cell_grid: np.ndarray  # (rows, cols) uint8, FLOOR/WALL
    cell_size: float
    objects: tuple[WorldObject, ...]
    targets: tuple[TargetSpec, ...]
    start_region: frozenset  # (row, col) floor cells valid for start sampling
    # precomputed for curriculum sampling
    start_cells: tuple = ()                      # sorted tuple of start cells
    start_cell_target_dist: np.ndarray = None    # min distance cell center -> any target
    max_start_target_dist: float = 0.0

    @property
    def rows(self) -> int:
        return self.cell_grid.shape[0]

    @property
    def cols(self) -> int:
        return self.cell_grid.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        """World size (x1_max, x2_max) in meters."""
        return (self.cols * self.cell_size, self.rows * self.cell_size)

    @property
    def n_classes(self) -> int:
        return N_RESERVED_CLASSES + len(self.objects)

    def cell_of(self, x1: float, x2: float) -> tuple[int, int]:
        return (int(math.floor(x2 / self.cell_size)), int(math.floor(x1 / self.cell_size)))

    def cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        i, j = cell
        return ((j + 0.5) * self.cell_size, (i + 0.5) * self.cell_size)

    def is_floor(self, i: int, j: int) -> bool:
        if i < 0 or j < 0 or i >= self.rows or j >= self.cols:
            return False
        return self.cell_grid[i, j] == FLOOR


def _carve_maze(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Recursive-backtracker corridor maze on the odd sub-lattice.

    Rooms live at odd (i, j) indices; walls in between are knocked out as the
    DFS advances, so all floor cells end up in one connected component. Even
    trailing rows/cols stay wall.
    """
    grid = np.zeros((rows, cols), dtype=np.uint8)
    room_rows = (rows - 1) // 2
    room_cols = (cols - 1) // 2
    if room_rows < 1 or room_cols < 1:
        raise MazeGenerationError("maze style needs at least 3x3 cells")
    visited = np.zeros((room_rows, room_cols), dtype=bool)
    stack = [(0, 0)]
    visited[0, 0] = True
    grid[1, 1] = FLOOR
    while stack:
        ri, rj = stack[-1]
        neighbors = []
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ni, nj = ri + di, rj + dj
            if 0 <= ni < room_rows and 0 <= nj < room_cols and not visited[ni, nj]:
                neighbors.append((ni, nj))
        if not neighbors:
            stack.pop()
            continue
        ni, nj = neighbors[rng.integers(len(neighbors))]
        visited[ni, nj] = True
        # knock out the wall between the two rooms
        wi = 1 + ri + ni
        wj = 1 + rj + nj
        grid[wi, wj] = FLOOR
        grid[1 + 2 * ni, 1 + 2 * nj] = FLOOR
        stack.append((ni, nj))
    return grid


def flood_fill_reachable(grid: np.ndarray, start: tuple[int, int]) -> set:
    """4-connected floor component containing `start` (BFS)."""
    rows, cols = grid.shape
    seen = {start}
    frontier = [start]
    while frontier:
        i, j = frontier.pop()
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < rows and 0 <= nj < cols and grid[ni, nj] == FLOOR and (ni, nj) not in seen:
                seen.add((ni, nj))
                frontier.append((ni, nj))
    return seen


def _wall_edges(grid: np.ndarray, cell: tuple[int, int]) -> list:
    """Sides of `cell` adjacent to wall (or out of bounds), as (di, dj) offsets."""
    rows, cols = grid.shape
    i, j = cell
    edges = []
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ni, nj = i + di, j + dj
        if ni < 0 or nj < 0 or ni >= rows or nj >= cols or grid[ni, nj] == WALL:
            edges.append((di, dj))
    return edges


def _place_slab(cell: tuple[int, int], edge, cs: float) -> tuple[tuple, tuple]:
    """Footprint and center for a slab in `cell`, hugging `edge` if given."""
    i, j = cell
    cx = (j + 0.5) * cs
    cy = (i + 0.5) * cs
    h = OBJECT_HALF_EXTENT * cs
    if edge is not None:
        di, dj = edge
        # pull the slab center onto the chosen wall side, inset by its half-extent
        cx += dj * (0.5 * cs - h)
        cy += di * (0.5 * cs - h)
    footprint = (cx - h, cy - h, cx + h, cy + h)
    return footprint, (cx, cy)


def generate_maze(seed: int, spec: GenerationSpec) -> MazeLayout:
    """Deterministically generate a layout from (seed, spec).

    Raises MazeGenerationError when the spec is infeasible (too small, or not
    enough distinct floor cells for the requested targets and decorations).
    """
    if spec.rows < 3 or spec.cols < 3:
        raise MazeGenerationError("grid must be at least 3x3")
    if spec.n_targets < 1:
        raise MazeGenerationError("at least one target is required")
    rng = np.random.default_rng(seed)
    cs = spec.cell_size

    if spec.style == "open":
        grid = np.full((spec.rows, spec.cols), FLOOR, dtype=np.uint8)
    else:
        grid = _carve_maze(spec.rows, spec.cols, rng)

    floor_cells = sorted(map(tuple, np.argwhere(grid == FLOOR)))
    if not floor_cells:
        raise MazeGenerationError("no floor cells")
    reachable = flood_fill_reachable(grid, floor_cells[0])
    if len(reachable) != len(floor_cells):
        raise MazeGenerationError("generated floor is not connected")

    n_special = spec.n_targets + spec.n_decor
    if n_special > len(floor_cells):
        raise MazeGenerationError(
            f"cannot place {n_special} targets+decorations on {len(floor_cells)} floor cells"
        )

    picked = rng.choice(len(floor_cells), size=n_special, replace=False)
    special_cells = [floor_cells[int(k)] for k in picked]
    target_cells = special_cells[: spec.n_targets]
    decor_cells = special_cells[spec.n_targets:]

    objects = []
    targets = []
    for t_idx, cell in enumerate(target_cells):
        edges = _wall_edges(grid, cell)
        edge = edges[rng.integers(len(edges))] if edges else None
        footprint, obj_pos = _place_slab(cell, edge, cs)
        class_id = N_RESERVED_CLASSES + len(objects)
        objects.append(WorldObject(len(objects), class_id, footprint, obj_pos))
        center = ((cell[1] + 0.5) * cs, (cell[0] + 0.5) * cs)
        if edge is not None:
            view_pos = center
        else:
            # beacon sits at the cell center: view it from a free neighbor side
            free = [(di, dj) for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1))
                    if grid[cell[0] + di, cell[1] + dj] == FLOOR] if not edges else []
            di, dj = free[rng.integers(len(free))] if free else (0, 1)
            off = 0.5 * cs
            view_pos = (center[0] + dj * off, center[1] + di * off)
        heading = math.degrees(math.atan2(obj_pos[1] - view_pos[1], obj_pos[0] - view_pos[0]))
        targets.append(TargetSpec(t_idx, Pose(view_pos[0], view_pos[1], heading, 0.0),
                                  center, spec.reach_radius))

    for cell in decor_cells:
        edges = _wall_edges(grid, cell)
        edge = edges[rng.integers(len(edges))] if edges else None
        footprint, obj_pos = _place_slab(cell, edge, cs)
        class_id = N_RESERVED_CLASSES + len(objects)
        objects.append(WorldObject(len(objects), class_id, footprint, obj_pos))

    occupied = set(target_cells) | set(decor_cells)
    start_cells = tuple(c for c in floor_cells if c not in occupied)
    if not start_cells:
        raise MazeGenerationError("no start cells left after object placement")

    centers = np.array([((j + 0.5) * cs, (i + 0.5) * cs) for i, j in start_cells])
    tpos = np.array([t.position for t in targets])
    d = np.sqrt(((centers[:, None, :] - tpos[None, :, :]) ** 2).sum(-1)).min(axis=1)

    return MazeLayout(
        seed=seed,
        spec=spec,
        cell_grid=grid,
        cell_size=cs,
        objects=tuple(objects),
        targets=tuple(targets),
        start_region=frozenset(start_cells),
        start_cells=start_cells,
        start_cell_target_dist=d,
        max_start_target_dist=float(d.max()),
    )


def layout_to_json(layout: MazeLayout) -> str:
    """Serialize a layout as (seed, spec); regeneration is bit-identical."""
    return json.dumps(
        {"version": LAYOUT_FORMAT_VERSION, "seed": layout.seed, "spec": layout.spec.to_dict()},
        sort_keys=True,
    )


def layout_from_json(text: str) -> MazeLayout:
    d = json.loads(text)
    if d.get("version") != LAYOUT_FORMAT_VERSION:
        raise ValueError(f"unsupported layout format version {d.get('version')}")
    return generate_maze(int(d["seed"]), GenerationSpec.from_dict(d["spec"]))


# ---------------------------------------------------------------------------
# collision geometry: disc vs axis-aligned boxes
# ---------------------------------------------------------------------------

def _boxes_near(layout: MazeLayout, x1min, x2min, x1max, x2max) -> list:
    """Wall-cell and object boxes overlapping the query AABB.

    Cells outside the grid are treated as wall, so the boundary is solid.
    """
    cs = layout.cell_size
    rows, cols = layout.rows, layout.cols
    i0 = int(math.floor(x2min / cs)) - 1
    i1 = int(math.floor(x2max / cs)) + 1
    j0 = int(math.floor(x1min / cs)) - 1
    j1 = int(math.floor(x1max / cs)) + 1
    boxes = []
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            inside = 0 <= i < rows and 0 <= j < cols
            if inside and layout.cell_grid[i, j] == FLOOR:
                continue
            boxes.append((j * cs, i * cs, (j + 1) * cs, (i + 1) * cs))
    for obj in layout.objects:
        f = obj.footprint
        if f[2] >= x1min and f[0] <= x1max and f[3] >= x2min and f[1] <= x2max:
            boxes.append(f)
    return boxes


def _dist_to_box(px, py, box) -> float:
    dx = max(box[0] - px, 0.0, px - box[2])
    dy = max(box[1] - py, 0.0, py - box[3])
    return math.hypot(dx, dy)


def position_blocked(layout: MazeLayout, x1: float, x2: float, radius: float = AGENT_RADIUS) -> bool:
    """True when a disc at (x1, x2) intersects any wall or object."""
    boxes = _boxes_near(layout, x1 - radius, x2 - radius, x1 + radius, x2 + radius)
    return any(_dist_to_box(x1, x2, b) < radius for b in boxes)


def _segment_aabb_entry(px, py, dx, dy, box) -> float:
    """Entry parameter t in [0, 1] of p + t*d into the box, or inf."""
    tmin, tmax = 0.0, 1.0
    for p, d, lo, hi in ((px, dx, box[0], box[2]), (py, dy, box[1], box[3])):
        if abs(d) < 1e-300:
            if p < lo or p > hi:
                return math.inf
        else:
            t1 = (lo - p) / d
            t2 = (hi - p) / d
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return math.inf
    return tmin


def _segment_circle_entry(px, py, dx, dy, cx, cy, r) -> float:
    """Smallest t in [0, 1] with |p + t*d - c| = r, or inf."""
    fx, fy = px - cx, py - cy
    a = dx * dx + dy * dy
    if a < 1e-300:
        return math.inf
    b = 2.0 * (fx * dx + fy * dy)
    c = fx * fx + fy * fy - r * r
    disc = b * b - 4 * a * c
    if disc < 0:
        return math.inf
    sq = math.sqrt(disc)
    t = (-b - sq) / (2 * a)
    if 0.0 <= t <= 1.0:
        return t
    return math.inf


def _swept_disc_entry(px, py, dx, dy, box, radius) -> float:
    """Earliest contact of a disc swept along p + t*d with a box (Minkowski sum)."""
    r = radius
    t = _segment_aabb_entry(px, py, dx, dy, (box[0] - r, box[1], box[2] + r, box[3]))
    t = min(t, _segment_aabb_entry(px, py, dx, dy, (box[0], box[1] - r, box[2], box[3] + r)))
    for cx, cy in ((box[0], box[1]), (box[0], box[3]), (box[2], box[1]), (box[2], box[3])):
        t = min(t, _segment_circle_entry(px, py, dx, dy, cx, cy, r))
    return t


CONTACT_BACKOFF = 1e-4  # meters backed off along the path at contact


def resolve_move(layout: MazeLayout, p0: tuple, p1: tuple, radius: float = AGENT_RADIUS) -> tuple:
    """Move a disc from p0 toward p1, clipping at the first wall/object contact.

    p0 must be collision-free; the returned position always is. Orientation is
    untouched by collisions (handled by the caller).
    """
    dx = p1[0] - p0[0]
    dy = p1[1] - p0[1]
    seg_len = math.hypot(dx, dy)
    if seg_len < 1e-12:
        return p0
    lo_x, hi_x = sorted((p0[0], p1[0]))
    lo_y, hi_y = sorted((p0[1], p1[1]))
    pad = radius + 1e-6
    boxes = _boxes_near(layout, lo_x - pad, lo_y - pad, hi_x + pad, hi_y + pad)
    t_hit = math.inf
    for b in boxes:
        t_hit = min(t_hit, _swept_disc_entry(p0[0], p0[1], dx, dy, b, radius))
    if t_hit is math.inf or t_hit > 1.0:
        t = 1.0
    else:
        t = max(0.0, t_hit - CONTACT_BACKOFF / seg_len)
    pos = (p0[0] + t * dx, p0[1] + t * dy)
    # numerical safety net: retreat until the disc is free again
    tries = 0
    while position_blocked(layout, pos[0], pos[1], radius) and tries < 60:
        t *= 0.5
        if t * seg_len < 1e-9:
            return p0
        pos = (p0[0] + t * dx, p0[1] + t * dy)
        tries += 1
    if position_blocked(layout, pos[0], pos[1], radius):
        return p0
    return pos


# ---------------------------------------------------------------------------
# actuation noise
# ---------------------------------------------------------------------------

def apply_noise(
    pose: Pose,
    rng: np.random.Generator,
    position_std: float = 0.02,
    heading_std: float = 2.0,
    enabled: bool = True,
) -> Pose:
    """Gaussian actuation noise on position and heading; tilt is untouched.

    Draws exactly three normals (x1, x2, theta) when enabled, none otherwise.
    """
    if not enabled:
        return pose
    x1 = rng.normal(pose.x1, position_std)
    x2 = rng.normal(pose.x2, position_std)
    theta = rng.normal(pose.theta, heading_std)
    return Pose(x1, x2, theta, pose.sigma)


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

@dataclass
class EnvConfig:
    actions: tuple = ALL_ACTIONS
    forward_step: float = 0.5
    backward_step: float = 0.2
    strafe_step: float = 0.35
    rotate_step_deg: float = 30.0
    tilt_step_deg: float = 30.0
    agent_radius: float = AGENT_RADIUS
    noise_enabled: bool = True
    position_noise_std: float = 0.02
    heading_noise_std: float = 2.0
    max_episode_length: int = 900
    frame_hw: int = 84
    render: bool = True  # off: observations come back as None (physics-only runs)

    def __post_init__(self):
        if isinstance(self.actions, (list, tuple)) and self.actions and isinstance(self.actions[0], str):
            self.actions = tuple(Action[a.upper()] for a in self.actions)
        else:
            self.actions = tuple(self.actions)
        if len(set(self.actions)) != len(self.actions) or not self.actions:
            raise ValueError("actions must be a non-empty set of distinct Action members")

    @property
    def n_actions(self) -> int:
        return len(self.actions)


@dataclass
class StepResult:
    observation: object  # renderer.Observation, or None when rendering is off
    reward: float
    terminal: bool


class MazeEnv:
    """Single-agent episode machine over one MazeLayout.

    Each instance owns its noise rng and is mutated by exactly one caller;
    instances share no mutable state.
    """

    def __init__(self, layout: MazeLayout, config: EnvConfig = None, seed: int = 0):
        from . import renderer  # local import to keep world importable standalone

        self.layout = layout
        self.config = config or EnvConfig()
        self.rng = np.random.default_rng(seed)
        self._renderer = renderer
        self._settings = renderer.RenderSettings(frame_hw=self.config.frame_hw)
        self._palette = renderer.class_palette(layout.n_classes)
        self._target_cache: dict = {}
        self.pose: Optional[Pose] = None
        self.target: Optional[TargetSpec] = None
        self.steps = 0
        self.terminated = True

    @property
    def max_ray_length(self) -> float:
        return self._renderer.max_ray_length(self.layout, self._settings)

    def target_planes(self, target_id: int):
        """Cached (rgb, seg) planes rendered from the target viewpoint."""
        if target_id not in self._target_cache:
            t = self.layout.targets[target_id]
            frames = self._renderer.render_planes(self.layout, t.pose, self._settings, self._palette)
            self._target_cache[target_id] = (frames.rgb, frames.seg)
        return self._target_cache[target_id]

    def observe(self):
        if not self.config.render:
            return None
        frames = self._renderer.render_planes(self.layout, self.pose, self._settings, self._palette)
        t_rgb, t_seg = self.target_planes(self.target.target_id)
        return self._renderer.Observation(
            rgb=frames.rgb, depth=frames.depth, seg=frames.seg,
            target_rgb=t_rgb, target_seg=t_seg,
        )

    def reset(self, initial_pose: Pose, target_id: int):
        if not 0 <= target_id < len(self.layout.targets):
            raise ValueError(f"unknown target_id {target_id}")
        if position_blocked(self.layout, initial_pose.x1, initial_pose.x2, self.config.agent_radius):
            raise PoseCollisionError(
                f"initial pose ({initial_pose.x1:.3f}, {initial_pose.x2:.3f}) intersects geometry"
            )
        self.pose = initial_pose
        self.target = self.layout.targets[target_id]
        self.steps = 0
        self.terminated = False
        return self.observe()

    def _displace(self, action: Action) -> Pose:
        p = self.pose
        cfg = self.config
        th = math.radians(p.theta)
        fx, fy = math.cos(th), math.sin(th)
        lx, ly = -fy, fx  # left of facing
        if action is Action.FORWARD:
            return replace(p, x1=p.x1 + cfg.forward_step * fx, x2=p.x2 + cfg.forward_step * fy)
        if action is Action.BACKWARD:
            return replace(p, x1=p.x1 - cfg.backward_step * fx, x2=p.x2 - cfg.backward_step * fy)
        if action is Action.LEFT:
            return replace(p, x1=p.x1 + cfg.strafe_step * lx, x2=p.x2 + cfg.strafe_step * ly)
        if action is Action.RIGHT:
            return replace(p, x1=p.x1 - cfg.strafe_step * lx, x2=p.x2 - cfg.strafe_step * ly)
        if action is Action.ROTATE_LEFT:
            return Pose(p.x1, p.x2, p.theta + cfg.rotate_step_deg, p.sigma)
        if action is Action.ROTATE_RIGHT:
            return Pose(p.x1, p.x2, p.theta - cfg.rotate_step_deg, p.sigma)
        if action is Action.TILT_UP:
            return Pose(p.x1, p.x2, p.theta, p.sigma + cfg.tilt_step_deg)
        if action is Action.TILT_DOWN:
            return Pose(p.x1, p.x2, p.theta, p.sigma - cfg.tilt_step_deg)
        raise ValueError(f"unhandled action {action}")

    def step(self, action: Action) -> StepResult:
        """Advance one step: displace, add noise, resolve collisions, score.

        Reward is 1 exactly when the post-noise, post-collision position first
        comes within reach_radius of the target; episodes also end at
        max_episode_length.
        """
        if self.terminated:
            raise EpisodeFinishedError("step() called on a finished episode; call reset()")
        if action not in self.config.actions:
            raise ValueError(f"action {action} not in the configured action set")
        cfg = self.config
        old = self.pose
        tilde = self._displace(action)
        noisy = apply_noise(
            tilde, self.rng,
            position_std=cfg.position_noise_std,
            heading_std=cfg.heading_noise_std,
            enabled=cfg.noise_enabled,
        )
        final_xy = resolve_move(self.layout, (old.x1, old.x2), (noisy.x1, noisy.x2), cfg.agent_radius)
        self.pose = Pose(final_xy[0], final_xy[1], noisy.theta, noisy.sigma)
        self.steps += 1
        reached = dist(self.pose, self.target.position) <= self.target.reach_radius
        reward = 1.0 if reached else 0.0
        self.terminated = reached or self.steps >= cfg.max_episode_length
        return StepResult(self.observe(), reward, self.terminated)
