"""Difficulty scheduling: start states are sampled near targets first.

A complexity scalar tau in (0, 1] scales the maximum allowed distance between
a sampled start cell and its nearest target; tau ramps linearly over training
frames. At tau = 1 every start cell is admissible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import AGENT_RADIUS, MazeLayout, Pose


@dataclass(frozen=True)
class CurriculumSchedule:
    tau_start: float = 0.3
    tau_end: float = 1.0
    frame_start: int = 0
    frame_end: int = 1

    def __post_init__(self):
        if not (0.0 < self.tau_start <= self.tau_end <= 1.0):
            raise ValueError("need 0 < tau_start <= tau_end <= 1")
        if self.frame_start >= self.frame_end:
            raise ValueError("need frame_start < frame_end")


def tau_at(schedule: CurriculumSchedule, frames: int) -> float:
    """Piecewise-linear ramp: tau_start before, tau_end after, linear between."""
    if frames <= schedule.frame_start:
        return schedule.tau_start
    if frames >= schedule.frame_end:
        return schedule.tau_end
    frac = (frames - schedule.frame_start) / (schedule.frame_end - schedule.frame_start)
    return schedule.tau_start + frac * (schedule.tau_end - schedule.tau_start)


def dmax(layout: MazeLayout, tau: float) -> float:
    """Maximum sampling distance: tau times the largest start-to-target distance."""
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must be in [0, 1]")
    return tau * layout.max_start_target_dist


def admissible_start_cells(layout: MazeLayout, tau: float) -> list:
    """Start cells whose center is within dmax(tau) of some target."""
    limit = dmax(layout, tau) + 1e-9
    mask = layout.start_cell_target_dist <= limit
    return [layout.start_cells[i] for i in np.flatnonzero(mask)]


def sample_initial_state(layout: MazeLayout, tau: float, rng: np.random.Generator,
                         agent_radius: float = AGENT_RADIUS) -> Pose:
    """Uniform start pose over the admissible cells, heading uniform in [0, 360).

    The continuous position is the cell center jittered uniformly within the
    cell (keeping the agent disc inside it); jitter that would leave the
    admissible distance band is re-drawn, falling back to the exact center, so
    every sampled pose satisfies the distance constraint. When no cell
    qualifies, the closest start cell is used.
    """
    limit = dmax(layout, tau) + 1e-9
    mask = layout.start_cell_target_dist <= limit
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        idx = np.array([int(np.argmin(layout.start_cell_target_dist))])
        limit = float(layout.start_cell_target_dist[idx[0]]) + 1e-9
    cell = layout.start_cells[int(idx[rng.integers(idx.size)])]
    cx, cy = layout.cell_center(cell)
    cs = layout.cell_size
    half = cs / 2.0 - agent_radius - 1e-6
    heading = float(rng.uniform(0.0, 360.0))

    tpos = np.array([t.position for t in layout.targets])
    x, y = cx, cy
    if half > 0:
        for _ in range(20):
            jx = cx + float(rng.uniform(-half, half))
            jy = cy + float(rng.uniform(-half, half))
            if np.sqrt(((tpos - (jx, jy)) ** 2).sum(axis=1)).min() <= limit:
                x, y = jx, jy
                break
    return Pose(x, y, heading, 0.0)
