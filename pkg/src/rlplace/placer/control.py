"""Density-weight schedule and the two agent control hooks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

W_LO = 0.25
W_HI = 4.0


def objective_grad(wl_grad, density_grad, lam: float):
    return np.asarray(wl_grad) + lam * np.asarray(density_grad)


def lambda_init(wl_grad, density_grad) -> float:
    """Initial density weight: ratio of L1 gradient norms."""
    wl = float(np.sum(np.abs(wl_grad)))
    den = float(np.sum(np.abs(density_grad)))
    if den == 0.0:
        raise ValueError("degenerate density gradient: all components are zero")
    return wl / den


def heuristic_cof(p: float, cof_min: float, cof_max: float) -> float:
    if p < 0:
        return cof_max
    return max(cof_min, math.pow(cof_max, 1.0 - p))


def update_lambda(state, cof: float):
    if not cof > 0:
        raise ValueError(f"cof must be positive, got {cof}")
    state.lam = state.lam * cof
    state.cof = cof
    return state


@dataclass(frozen=True)
class SpatialAction:
    """Per-region gradient multipliers; ``grid[i, j]`` covers x-bin i, y-bin j."""

    grid: np.ndarray
    pitch_x: float
    pitch_y: float | None = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 2:
            raise ValueError(f"action grid must be 2-D, got shape {g.shape}")
        object.__setattr__(self, "grid", g)
        if self.pitch_y is None:
            object.__setattr__(self, "pitch_y", self.pitch_x)

    @classmethod
    def for_region(cls, grid, width: float, height: float) -> "SpatialAction":
        g = np.asarray(grid, dtype=float)
        return cls(g, width / g.shape[0], height / g.shape[1])


def action_bin_index(cx, cy, action: SpatialAction):
    """Bin of each location (region-relative); floor, clamped into the grid."""
    a, b = action.grid.shape
    ix = np.clip(np.floor(np.asarray(cx) / action.pitch_x).astype(np.int64), 0, a - 1)
    iy = np.clip(np.floor(np.asarray(cy) / action.pitch_y).astype(np.int64), 0, b - 1)
    return ix, iy


def apply_spatial_scaling(grad_x, grad_y, cx, cy, action: SpatialAction):
    """Scale both gradient components of cell i by the action value at its bin."""
    ix, iy = action_bin_index(cx, cy, action)
    w = action.grid[ix, iy]
    return np.asarray(grad_x) * w, np.asarray(grad_y) * w
