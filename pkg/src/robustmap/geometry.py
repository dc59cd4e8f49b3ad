"""Workspace, quadrature grid and order-k nearest-site assignment.

The order-k Voronoi partition is represented at quadrature-point
granularity: every point stores the indices of its k nearest robots,
sorted by (distance, index).  All integrals downstream only ever look at
membership at these points, so no polygon geometry is needed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Workspace",
    "RobotPose",
    "QuadratureGrid",
    "Assignment",
    "as_positions",
    "make_grid",
    "k_nearest",
    "order_k_assignment",
    "regions_of",
    "partition_to_json",
]


@dataclass(frozen=True)
class Workspace:
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate workspace [{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )

    @classmethod
    def from_intervals(cls, xs: Sequence[float], ys: Sequence[float]) -> "Workspace":
        """Build from two (a, b) intervals given in either order."""
        return cls(min(xs), max(xs), min(ys), max(ys))

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.x_max - self.x_min, self.y_max - self.y_min))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def clamp(self, xy: np.ndarray) -> np.ndarray:
        xy = np.array(xy, dtype=float, copy=True)
        xy[..., 0] = np.clip(xy[..., 0], self.x_min, self.x_max)
        xy[..., 1] = np.clip(xy[..., 1], self.y_min, self.y_max)
        return xy

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return (
            (xy[..., 0] >= self.x_min)
            & (xy[..., 0] <= self.x_max)
            & (xy[..., 1] >= self.y_min)
            & (xy[..., 1] <= self.y_max)
        )

    def to_unit(self, uv: np.ndarray) -> np.ndarray:
        """Map points of the unit square onto the workspace."""
        uv = np.asarray(uv, dtype=float)
        out = np.empty_like(uv)
        out[..., 0] = self.x_min + uv[..., 0] * (self.x_max - self.x_min)
        out[..., 1] = self.y_min + uv[..., 1] * (self.y_max - self.y_min)
        return out


@dataclass(frozen=True)
class RobotPose:
    """Planar position plus heading.  The sensor model is isotropic, so
    the heading is carried along but never used."""

    x: float
    y: float
    heading: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


def as_positions(sites) -> np.ndarray:
    """Return an (m, 2) float array from poses or anything array-like."""
    if len(sites) and isinstance(sites[0], RobotPose):
        return np.array([[p.x, p.y] for p in sites], dtype=float)
    arr = np.asarray(sites, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (m, 2) array of positions, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class QuadratureGrid:
    workspace: Workspace
    nx: int
    ny: int
    points: np.ndarray = field(repr=False)
    cell_weight: float = 0.0

    def __len__(self) -> int:
        return self.nx * self.ny


def make_grid(workspace: Workspace, nx: int, ny: int) -> QuadratureGrid:
    """Cell-centre quadrature grid, row-major (x varies fastest)."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"grid dimensions must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    dx = (workspace.x_max - workspace.x_min) / nx
    dy = (workspace.y_max - workspace.y_min) / ny
    xs = workspace.x_min + (np.arange(nx) + 0.5) * dx
    ys = workspace.y_min + (np.arange(ny) + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    points.setflags(write=False)
    return QuadratureGrid(workspace, nx, ny, points, workspace.area / (nx * ny))


@dataclass(frozen=True)
class Assignment:
    """Per-point k-nearest robot lists, shape (n_points, k)."""

    members: np.ndarray
    n_robots: int

    @property
    def k(self) -> int:
        return self.members.shape[1]

    def __len__(self) -> int:
        return self.members.shape[0]

    def contains(self, robot: int) -> np.ndarray:
        """Boolean mask of points whose member list includes ``robot``."""
        return np.any(self.members == robot, axis=1)


def _sq_dists(points: np.ndarray, sites: np.ndarray) -> np.ndarray:
    dx = points[:, None, 0] - sites[None, :, 0]
    dy = points[:, None, 1] - sites[None, :, 1]
    return dx * dx + dy * dy


def _check_k(k: int, m: int) -> None:
    if not 1 <= k <= m:
        raise ValueError(f"k must satisfy 1 <= k <= m={m}, got k={k}")


def _k_smallest(d2: np.ndarray, k: int) -> np.ndarray:
    # Lexicographic (distance, index) order.  argmin returns the first
    # occurrence, so repeated argmin passes break ties by lower index.
    n, m = d2.shape
    if k > 4:
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    work = d2.copy()
    rows = np.arange(n)
    out = np.empty((n, k), dtype=np.intp)
    for r in range(k):
        idx = np.argmin(work, axis=1)
        out[:, r] = idx
        work[rows, idx] = np.inf
    return out


def k_nearest(sites, point, k: int) -> list[int]:
    """Indices of the k nearest sites to ``point``, ties to the lower index."""
    xy = as_positions(sites)
    _check_k(k, len(xy))
    d2 = _sq_dists(np.asarray(point, dtype=float).reshape(1, 2), xy)
    return [int(i) for i in _k_smallest(d2, k)[0]]


def order_k_assignment(sites, points, k: int, chunk: int = 65536) -> Assignment:
    """Order-k membership for every point of a grid (or a raw (n, 2) array)."""
    xy = as_positions(sites)
    _check_k(k, len(xy))
    pts = points.points if isinstance(points, QuadratureGrid) else np.asarray(points, dtype=float)
    members = np.empty((len(pts), k), dtype=np.intp)
    for start in range(0, len(pts), chunk):
        sl = slice(start, start + chunk)
        members[sl] = _k_smallest(_sq_dists(pts[sl], xy), k)
    return Assignment(members, len(xy))


def regions_of(assignment: Assignment, robot: int) -> np.ndarray:
    """Point indices whose k-nearest list contains ``robot``."""
    if not 0 <= robot < assignment.n_robots:
        raise ValueError(f"robot index {robot} out of range for m={assignment.n_robots}")
    return np.flatnonzero(assignment.contains(robot))


def partition_to_json(assignment: Assignment, grid: QuadratureGrid) -> str:
    header = {
        "k": assignment.k,
        "nx": grid.nx,
        "ny": grid.ny,
        "bounds": list(grid.workspace.bounds),
    }
    records = [
        {"point": [float(p[0]), float(p[1])], "members": [int(j) for j in mem]}
        for p, mem in zip(grid.points, assignment.members)
    ]
    return json.dumps({"header": header, "points": records})
