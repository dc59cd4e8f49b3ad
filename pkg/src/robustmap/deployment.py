"""Missed-detection cost over the order-k partition and its minimisation.

The cost of a configuration is the prior-weighted probability that none of
a target's k nearest robots detects it,

    L(x) = sum_q  prod_{i in kNN(q)} (1 - h(|q - x_i|)) f(q) dA,

evaluated on a fixed quadrature grid with the untruncated kernel so that
the gradient is exact.  Robots descend it one at a time (cyclic
coordinate descent) with a backtracking Armijo step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Assignment, QuadratureGrid, Workspace, _k_smallest, _sq_dists, as_positions
from .sensing import DetectionModel

log = logging.getLogger(__name__)

__all__ = [
    "LocationPrior",
    "DescentConfig",
    "DescentResult",
    "uniform_prior",
    "gaussian_prior",
    "detection_cost",
    "cost_with_members",
    "cost_gradient",
    "cost_gradients",
    "cyclic_descent",
    "waypoint_step",
]


@dataclass(frozen=True)
class LocationPrior:
    """Target-location density sampled at the grid points."""

    density: np.ndarray

    @classmethod
    def from_values(cls, grid: QuadratureGrid, values) -> "LocationPrior":
        v = np.asarray(values, dtype=float)
        if v.shape != (len(grid),):
            raise ValueError(f"prior needs {len(grid)} values, got shape {v.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("prior density must be finite and non-negative")
        mass = v.sum() * grid.cell_weight
        if mass <= 0:
            raise ValueError("prior has zero mass")
        return cls(v / mass)

    def mass(self, grid: QuadratureGrid) -> np.ndarray:
        """Per-point probability mass f(q) * dA."""
        return self.density * grid.cell_weight


def uniform_prior(grid: QuadratureGrid) -> LocationPrior:
    return LocationPrior.from_values(grid, np.ones(len(grid)))


def gaussian_prior(grid: QuadratureGrid, mean, std: float) -> LocationPrior:
    d2 = np.sum((grid.points - np.asarray(mean, dtype=float)) ** 2, axis=1)
    return LocationPrior.from_values(grid, np.exp(-d2 / (2 * std**2)))


@dataclass(frozen=True)
class DescentConfig:
    eps: float = 1e-6
    max_sweeps: int = 500
    armijo_c: float = 1e-4
    armijo_beta: float = 0.5
    alpha0: float | None = None  # initial step length; None -> 0.1 * diagonal
    max_backtracks: int = 30
    grad_tol: float = 1e-12

    def __post_init__(self):
        if self.eps <= 0 or self.max_sweeps < 1:
            raise ValueError("eps must be positive and max_sweeps >= 1")
        if not (0 < self.armijo_c < 1 and 0 < self.armijo_beta < 1):
            raise ValueError("Armijo parameters must lie in (0, 1)")
        if self.alpha0 is not None and self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")


@dataclass
class DescentResult:
    positions: np.ndarray
    costs: list[float] = field(default_factory=list)  # initial cost, then one per sweep
    converged: bool = False

    @property
    def sweeps(self) -> int:
        return len(self.costs) - 1


def _kernel(model: DetectionModel, d2: np.ndarray) -> np.ndarray:
    return model.p_max * np.exp(-d2 / (2.0 * model.sigma_d**2))


def cost_with_members(
    positions, grid: QuadratureGrid, prior: LocationPrior, members: np.ndarray, model: DetectionModel
) -> float:
    """Cost for an arbitrary k-membership table (one row of robot indices per point)."""
    xy = as_positions(positions)
    pts = grid.points
    prod = np.ones(len(pts))
    for r in range(members.shape[1]):
        idx = members[:, r]
        d2 = (pts[:, 0] - xy[idx, 0]) ** 2 + (pts[:, 1] - xy[idx, 1]) ** 2
        prod = prod * (1.0 - _kernel(model, d2))
    return float(np.sum(prod * prior.mass(grid)))


def detection_cost(positions, grid: QuadratureGrid, prior: LocationPrior, k: int, model: DetectionModel) -> float:
    """Missed-detection probability under the order-k partition of ``positions``."""
    xy = as_positions(positions)
    return _Evaluator(xy, grid, prior, k, model).cost()


class _Evaluator:
    """Caches the point-to-robot squared distances for one configuration."""

    def __init__(self, xy: np.ndarray, grid: QuadratureGrid, prior: LocationPrior, k: int, model: DetectionModel):
        if not 1 <= k <= len(xy):
            raise ValueError(f"k must satisfy 1 <= k <= m={len(xy)}, got k={k}")
        self.xy = np.array(xy, dtype=float)
        self.pts = grid.points
        self.mass = prior.mass(grid)
        self.k = k
        self.model = model
        self.d2 = _sq_dists(self.pts, self.xy)
        self._rows = np.arange(len(self.pts))[:, None]

    def _factors(self, d2: np.ndarray):
        members = _k_smallest(d2, self.k)
        h = _kernel(self.model, d2[self._rows, members])
        return members, h

    def cost(self, d2: np.ndarray | None = None) -> float:
        _, h = self._factors(self.d2 if d2 is None else d2)
        return float(np.sum(np.prod(1.0 - h, axis=1) * self.mass))

    def trial_cost(self, robot: int, pos: np.ndarray) -> float:
        d2 = self.d2.copy()
        d2[:, robot] = (self.pts[:, 0] - pos[0]) ** 2 + (self.pts[:, 1] - pos[1]) ** 2
        return self.cost(d2)

    def move(self, robot: int, pos: np.ndarray) -> None:
        self.xy[robot] = pos
        self.d2[:, robot] = (self.pts[:, 0] - pos[0]) ** 2 + (self.pts[:, 1] - pos[1]) ** 2

    def gradient(self, robot: int) -> np.ndarray:
        members, h = self._factors(self.d2)
        return self._gradient_from(members, h, robot)

    def gradients(self) -> np.ndarray:
        members, h = self._factors(self.d2)
        return np.array([self._gradient_from(members, h, i) for i in range(len(self.xy))])

    def _gradient_from(self, members: np.ndarray, h: np.ndarray, robot: int) -> np.ndarray:
        # dL/dx_i = - sum_{q in regions(i)} dh_i/dx_i * prod_{l != i} (1 - h_l) * f(q) dA
        # with dh/dx_i = h * (q - x_i) / sigma_d^2
        hit = members == robot
        rows = np.flatnonzero(hit.any(axis=1))
        if rows.size == 0:
            return np.zeros(2)
        hh = h[rows]
        mine = hit[rows]
        others = np.prod(np.where(mine, 1.0, 1.0 - hh), axis=1)
        h_i = hh[mine]
        diff = self.pts[rows] - self.xy[robot]
        w = h_i * others * self.mass[rows] / self.model.sigma_d**2
        return -(w @ diff)


def cost_gradient(
    positions, grid: QuadratureGrid, prior: LocationPrior, k: int, model: DetectionModel, robot: int
) -> np.ndarray:
    """Analytic gradient of :func:`detection_cost` with respect to one robot.

    Only points in the robot's own order-k regions contribute.  The
    partition is held fixed while differentiating; boundary terms vanish
    because swapped members are equidistant there.
    """
    xy = as_positions(positions)
    if not 0 <= robot < len(xy):
        raise ValueError(f"robot index {robot} out of range")
    return _Evaluator(xy, grid, prior, k, model).gradient(robot)


def cost_gradients(positions, grid: QuadratureGrid, prior: LocationPrior, k: int, model: DetectionModel) -> np.ndarray:
    return _Evaluator(as_positions(positions), grid, prior, k, model).gradients()


def _separate_coincident(xy: np.ndarray, workspace: Workspace) -> np.ndarray:
    xy = xy.copy()
    scale = 1e-9 * workspace.diagonal
    for j in range(1, len(xy)):
        clash = np.flatnonzero(np.all(xy[:j] == xy[j], axis=1))
        if clash.size:
            angle = j * 2.399963229728653  # golden angle, deterministic per index
            xy[j] = workspace.clamp(xy[j] + scale * np.array([np.cos(angle), np.sin(angle)]))
            log.info("robot %d coincides with robot %d; jittered by %.3g", j, clash[0], scale)
    return xy


def cyclic_descent(
    positions,
    grid: QuadratureGrid,
    prior: LocationPrior,
    k: int,
    model: DetectionModel,
    config: DescentConfig = DescentConfig(),
    max_sweeps: int | None = None,
) -> DescentResult:
    """Cyclic coordinate descent on the missed-detection cost.

    Each sweep updates robots 0..m-1 in turn along their negative partial
    gradient, with a projected backtracking Armijo step kept inside the
    workspace.  Stops once a whole sweep lowers the cost by no more than
    ``config.eps``; ``max_sweeps`` overrides ``config.max_sweeps``.
    """
    ws = grid.workspace
    xy = _separate_coincident(ws.clamp(as_positions(positions)), ws)
    ev = _Evaluator(xy, grid, prior, k, model)
    current = ev.cost()
    result = DescentResult(ev.xy, [current])
    limit = config.max_sweeps if max_sweeps is None else max_sweeps
    step0 = 0.1 * ws.diagonal if config.alpha0 is None else config.alpha0

    for _ in range(limit):
        start = current
        for i in range(len(xy)):
            g = ev.gradient(i)
            gnorm = float(np.hypot(*g))
            if gnorm < config.grad_tol:
                continue
            alpha = step0 / gnorm
            x_i = ev.xy[i].copy()
            for _ in range(config.max_backtracks + 1):
                trial = ws.clamp(x_i - alpha * g)
                c = ev.trial_cost(i, trial)
                # projected Armijo: sufficient decrease along the actual move
                if c <= current - config.armijo_c * float(g @ (x_i - trial)) and c < current:
                    ev.move(i, trial)
                    current = c
                    break
                alpha *= config.armijo_beta
        result.costs.append(current)
        if start - current <= config.eps:
            result.converged = True
            break
    result.positions = ev.xy.copy()
    return result


def waypoint_step(positions, targets, max_speed: float | None = None, dt: float = 1.0) -> np.ndarray:
    """Move each robot toward its target, at most ``max_speed * dt`` per step."""
    xy = as_positions(positions)
    tg = as_positions(targets)
    if max_speed is None:
        return tg.copy()
    if max_speed < 0:
        raise ValueError("max_speed must be non-negative")
    delta = tg - xy
    dist = np.hypot(delta[:, 0], delta[:, 1])
    reach = max_speed * dt
    scale = np.where(dist > reach, reach / np.where(dist > 0, dist, 1.0), 1.0)
    return xy + delta * scale[:, None]
