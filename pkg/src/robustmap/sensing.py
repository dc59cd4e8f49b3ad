"""Combined range-limited sensor model.

A binary detector gates a noisy intensity measurement.  Detection follows
an isotropic Gaussian-shaped kernel cut off at an effective radius; a
target nobody detects yields a reading that is uniform over the intensity
range.  Failed sensors report uniform noise whenever they "detect".
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .geometry import Assignment, as_positions
from .rng import stream

__all__ = [
    "DetectionModel",
    "MeasurementModel",
    "FailureSet",
    "ReadingTable",
    "detect_prob",
    "detect_prob_grad",
    "team_miss_prob",
    "team_miss_probs",
    "measurement_likelihood",
    "mixture_likelihood",
    "synthesize_readings",
]


@dataclass(frozen=True)
class DetectionModel:
    sigma_d: float = 0.2
    p_max: float = 0.999
    r_eff: float | None = None  # defaults to 3 * sigma_d

    def __post_init__(self):
        if self.sigma_d <= 0:
            raise ValueError(f"sigma_d must be positive, got {self.sigma_d}")
        if not 0 < self.p_max < 1:
            raise ValueError(f"p_max must lie in (0, 1), got {self.p_max}")
        if self.r_eff is None:
            object.__setattr__(self, "r_eff", 3.0 * self.sigma_d)
        if self.r_eff <= 0:
            raise ValueError(f"r_eff must be positive, got {self.r_eff}")


@dataclass(frozen=True)
class MeasurementModel:
    sigma_I: float = math.sqrt(0.5)
    i_min: float = -1000.0
    i_max: float = 4000.0

    def __post_init__(self):
        if self.sigma_I <= 0:
            raise ValueError(f"sigma_I must be positive, got {self.sigma_I}")
        if not self.i_min < self.i_max:
            raise ValueError(f"empty intensity range [{self.i_min}, {self.i_max}]")

    @property
    def uniform_density(self) -> float:
        return 1.0 / (self.i_max - self.i_min)

    @property
    def span(self) -> float:
        return self.i_max - self.i_min


@dataclass(frozen=True)
class FailureSet:
    """Failed-sensor schedule: ``(t, robots)`` entries, cumulative in time.

    A robot listed at time t is failed at every step >= t.
    """

    schedule: tuple[tuple[int, frozenset[int]], ...] = ()

    @classmethod
    def at_start(cls, robots: Iterable[int]) -> "FailureSet":
        return cls(((0, frozenset(int(r) for r in robots)),))

    @classmethod
    def from_pairs(cls, pairs) -> "FailureSet":
        return cls(tuple(sorted((int(t), frozenset(int(r) for r in rs)) for t, rs in pairs)))

    def failed_at(self, t: int) -> frozenset[int]:
        out: set[int] = set()
        for when, robots in self.schedule:
            if when <= t:
                out |= robots
        return frozenset(out)

    @property
    def max_failed(self) -> int:
        return len(self.failed_at(max((w for w, _ in self.schedule), default=0)))

    def validate(self, m: int) -> None:
        every = self.failed_at(max((w for w, _ in self.schedule), default=0))
        bad = [r for r in every if not 0 <= r < m]
        if bad:
            raise ValueError(f"failed robot indices {sorted(bad)} out of range for m={m}")
        if len(every) >= m:
            raise ValueError("at least one robot must keep a working sensor (|F| < m)")


@dataclass
class ReadingTable:
    """Sparse readings, one entry per (robot, location) that detected."""

    robot: np.ndarray
    loc: np.ndarray
    value: np.ndarray
    n_locations: int

    def __len__(self) -> int:
        return len(self.value)

    def for_robot(self, robot: int) -> dict[int, float]:
        sel = self.robot == robot
        return dict(zip(self.loc[sel].tolist(), self.value[sel].tolist()))

    def counts(self) -> np.ndarray:
        return np.bincount(self.loc, minlength=self.n_locations)

    def to_csv(self, t: int) -> str:
        buf = io.StringIO()
        buf.write("t,robot,loc_index,reading\n")
        for r, q, v in zip(self.robot.tolist(), self.loc.tolist(), self.value.tolist()):
            buf.write(f"{t},{r},{q},{float(v)!r}\n")
        return buf.getvalue()

    @classmethod
    def empty(cls, n_locations: int) -> "ReadingTable":
        return cls(np.empty(0, np.intp), np.empty(0, np.intp), np.empty(0), n_locations)


def detect_prob(model: DetectionModel, dist, truncated: bool = True):
    """Detection probability at distance ``dist``; zero at or beyond r_eff
    when ``truncated``."""
    d = np.asarray(dist, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    h = model.p_max * np.exp(-(d * d) / (2.0 * model.sigma_d**2))
    if truncated:
        h = np.where(d >= model.r_eff, 0.0, h)
    return h if h.ndim else float(h)


def detect_prob_grad(model: DetectionModel, q: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of the untruncated kernel h(|q - x|) with respect to x."""
    diff = np.asarray(q, dtype=float) - np.asarray(x, dtype=float)
    d2 = np.sum(diff * diff, axis=-1, keepdims=True)
    h = model.p_max * np.exp(-d2 / (2.0 * model.sigma_d**2))
    return h * diff / model.sigma_d**2


def team_miss_prob(poses, point, members, model: DetectionModel, failed=(), truncated: bool = True) -> float:
    """Probability that every assigned, working robot misses a target at ``point``."""
    xy = as_positions(poses)
    p = np.asarray(point, dtype=float)
    failed = set(failed)
    out = 1.0
    for i in sorted(int(j) for j in members):
        if i in failed:
            continue
        d = float(np.hypot(*(p - xy[i])))
        out *= 1.0 - detect_prob(model, d, truncated)
    return out


def team_miss_probs(
    poses, points, assignment: Assignment, model: DetectionModel, failed=(), truncated: bool = True
) -> np.ndarray:
    """Vectorised :func:`team_miss_prob` over all assigned points."""
    xy = as_positions(poses)
    pts = np.asarray(points, dtype=float)
    mem = assignment.members
    out = np.ones(len(pts))
    dead = np.zeros(len(xy), dtype=bool)
    dead[list(failed)] = True
    for r in range(mem.shape[1]):
        idx = mem[:, r]
        d = np.hypot(pts[:, 0] - xy[idx, 0], pts[:, 1] - xy[idx, 1])
        h = detect_prob(model, d, truncated)
        out *= np.where(dead[idx], 1.0, 1.0 - h)
    return out


def measurement_likelihood(model: MeasurementModel, reading, intensity):
    """Gaussian density of ``reading`` given true intensity ``intensity``."""
    z = (np.asarray(reading, dtype=float) - np.asarray(intensity, dtype=float)) / model.sigma_I
    out = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * model.sigma_I)
    return out if np.ndim(out) else float(out)


def mixture_likelihood(miss_prob, joint_lik, model: MeasurementModel):
    """Law-of-total-probability mix of reliable and uniform readings."""
    miss = np.asarray(miss_prob, dtype=float)
    out = (1.0 - miss) * np.asarray(joint_lik, dtype=float) + miss * model.uniform_density
    return out if np.ndim(out) else float(out)


def synthesize_readings(
    poses,
    points: np.ndarray,
    assignment: Assignment,
    truth: Callable[[np.ndarray], np.ndarray],
    failed,
    det: DetectionModel,
    meas: MeasurementModel,
    seed: int,
    t: int,
) -> ReadingTable:
    """Draw one round of readings at ``points`` (normally particle locations).

    Robot i may read location q only if q is in its order-k region and
    strictly inside its effective radius; it then detects with probability
    h(|q - x_i|).  Working sensors report Normal(I*(q), sigma_I^2), failed
    ones Uniform(i_min, i_max).  Each robot draws from its own stream keyed
    by (seed, t, robot), so the table does not depend on evaluation order.
    """
    xy = as_positions(poses)
    pts = np.asarray(points, dtype=float)
    failed = set(failed)
    robots, locs, vals = [], [], []
    truth_cache = None
    for i in range(len(xy)):
        cand = np.flatnonzero(assignment.contains(i))
        if cand.size == 0:
            continue
        d = np.hypot(pts[cand, 0] - xy[i, 0], pts[cand, 1] - xy[i, 1])
        inside = d < det.r_eff
        cand, d = cand[inside], d[inside]
        if cand.size == 0:
            continue
        rng = stream(seed, "readings", t, i)
        coin = rng.random(cand.size)
        noise = rng.standard_normal(cand.size)
        junk = rng.uniform(meas.i_min, meas.i_max, cand.size)
        hit = coin < detect_prob(det, d, truncated=True)
        cand = cand[hit]
        if i in failed:
            reading = junk[hit]
        else:
            if truth_cache is None:
                truth_cache = np.asarray(truth(pts), dtype=float)
            reading = truth_cache[cand] + meas.sigma_I * noise[hit]
        robots.append(np.full(cand.size, i, dtype=np.intp))
        locs.append(cand)
        vals.append(reading)
    if not robots:
        return ReadingTable.empty(len(pts))
    return ReadingTable(np.concatenate(robots), np.concatenate(locs), np.concatenate(vals), len(pts))
