"""Particle belief over (location, intensity) and its SIR update.

The belief holds N1 fixed target locations, each carrying N2 intensity
hypotheses whose weights sum to one per location.  An update mixes the
reliable-measurement likelihood with the uniform "missed detection"
likelihood, renormalises each location and then resamples it with a
single-offset systematic (low-variance) walk.  Locations and intensity
values never move; only the weights change.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import qmc

from .geometry import Assignment, Workspace
from .rng import stream
from .sensing import DetectionModel, MeasurementModel, ReadingTable, team_miss_probs

log = logging.getLogger(__name__)

__all__ = [
    "ParticleSet",
    "halton",
    "init_particles",
    "sir_update",
    "update_weights",
    "low_variance_resample",
    "belief_to_csv",
    "belief_summary_csv",
]

NORM_TOL = 1e-9


def halton(n: int, dims: int = 2, start: int = 0) -> np.ndarray:
    """Points ``start`` .. ``start + n - 1`` of the unscrambled Halton
    sequence in the first ``dims`` prime bases, shape (n, dims)."""
    if n < 0 or start < 0:
        raise ValueError(f"need n, start >= 0, got {n}, {start}")
    gen = qmc.Halton(d=dims, scramble=False)
    if start:
        gen.fast_forward(start)
    return gen.random(n)


@dataclass
class ParticleSet:
    locations: np.ndarray  # (N1, 2)
    intensities: np.ndarray  # (N2,) shared grid or (N1, N2)
    weights: np.ndarray  # (N1, N2)

    @property
    def n1(self) -> int:
        return self.weights.shape[0]

    @property
    def n2(self) -> int:
        return self.weights.shape[1]

    @property
    def shared_intensities(self) -> bool:
        return self.intensities.ndim == 1

    def intensity_matrix(self) -> np.ndarray:
        return np.broadcast_to(self.intensities, self.weights.shape)

    def check(self, tol: float = NORM_TOL) -> None:
        if np.any(self.weights < 0):
            raise ValueError("negative particle weight")
        err = np.max(np.abs(self.weights.sum(axis=1) - 1.0))
        if err > tol:
            raise ValueError(f"per-location weights off by {err:.3g}")


def init_particles(
    workspace: Workspace,
    meas: MeasurementModel,
    n1: int,
    n2: int,
    per_location_intensities: bool = False,
) -> ParticleSet:
    """Uniform initial belief on Halton-Hammersley supports.

    Locations are the 2-D Halton points (bases 2 and 3) scaled to the
    workspace, intensities the base-2 sequence scaled to the intensity
    range.  With ``per_location_intensities`` location i uses base-2 indices
    i*N2 .. i*N2 + N2 - 1 instead of one shared set.
    """
    if n1 < 1 or n2 < 1:
        raise ValueError(f"need n1, n2 >= 1, got {n1}, {n2}")
    locations = workspace.to_unit(halton(n1, 2))
    if per_location_intensities:
        u = halton(n1 * n2, 1)[:, 0].reshape(n1, n2)
    else:
        u = halton(n2, 1)[:, 0]
    intensities = meas.i_min + u * meas.span
    weights = np.full((n1, n2), 1.0 / n2)
    return ParticleSet(locations, intensities, weights)


def joint_log_likelihood(particles: ParticleSet, readings: ReadingTable, meas: MeasurementModel):
    """Per-particle log of the product of reading densities.

    Returns the (N1, N2) log-likelihood (zero where a location has no
    readings) and the per-location reading counts.
    """
    logl = np.zeros(particles.weights.shape)
    if len(readings):
        grid = particles.intensity_matrix()
        z = (readings.value[:, None] - grid[readings.loc]) / meas.sigma_I
        contrib = -0.5 * z * z - math.log(math.sqrt(2.0 * math.pi) * meas.sigma_I)
        np.add.at(logl, readings.loc, contrib)
    return logl, readings.counts()


def update_weights(prior_w: np.ndarray, miss: np.ndarray, lik: np.ndarray, u: float) -> np.ndarray:
    """Unnormalised mixture weights p*u + (1 - p) * w * L, row by row."""
    return miss[:, None] * u + (1.0 - miss[:, None]) * prior_w * lik


def _normalise_rows(w: np.ndarray) -> np.ndarray:
    s = w.sum(axis=1, keepdims=True)
    dead = s[:, 0] <= 0
    if np.any(dead):
        log.warning("%d location(s) lost all weight; reset to uniform", int(dead.sum()))
        w = w.copy()
        w[dead] = 1.0
        s = w.sum(axis=1, keepdims=True)
    return w / s


def _systematic_counts(w: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Counts per particle of the stratified walk, one offset per row."""
    n1, n2 = w.shape
    cdf = np.cumsum(w, axis=1)
    # close each cdf at its last positive weight so rounding never hands a
    # draw to a trailing zero-weight particle
    last = n2 - 1 - np.argmax(w[:, ::-1] > 0, axis=1)
    cdf[np.arange(n2)[None, :] >= last[:, None]] = 1.0
    u = delta[:, None] + np.arange(n2)[None, :] / n2
    counts = np.empty((n1, n2), dtype=np.int64)
    for i in range(n1):
        # the walk stops at the first k with cdf_k >= u
        sel = np.searchsorted(cdf[i], u[i], side="left")
        counts[i] = np.bincount(sel, minlength=n2)
    return counts


def _offsets(rng: np.random.Generator, n1: int, n2: int) -> np.ndarray:
    # one offset per row in (0, 1/N2]
    return (1.0 - rng.random(n1)) / n2


def low_variance_resample(weights, rng: np.random.Generator | None = None, delta: float | None = None) -> np.ndarray:
    """Resample one location's weights; returns counts/N2.

    Exactly one uniform offset is drawn; draw j sits at ``delta + j/N2``.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > NORM_TOL:
        raise ValueError("weights must be a non-negative vector summing to 1")
    n2 = len(w)
    if delta is None:
        delta = _offsets(rng if rng is not None else np.random.default_rng(), 1, n2)[0]
    counts = _systematic_counts(w[None, :], np.array([delta]))[0]
    return counts / n2


def sir_update(
    particles: ParticleSet,
    readings: ReadingTable,
    poses,
    assignment: Assignment,
    det: DetectionModel,
    meas: MeasurementModel,
    seed: int,
    t: int,
    paper_literal_resample: bool = False,
    intensity_jitter: float = 0.0,
    return_pre_resample: bool = False,
):
    """One filtering step.

    ``assignment`` is the order-k membership at the particle locations.
    The missed-detection probability uses every assigned robot, because
    robots cannot tell which sensors have failed.  With
    ``paper_literal_resample`` the mixture weights are multiplied by the
    previous weights a second time before resampling.
    """
    miss = team_miss_probs(poses, particles.locations, assignment, det, failed=(), truncated=True)
    logl, _ = joint_log_likelihood(particles, readings, meas)
    tilde = update_weights(particles.weights, miss, np.exp(logl), meas.uniform_density)
    if paper_literal_resample:
        tilde = tilde * particles.weights
    pre = _normalise_rows(tilde)
    delta = _offsets(stream(seed, "resample", t), particles.n1, particles.n2)
    weights = _systematic_counts(pre, delta) / particles.n2

    intensities = particles.intensities
    if intensity_jitter > 0:
        grid = particles.intensity_matrix()
        noise = stream(seed, "jitter", t).standard_normal(grid.shape)
        intensities = np.clip(grid + intensity_jitter * noise, meas.i_min, meas.i_max)
    out = replace(particles, intensities=intensities, weights=weights)
    return (out, pre) if return_pre_resample else out


def belief_to_csv(particles: ParticleSet) -> str:
    buf = io.StringIO()
    buf.write("i,q_x,q_y,j,I,w\n")
    # tolist() hands back Python floats, whose repr round-trips exactly
    grid = particles.intensity_matrix().tolist()
    weights = particles.weights.tolist()
    for i, (qx, qy) in enumerate(particles.locations.tolist()):
        for j in range(particles.n2):
            buf.write(f"{i},{qx!r},{qy!r},{j},{grid[i][j]!r},{weights[i][j]!r}\n")
    return buf.getvalue()


def belief_summary_csv(particles: ParticleSet) -> str:
    grid = particles.intensity_matrix()
    mean = np.sum(particles.weights * grid, axis=1)
    var = np.sum(particles.weights * (grid - mean[:, None]) ** 2, axis=1)
    buf = io.StringIO()
    buf.write("i,q_x,q_y,mean_I,var_I\n")
    for i, ((qx, qy), mu, v) in enumerate(zip(particles.locations.tolist(), mean.tolist(), var.tolist())):
        buf.write(f"{i},{qx!r},{qy!r},{mu!r},{v!r}\n")
    return buf.getvalue()
