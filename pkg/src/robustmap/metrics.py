"""Evaluation: reference posterior, KL divergence, expected map, RMSE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import ParticleSet

__all__ = [
    "MetricsRow",
    "reference_posterior",
    "kl_divergence",
    "support_mismatch",
    "expected_map",
    "rmse",
    "metrics_csv",
]

KL_FLOOR = 1e-12


@dataclass(frozen=True)
class MetricsRow:
    t: int
    cost: float
    kl: float
    rmse: float


def reference_posterior(particles: ParticleSet, truth, sigma_I: float) -> np.ndarray:
    """Per-location Gaussian weights centred on the true intensity.

    ``truth`` is either the true intensity at each particle location or a
    callable evaluating it.
    """
    values = truth(particles.locations) if callable(truth) else truth
    values = np.asarray(values, dtype=float)
    if values.shape != (particles.n1,):
        raise ValueError(f"need one true value per location ({particles.n1}), got {values.shape}")
    grid = particles.intensity_matrix()
    logw = -0.5 * ((grid - values[:, None]) / sigma_I) ** 2
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def _row_weights(n1: int, location_weights) -> np.ndarray:
    if location_weights is None:
        return np.full(n1, 1.0 / n1)
    lw = np.asarray(location_weights, dtype=float)
    if lw.shape != (n1,) or np.any(lw < 0) or lw.sum() <= 0:
        raise ValueError("location weights must be non-negative, one per location")
    return lw / lw.sum()


def kl_divergence(P, Q, floor: float = KL_FLOOR, location_weights=None) -> float:
    """Location-averaged KL(P || Q) between per-location weight rows.

    Both arguments are floored at ``floor`` inside the logarithm so that
    support mismatches give a large but finite value.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {Q.shape}")
    if P.ndim == 1:
        P, Q = P[None, :], Q[None, :]
    terms = np.where(P > 0, P * (np.log(np.maximum(P, floor)) - np.log(np.maximum(Q, floor))), 0.0)
    return float(_row_weights(P.shape[0], location_weights) @ terms.sum(axis=1))


def support_mismatch(P, Q, floor: float = KL_FLOOR) -> int:
    """Number of particles where P has mass but Q is below the floor."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    return int(np.count_nonzero((P > 0) & (Q < floor)))


def expected_map(particles: ParticleSet) -> np.ndarray:
    """Posterior-mean intensity at every particle location."""
    return np.sum(particles.weights * particles.intensity_matrix(), axis=1)


def rmse(expected, truth, mask=None) -> float:
    e = np.asarray(expected, dtype=float)
    g = np.asarray(truth, dtype=float)
    if e.shape != g.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {g.shape}")
    if mask is not None:
        e, g = e[mask], g[mask]
    return float(np.sqrt(np.mean((e - g) ** 2)))


def metrics_csv(rows) -> str:
    lines = ["t,cost,kl,rmse"]
    lines += [f"{r.t},{float(r.cost)!r},{float(r.kl)!r},{float(r.rmse)!r}" for r in rows]
    return "\n".join(lines) + "\n"
