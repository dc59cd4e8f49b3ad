"""Closed-loop simulation: deploy, sense (with failures), filter, score.

A :class:`Scenario` fully determines a :class:`Trace`; every random draw
is taken from a stream keyed by the scenario seed, so identical scenarios
give bitwise identical traces.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .belief import ParticleSet, init_particles, sir_update
from .deployment import DescentConfig, cyclic_descent, detection_cost, uniform_prior, waypoint_step
from .geometry import QuadratureGrid, Workspace, make_grid, order_k_assignment
from .metrics import MetricsRow, expected_map, kl_divergence, reference_posterior, rmse, support_mismatch
from .rng import derive_seed, stream
from .sensing import DetectionModel, FailureSet, MeasurementModel, synthesize_readings, team_miss_probs
from .terrain import TerrainField, load_grid, synthetic_terrain

log = logging.getLogger(__name__)

__all__ = [
    "TerrainSpec",
    "FailureSpec",
    "Scenario",
    "SimState",
    "StepRecord",
    "Trace",
    "Simulation",
    "run",
    "compare_methods",
    "Comparison",
    "parse_method",
]

DEFAULT_WORKSPACE = Workspace.from_intervals((42.00, 41.51), (-73.49, -72.83))


@dataclass(frozen=True)
class TerrainSpec:
    kind: str = "gaussian-bumps"  # or "ramp", "constant", "file"
    path: str | None = None
    seed: int | None = None  # None: derived from the scenario seed
    count: int = 6
    value: float | None = None
    nx: int = 128

    def build(self, workspace: Workspace, meas: MeasurementModel, seed: int) -> TerrainField:
        if self.kind == "file" or self.path is not None:
            fld = load_grid(self.path, workspace)
        else:
            s = derive_seed(seed, "terrain") if self.seed is None else self.seed
            fld = synthetic_terrain(s, self.kind, workspace, self.count, meas.i_min, meas.i_max, self.value, self.nx)
        return fld.clamped(meas.i_min, meas.i_max)


@dataclass(frozen=True)
class FailureSpec:
    """Which sensors fail and when.

    Exactly one of ``robots`` (explicit indices), ``count`` (that many drawn
    at random), ``count_range`` (a count drawn uniformly from the inclusive
    range, then robots drawn) or ``schedule`` ((t, robots) pairs) is used,
    in that order of precedence; all empty means no failures.
    """

    robots: tuple[int, ...] | None = None
    count: int | None = None
    count_range: tuple[int, int] | None = None
    at: int = 0
    schedule: tuple[tuple[int, tuple[int, ...]], ...] | None = None

    def resolve(self, m: int, seed: int) -> FailureSet:
        if self.robots is not None:
            return FailureSet.from_pairs([(self.at, self.robots)])
        if self.count is not None or self.count_range is not None:
            rng = stream(seed, "failures")
            if self.count is not None:
                n = self.count
            else:
                lo, hi = self.count_range
                n = int(rng.integers(lo, hi + 1))
            picked = sorted(int(i) for i in rng.choice(m, size=n, replace=False)) if n else []
            return FailureSet.from_pairs([(self.at, picked)])
        if self.schedule:
            return FailureSet.from_pairs(self.schedule)
        return FailureSet()


@dataclass(frozen=True)
class Scenario:
    m: int = 10
    k: int = 2
    horizon: int = 10
    seed: int = 0
    workspace: Workspace = DEFAULT_WORKSPACE
    detection: DetectionModel = DetectionModel()
    measurement: MeasurementModel = MeasurementModel()
    failures: FailureSpec = FailureSpec()
    terrain: TerrainSpec = TerrainSpec()
    grid_nx: int = 100
    grid_ny: int = 100
    n1: int = 5000
    n2: int = 100
    descent: DescentConfig = DescentConfig()
    sweeps_per_step: int | None = 1  # None: descend to convergence every step
    initial_poses: tuple[tuple[float, float], ...] | None = None
    init_box: tuple[float, float, float, float] | None = None  # (x0, x1, y0, y1); default whole workspace
    max_speed: float | None = None
    per_location_intensities: bool = False
    paper_literal_resample: bool = False
    intensity_jitter: float = 0.0
    snapshots: tuple[int, ...] | None = None  # default {1, T/2, T}

    @property
    def method(self) -> str:
        return "non-robust" if self.k == 1 else f"robust-{self.k}"

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.m < 1 or not 1 <= self.k <= self.m:
            raise ValueError(f"need 1 <= k <= m, got k={self.k}, m={self.m}")
        if self.n1 < 1 or self.n2 < 1 or self.grid_nx < 1 or self.grid_ny < 1:
            raise ValueError("particle counts and grid sizes must be positive")
        if self.sweeps_per_step is not None and self.sweeps_per_step < 1:
            raise ValueError("sweeps_per_step must be >= 1")
        if self.initial_poses is not None and len(self.initial_poses) != self.m:
            raise ValueError(f"{len(self.initial_poses)} initial poses given for m={self.m} robots")
        if self.failures.count_range is not None:
            lo, hi = self.failures.count_range
            if not 0 <= lo <= hi < self.m:
                raise ValueError(f"failure count range {lo}..{hi} invalid for m={self.m}")
        if self.failures.count is not None and not 0 <= self.failures.count < self.m:
            raise ValueError(f"failure count {self.failures.count} invalid for m={self.m}")
        self.failures.resolve(self.m, self.seed).validate(self.m)
        if self.terrain.kind == "file" and not self.terrain.path:
            raise ValueError("terrain kind 'file' needs a path")

    def snapshot_times(self) -> set[int]:
        if self.snapshots is not None:
            return set(self.snapshots)
        return {1, max(1, self.horizon // 2), self.horizon}

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def initial_positions(self) -> np.ndarray:
        if self.initial_poses is not None:
            return self.workspace.clamp(np.array(self.initial_poses, dtype=float))
        box = self.workspace if self.init_box is None else Workspace(*self.init_box)
        return self.workspace.clamp(box.to_unit(stream(self.seed, "initial-poses").random((self.m, 2))))


@dataclass
class SimState:
    t: int
    positions: np.ndarray
    particles: ParticleSet


@dataclass
class StepRecord:
    t: int
    positions: np.ndarray
    metrics: MetricsRow
    failed: frozenset[int]
    descent_costs: list[float]
    n_readings: int
    rmse_covered: float
    covered_fraction: float
    kl_support_mismatch: int
    constraint_ok: bool


@dataclass
class Trace:
    scenario: Scenario
    steps: list[StepRecord] = field(default_factory=list)
    snapshots: dict[int, ParticleSet] = field(default_factory=dict)
    final_map: np.ndarray | None = None
    truth: np.ndarray | None = None
    locations: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def metrics(self) -> list[MetricsRow]:
        return [s.metrics for s in self.steps]

    @property
    def constraint_violated(self) -> bool:
        """True if k < |F| + 1 at some step, i.e. no guarantee of one reliable detector."""
        return any(not s.constraint_ok for s in self.steps)


class Simulation:
    """Holds the fixed pieces of a scenario and advances its state."""

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = sc = scenario
        self.grid: QuadratureGrid = make_grid(sc.workspace, sc.grid_nx, sc.grid_ny)
        self.prior = uniform_prior(self.grid)
        self.failures = sc.failures.resolve(sc.m, sc.seed)
        self.terrain = sc.terrain.build(sc.workspace, sc.measurement, sc.seed)
        self.particles0 = init_particles(sc.workspace, sc.measurement, sc.n1, sc.n2, sc.per_location_intensities)
        self.truth = np.asarray(self.terrain(self.particles0.locations), dtype=float)

    def initial_state(self) -> SimState:
        return SimState(0, self.scenario.initial_positions(), self.particles0)

    def step(self, state: SimState, t: int) -> tuple[SimState, StepRecord]:
        sc = self.scenario
        failed = self.failures.failed_at(t)
        res = cyclic_descent(
            state.positions, self.grid, self.prior, sc.k, sc.detection, sc.descent, max_sweeps=sc.sweeps_per_step
        )
        positions = sc.workspace.clamp(waypoint_step(state.positions, res.positions, sc.max_speed))
        locs = state.particles.locations
        assignment = order_k_assignment(positions, locs, sc.k)
        readings = synthesize_readings(
            positions, locs, assignment, self.terrain, failed, sc.detection, sc.measurement, sc.seed, t
        )
        # the filter is never told which sensors failed
        particles = sir_update(
            state.particles,
            readings,
            positions,
            assignment,
            sc.detection,
            sc.measurement,
            sc.seed,
            t,
            paper_literal_resample=sc.paper_literal_resample,
            intensity_jitter=sc.intensity_jitter,
        )
        ref = reference_posterior(particles, self.truth, sc.measurement.sigma_I)
        est = expected_map(particles)
        covered = team_miss_probs(positions, locs, assignment, sc.detection) < 1.0
        row = MetricsRow(
            t=t,
            cost=detection_cost(positions, self.grid, self.prior, sc.k, sc.detection),
            kl=kl_divergence(particles.weights, ref),
            rmse=rmse(est, self.truth),
        )
        record = StepRecord(
            t=t,
            positions=positions,
            metrics=row,
            failed=failed,
            descent_costs=res.costs,
            n_readings=len(readings),
            rmse_covered=rmse(est, self.truth, covered) if covered.any() else math.nan,
            covered_fraction=float(covered.mean()),
            kl_support_mismatch=support_mismatch(particles.weights, ref),
            constraint_ok=sc.k >= len(failed) + 1,
        )
        return SimState(t, positions, particles), record

    def run(self) -> Trace:
        sc = self.scenario
        trace = Trace(
            sc,
            truth=self.truth,
            locations=self.particles0.locations,
            provenance={"config_hash": sc.fingerprint(), "seed": sc.seed, "version": __version__},
        )
        state = self.initial_state()
        keep = sc.snapshot_times()
        for t in range(1, sc.horizon + 1):
            state, record = self.step(state, t)
            trace.steps.append(record)
            if t in keep:
                trace.snapshots[t] = state.particles
        trace.final_map = expected_map(state.particles)
        if trace.constraint_violated:
            log.info("k=%d < |F|+1 at some step: a reliable detector is not guaranteed", sc.k)
        return trace


def run(scenario: Scenario) -> Trace:
    return Simulation(scenario).run()


def parse_method(method) -> int:
    """Map a method label to its partition order: 'non-robust' -> 1, 'robust-3' -> 3, 'robust' -> 2."""
    if isinstance(method, (int, np.integer)):
        return int(method)
    label = str(method).strip().lower().split("#", 1)[0]
    if label in ("non-robust", "nonrobust", "voronoi"):
        return 1
    if label == "robust":
        return 2
    if label.startswith("robust-"):
        return int(label.split("-", 1)[1])
    if label.startswith("k="):
        return int(label[2:])
    raise ValueError(f"unknown method {method!r}")


@dataclass
class Comparison:
    methods: list[str]
    rows: list[dict]  # one per (trial, method)

    def values(self, method: str, key: str = "kl") -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["method"] == method])

    def medians(self, key: str = "kl") -> dict[str, float]:
        return {m: float(np.median(self.values(m, key))) for m in self.methods}

    def win_rates(self, key: str = "kl") -> dict[str, float]:
        """Fraction of trials in which each method scores strictly lowest."""
        table = np.array([self.values(m, key) for m in self.methods])
        best = table.min(axis=0)
        unique = (table == best).sum(axis=0) == 1
        return {m: float(np.mean((table[i] == best) & unique)) for i, m in enumerate(self.methods)}

    def to_csv(self) -> str:
        lines = ["trial,method,k,n_failed,kl,rmse"]
        for r in self.rows:
            lines.append(f"{r['trial']},{r['method']},{r['k']},{r['n_failed']},{float(r['kl'])!r},{float(r['rmse'])!r}")
        lines.append("")
        med_kl, med_rmse = self.medians("kl"), self.medians("rmse")
        if len(self.methods) > 1:
            wins = self.win_rates("kl")
            lines.append("summary_method,median_kl,median_rmse,win_rate_kl")
            lines += [f"{m},{med_kl[m]!r},{med_rmse[m]!r},{wins[m]!r}" for m in self.methods]
        else:
            lines.append("summary_method,median_kl,median_rmse")
            lines += [f"{m},{med_kl[m]!r},{med_rmse[m]!r}" for m in self.methods]
        return "\n".join(lines) + "\n"


def _trial(args):
    scenario, methods, trial, seed = args
    trial_seed = derive_seed(seed, "trial", trial)
    # paired design: everything random is keyed by trial_seed, only k differs
    base = replace(scenario, seed=trial_seed)
    rows = []
    for label in methods:
        sc = replace(base, k=parse_method(label))
        trace = run(sc)
        last = trace.steps[-1]
        rows.append(
            {
                "trial": trial,
                "method": label,
                "k": sc.k,
                "n_failed": len(last.failed),
                "kl": last.metrics.kl,
                "rmse": last.metrics.rmse,
            }
        )
    return rows


def compare_methods(
    scenario: Scenario, methods: Sequence, trials: int, seed: int | None = None, workers: int | None = None
) -> Comparison:
    """Paired comparison of partition orders over seeded random trials.

    Trial r uses seed derive(seed, r) for initial poses, failure draw and
    synthetic terrain, identically for every method.  ``workers`` > 1 runs
    trials in separate processes; results do not depend on it.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    labels = _unique_labels(
        [m if isinstance(m, str) else ("non-robust" if int(m) == 1 else f"robust-{int(m)}") for m in methods]
    )
    seed = scenario.seed if seed is None else seed
    jobs = [(scenario, labels, r, seed) for r in range(trials)]
    if workers is None:
        workers = _env_workers()
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_trial, jobs))
    else:
        chunks = [_trial(j) for j in jobs]
    return Comparison(labels, [row for chunk in chunks for row in chunk])


def _unique_labels(labels: list[str]) -> list[str]:
    # a method listed twice keeps both columns: the repeat becomes "label#2"
    seen: dict[str, int] = {}
    out = []
    for label in labels:
        seen[label] = seen.get(label, 0) + 1
        out.append(label if seen[label] == 1 else f"{label}#{seen[label]}")
    return out


def _env_workers() -> int:
    import os

    raw = os.environ.get("ROBUSTMAP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
