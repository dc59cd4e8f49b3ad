import pickle
from dataclasses import replace

import numpy as np
import pytest

from robustmap.geometry import Workspace
from robustmap.metrics import kl_divergence, reference_posterior
from robustmap.sensing import DetectionModel, MeasurementModel
from robustmap.simulator import (
    FailureSpec,
    Scenario,
    Simulation,
    TerrainSpec,
    compare_methods,
    parse_method,
    run,
)

UNIT = Workspace(0.0, 1.0, 0.0, 1.0)

SMALL = Scenario(
    m=4,
    k=2,
    horizon=3,
    seed=5,
    workspace=UNIT,
    measurement=MeasurementModel(i_min=0, i_max=10),
    grid_nx=20,
    grid_ny=20,
    n1=150,
    n2=20,
    terrain=TerrainSpec(kind="gaussian-bumps", nx=32),
)


def initial_kl(sim):
    p0 = sim.particles0
    return kl_divergence(p0.weights, reference_posterior(p0, sim.truth, sim.scenario.measurement.sigma_I))


class TestValidation:
    def test_zero_horizon(self):
        with pytest.raises(ValueError, match="horizon"):
            Simulation(replace(SMALL, horizon=0))

    @pytest.mark.parametrize(
        "kw",
        [
            dict(k=5),
            dict(k=0),
            dict(n1=0),
            dict(initial_poses=((0.1, 0.1),)),
            dict(failures=FailureSpec(robots=(0, 1, 2, 3))),
            dict(failures=FailureSpec(count=4)),
            dict(failures=FailureSpec(count_range=(1, 4))),
            dict(terrain=TerrainSpec(kind="file")),
            dict(sweeps_per_step=0),
        ],
    )
    def test_rejected(self, kw):
        with pytest.raises(ValueError):
            replace(SMALL, **kw).validate()

    def test_method_labels(self):
        assert parse_method("non-robust") == 1
        assert parse_method("robust") == 2
        assert parse_method("Robust-3") == 3
        assert parse_method("robust-2#2") == 2
        assert parse_method(4) == 4
        with pytest.raises(ValueError):
            parse_method("greedy")


class TestRun:
    def test_shape(self):
        trace = run(SMALL)
        assert [r.t for r in trace.metrics] == [1, 2, 3]
        assert sorted(trace.snapshots) == [1, 3]
        assert trace.final_map.shape == (SMALL.n1,)
        assert trace.provenance["seed"] == 5
        assert not trace.constraint_violated

    def test_deterministic(self):
        a, b = run(SMALL), run(SMALL)
        assert pickle.dumps(a.metrics) == pickle.dumps(b.metrics)
        assert a.final_map.tobytes() == b.final_map.tobytes()
        for s, t in zip(a.steps, b.steps):
            assert s.positions.tobytes() == t.positions.tobytes()

    def test_seed_changes_result(self):
        a, b = run(SMALL), run(replace(SMALL, seed=6))
        assert a.final_map.tobytes() != b.final_map.tobytes()

    def test_single_robot_step_reduces_kl(self):
        sc = Scenario(
            m=1,
            k=1,
            horizon=1,
            seed=2,
            workspace=UNIT,
            measurement=MeasurementModel(i_min=0, i_max=10),
            terrain=TerrainSpec(kind="ramp"),
            initial_poses=((0.5, 0.5),),
            grid_nx=20,
            grid_ny=20,
            n1=200,
            n2=20,
        )
        sim = Simulation(sc)
        kl0 = initial_kl(sim)
        trace = sim.run()
        assert trace.metrics[0].kl < kl0

    def test_survivor_out_of_range_does_not_help(self):
        det = DetectionModel(sigma_d=0.03)
        base = Scenario(
            m=2,
            k=1,
            horizon=1,
            seed=3,
            workspace=UNIT,
            detection=det,
            measurement=MeasurementModel(i_min=0, i_max=10),
            terrain=TerrainSpec(kind="ramp"),
            failures=FailureSpec(robots=(0,)),
            max_speed=0.0,
            grid_nx=10,
            grid_ny=10,
            n1=120,
            n2=20,
        )
        # park the survivor where no particle is within detection range
        locs = Simulation(replace(base, initial_poses=((0.5, 0.5), (0.0, 0.0)))).particles0.locations
        probe = np.stack(np.meshgrid(np.linspace(0, 1, 101), np.linspace(0, 1, 101)), -1).reshape(-1, 2)
        gap = np.min(np.linalg.norm(probe[:, None] - locs[None], axis=2), axis=1)
        spot = probe[np.argmax(gap)]
        assert gap.max() > det.r_eff
        # the failed robot sits on a particle so it certainly reports junk
        sc = replace(base, initial_poses=(tuple(locs[len(locs) // 2]), tuple(spot)))
        sim = Simulation(sc)
        kl0 = initial_kl(sim)
        trace = sim.run()
        assert trace.steps[0].n_readings > 0
        assert trace.metrics[0].kl >= kl0 - 1e-9

    def test_constraint_flag(self):
        ok = run(replace(SMALL, horizon=1, failures=FailureSpec(robots=(1,))))
        assert not ok.constraint_violated
        bad = run(replace(SMALL, horizon=1, failures=FailureSpec(robots=(1, 2))))
        assert bad.constraint_violated

    def test_scheduled_failures_accumulate(self):
        sc = replace(SMALL, failures=FailureSpec(schedule=((1, (0,)), (3, (2,)))))
        trace = run(sc)
        assert [set(s.failed) for s in trace.steps] == [{0}, {0}, {0, 2}]

    def test_speed_limit(self):
        sc = replace(SMALL, max_speed=0.01)
        sim = Simulation(sc)
        x0 = sim.initial_state().positions
        trace = sim.run()
        step = np.linalg.norm(trace.steps[0].positions - x0, axis=1)
        assert np.all(step <= 0.01 + 1e-12)

    def test_main_experiment_shape(self):
        sc = Scenario(horizon=10, failures=FailureSpec(robots=(1, 2, 3)), n1=300, n2=20, grid_nx=25, grid_ny=25)
        trace = run(sc)
        assert len(trace.metrics) == 10
        assert [r.t for r in trace.metrics] == list(range(1, 11))
        assert trace.constraint_violated


class TestCompare:
    TINY = replace(SMALL, horizon=2, n1=80, n2=10, grid_nx=12, grid_ny=12)

    def test_duplicate_method_gives_identical_rows(self):
        c = compare_methods(self.TINY, ["robust-2", "robust-2"], trials=1)
        assert c.methods == ["robust-2", "robust-2#2"]
        a, b = c.rows
        assert (a["kl"], a["rmse"]) == (b["kl"], b["rmse"])
        assert c.win_rates() == {"robust-2": 0.0, "robust-2#2": 0.0}

    def test_paired_rows_and_summary(self):
        c = compare_methods(self.TINY, ["non-robust", "robust-2"], trials=3, seed=9)
        assert len(c.rows) == 6
        assert {r["k"] for r in c.rows} == {1, 2}
        text = c.to_csv()
        assert "summary_method,median_kl,median_rmse,win_rate_kl" in text
        assert sum(c.win_rates().values()) <= 1.0 + 1e-12

    def test_single_method_has_no_win_rate(self):
        text = compare_methods(self.TINY, ["robust-2"], trials=2).to_csv()
        assert "win_rate" not in text

    def test_failure_draw_shared_across_methods(self):
        sc = replace(self.TINY, failures=FailureSpec(count_range=(1, 3)))
        c = compare_methods(sc, ["non-robust", "robust-2"], trials=4, seed=1)
        by_trial = {}
        for r in c.rows:
            by_trial.setdefault(r["trial"], set()).add(r["n_failed"])
        assert all(len(v) == 1 for v in by_trial.values())

    def test_workers_do_not_change_results(self):
        one = compare_methods(self.TINY, ["non-robust", "robust-2"], trials=3, workers=1).to_csv()
        two = compare_methods(self.TINY, ["non-robust", "robust-2"], trials=3, workers=2).to_csv()
        assert one == two

    def test_zero_trials(self):
        with pytest.raises(ValueError):
            compare_methods(self.TINY, ["robust-2"], trials=0)
