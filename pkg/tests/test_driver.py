import math

import numpy as np
import pytest

from cbob import driver
from cbob.acq_opt import OptimizerConfig
from cbob.acquisition import Emub, Pob
from cbob.driver import (
    Dataset,
    RunConfig,
    RunConfigError,
    Trajectory,
    TrajectoryRow,
    initial_dataset,
    metrics,
    quantile,
    run,
    stream_seed,
)
from cbob.gp import GpModelError
from cbob.problems import evaluate, get_problem

FAST = OptimizerConfig(multistarts=3, probe_count=256)


def small(**kw):
    base = dict(problem="illustrative1d", budget=3, seed=0, n_init=10, init_design="uniform", optimizer=FAST, gp_restarts=2)
    base.update(kw)
    return RunConfig(**base)


def fake(name, bests, feasible):
    rows = [TrajectoryRow(0, None, bests[0] is not None, None, bests[0], None)]
    for k, (b, f) in enumerate(zip(bests[1:], feasible), start=1):
        rows.append(TrajectoryRow(k, np.zeros(1), f, None, b, 0.1))
    return Trajectory(name, 0, 1, rows)


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.budget == 100 and cfg.name == "CBOB-HLGP"
        assert cfg.acquisition.family == "EICB" and cfg.acquisition.exploration == Pob(1.96)

    def test_eic_drops_exploration(self):
        cfg = RunConfig(algorithm="eic", constraint_model="gpc")
        assert cfg.exploration is None and cfg.acquisition.family == "EIC" and cfg.name == "EIC-GPC"

    @pytest.mark.parametrize(
        "kw",
        [
            dict(algorithm="TS"),
            dict(constraint_model="SVM"),
            dict(budget=-1),
            dict(init_design="lhs"),
            dict(exploration=None),
            dict(exploration=Pob(-1.0)),
            dict(n_init=0),
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(RunConfigError):
            RunConfig(**kw)

    def test_gpr_needs_observed_constraints(self):
        with pytest.raises(RunConfigError):
            RunConfig(problem="ackley", constraint_model="GPR").resolve_problem()
        with pytest.raises(RunConfigError):
            run(RunConfig(problem="illustrative1d", scenario="S2", constraint_model="GPR", budget=1))


class TestRun:
    def test_budget_zero(self):
        t = run(small(budget=0))
        assert t.status == "ok" and len(t.rows) == 1 and t.rows[0].k == 0
        assert len(t.dataset.records) == 10 and t.dataset.acquired == []
        assert math.isnan(t.rof)

    def test_budget_exactness_and_monotone(self):
        t = run(small(budget=4))
        assert [r.k for r in t.rows] == [0, 1, 2, 3, 4]
        assert len(t.dataset.acquired) == 4
        best = [math.inf if r.best_feasible is None else r.best_feasible for r in t.rows]
        assert all(b1 <= b0 for b0, b1 in zip(best, best[1:]))
        assert t.final_best == best[-1]
        for r, rec in zip(t.acquisitions, t.dataset.acquired):
            np.testing.assert_array_equal(r.x, rec.x)
            assert r.f_obs == rec.objective and r.feasible == rec.feasible
            assert r.acq_value >= 0

    def test_deterministic(self):
        cfg = small(budget=3, exploration=Emub(1.96, "adapt"))
        a, b = run(cfg), run(cfg)
        for ra, rb in zip(a.rows, b.rows):
            assert ra.best_feasible == rb.best_feasible and ra.acq_value == rb.acq_value
            if ra.x is not None:
                np.testing.assert_array_equal(ra.x, rb.x)

    def test_initial_design_shared_across_algorithms(self):
        a = initial_dataset(small(), get_problem("illustrative1d"))
        b = initial_dataset(small(algorithm="EIC", constraint_model="GPC"), get_problem("illustrative1d"))
        np.testing.assert_array_equal([r.x for r in a.records], [r.x for r in b.records])

    def test_masking_integrity(self):
        seen = []
        spec = get_problem("ackley", dimension=2)
        lb, width = spec.bounds[:, 0], spec.bounds[:, 1] - spec.bounds[:, 0]

        def check(k, bundle, dataset):
            observed = np.array([(r.x - lb) / width for r in dataset.records if r.objective is not None])
            if bundle.objective is None:
                assert len(observed) == 0
                return
            train = bundle.objective.train.X
            assert len(train) == len(observed)
            np.testing.assert_allclose(train, observed, atol=1e-12)
            seen.append(k)

        t = run(RunConfig(problem="ackley", problem_options={"dimension": 2}, budget=3, n_init=8, optimizer=FAST,
                          gp_restarts=2), callback=check)
        assert t.status == "ok" and seen
        assert any(r.objective is None for r in t.dataset.records)

    def test_no_incumbent_fallback(self):
        # a tiny feasible disk that the 3-point design misses
        spec = get_problem("ackley", dimension=2)
        from cbob.problems import ProblemSpec

        disk = ProblemSpec("disk", spec.bounds, spec.objective, (lambda x: float(x @ x) - 0.01,), "S2")
        t = run(RunConfig(problem=disk, budget=2, n_init=3, optimizer=FAST, gp_restarts=2))
        assert t.status == "ok" and len(t.rows) == 3
        assert t.rows[0].best_feasible is None
        assert all(0 <= r.acq_value <= 1 for r in t.acquisitions if r.best_feasible is None)

    def test_fit_failure_retries_then_aborts(self, monkeypatch):
        calls = []

        def broken(cfg, spec, dataset, k, retry):
            calls.append(retry)
            raise GpModelError("not positive definite", (0, 1))

        monkeypatch.setattr(driver, "_fit_surrogates", broken)
        t = run(small(budget=5))
        assert t.status == "error" and "after retry" in t.message
        assert calls == [False, True]
        assert len(t.rows) == 1

    def test_retry_recovers(self, monkeypatch):
        original = driver._fit_surrogates
        calls = []

        def flaky(cfg, spec, dataset, k, retry):
            calls.append(retry)
            if not retry:
                raise GpModelError("not positive definite", (0, 1))
            return original(cfg, spec, dataset, k, retry)

        monkeypatch.setattr(driver, "_fit_surrogates", flaky)
        t = run(small(budget=2))
        assert t.status == "ok" and len(t.rows) == 3
        assert calls == [False, True, False, True]

    def test_illustrative_reaches_optimum_region(self):
        # median behaviour of the 8-evaluation EICB example: <= -1.0 in at least 4 of 5 seeds
        hits = 0
        for seed in range(5):
            t = run(RunConfig(problem="illustrative1d", budget=8, seed=seed, n_init=10, init_design="uniform"))
            hits += t.final_best <= -1.0
        assert hits >= 4

    def test_stream_seeds_distinct(self):
        seeds = {stream_seed(0, k, tag) for k in range(5) for tag in range(5)}
        assert len(seeds) == 25


class TestMetrics:
    def test_rof(self):
        t = fake("a", [1.0] * 11, [True, False] * 5)
        assert t.rof == 0.5
        assert fake("a", [1.0] * 4, [True] * 3).rof == 1.0

    def test_median_bov(self):
        runs = [fake("a", [9.0, b], [True]) for b in (1.0, 5.0, 2.0)]
        s = metrics(runs)
        assert s.median_bov == 2.0 and s.runs == 3
        np.testing.assert_array_equal(s.band_median, [9.0, 2.0])
        np.testing.assert_array_equal(s.iterations, [0, 1])
        assert s.band_q25[1] == 1.5 and s.band_q75[1] == 3.5

    def test_infeasible_runs_sort_last(self):
        runs = [fake("a", [None, b], [b is not None]) for b in (None, None, 3.0)]
        assert math.isinf(metrics(runs).median_bov)
        assert quantile([1.0, math.inf], 0.5) == math.inf
        assert quantile([1.0, 2.0, math.inf], 0.5) == 2.0

    def test_errors(self):
        with pytest.raises(ValueError):
            metrics([])
        with pytest.raises(ValueError):
            metrics([fake("a", [1.0, 1.0], [True]), fake("a", [1.0], [])])


class TestDataset:
    def test_incumbent(self):
        spec = get_problem("illustrative1d")
        recs = [evaluate(spec, [x]) for x in (4.25, 4.7, 2.5)]
        d = Dataset(recs, 3)
        assert d.best_feasible_objective == min(r.objective for r in recs if r.feasible)
        assert d.acquired == []
        d.append(evaluate(spec, [5.6127]))
        assert d.acquired[0].x[0] == 5.6127
        assert d.best_feasible_objective == pytest.approx(-1.5829, abs=1e-4)
