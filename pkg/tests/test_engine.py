from dataclasses import replace

import numpy as np
import pytest

from pisaa import (OperatorConfig, Partition, PilotConfig, RunConfig, Runner, TemperatureLadder, WarmStart,
                   run, sa_run)
from pisaa.engine import config_dict, psaa_configs, read_trace_csv, resume
from pisaa.problems import make_problem

BACKENDS = ["numba", "numpy"]


def quad(backend="auto", **kw):
    base = dict(problem={"name": "quadratic", "dim": 2}, kappa=4, n=300, seed=7,
                partition=Partition(np.array([0.1, 0.5, 1.0])), stride=50, backend=backend)
    base.update(kw)
    return RunConfig(**base)


def csv_bytes(trace, tmp_path, name="t.csv"):
    path = tmp_path / name
    trace.to_csv(path)
    return path.read_bytes()


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_iterations_records_only_the_start(backend):
    tr = run(quad(backend, n=0))
    assert tr.t == [0]
    assert np.isfinite(tr.best_energy[0])


@pytest.mark.parametrize("backend", BACKENDS)
def test_same_seed_same_trace(backend, tmp_path):
    a = csv_bytes(run(quad(backend)), tmp_path, "a.csv")
    b = csv_bytes(run(quad(backend)), tmp_path, "b.csv")
    c = csv_bytes(run(quad(backend, seed=8)), tmp_path, "c.csv")
    assert a == b and a != c


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("problem", [{"name": "mixture"}, {"name": "rastrigin", "dim": 3},
                                     {"name": "protein", "n": 8, "dim": 3},
                                     {"name": "ising", "synthetic": {"height": 5, "width": 6}}])
def test_population_invariants(backend, problem):
    p = make_problem(problem)
    if p.discrete and backend == "numba":
        pytest.skip("binary problems run on the numpy backend only")
    E0 = p.energies(p.sample_initial(np.random.default_rng(0), 50))
    grid = np.quantile(E0, [0.2, 0.5, 0.8])
    ops = (OperatorConfig(mutation_rates={"gibbs": 1}, crossover_rates={"kc": 1}) if p.discrete
           else OperatorConfig())
    cfg = RunConfig(problem=problem, kappa=5, n=200, seed=3, partition=Partition(grid), stride=20,
                    operators=ops, backend=backend)
    r = Runner(cfg)
    r.initialize()
    best = [r.pop.best_energy]
    for _ in range(200):
        r.step()
        best.append(r.pop.best_energy)
        assert r.pop.best_energy <= r.pop.E.min()
    assert np.all(np.diff(best) <= 0)
    E = r.problem.energies(r.pop.X)
    if r.problem.discrete:
        np.testing.assert_array_equal(E, r.pop.E)
    else:
        np.testing.assert_allclose(E, r.pop.E, rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(r.pop.J, cfg.partition.locate(r.pop.E))
    tr = r.finish()
    assert np.all(np.diff(tr.t) > 0)
    assert np.all(np.diff(tr.best_energy) <= 0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_evaluation_budget(backend):
    cfg = quad(backend, kappa=3, n=100, pilot=PilotConfig(enabled=False))
    tr = run(cfg)
    mut = sum(tr.attempts[op] for op in ("mrw", "hr", "km"))
    cross = sum(tr.attempts[op] for op in ("kc", "sc", "lc"))
    assert mut == cfg.kappa * cfg.n
    assert cross == cfg.n
    assert tr.evals["kc"] == 2 * tr.attempts["kc"]
    assert tr.n_evals == cfg.kappa + sum(tr.evals.values())


@pytest.mark.parametrize("backend", BACKENDS)
def test_checkpoint_resume_matches_straight_run(backend, tmp_path):
    cfg = quad(backend, n=400)
    straight = csv_bytes(run(cfg), tmp_path, "a.csv")
    r = Runner(cfg)
    r.run(until=150)
    r.checkpoint(tmp_path / "c.ckpt")
    resumed = csv_bytes(resume(tmp_path / "c.ckpt"), tmp_path, "b.csv")
    assert straight == resumed


def test_psaa_is_independent_single_chains(tmp_path):
    cfg = quad(mode="psaa", kappa=3)
    merged = run(cfg)
    singles = [run(c) for c in psaa_configs(cfg)]
    assert len({c.seed for c in psaa_configs(cfg)}) == 3
    np.testing.assert_array_equal(merged.best_energy, np.minimum.reduce([s.best_energy for s in singles]))
    np.testing.assert_allclose(merged.final_theta.theta, np.mean([s.final_theta.theta for s in singles], axis=0))


@pytest.mark.parametrize("backend", BACKENDS)
def test_sa_matches_pisaa_with_one_occupied_subregion(backend):
    # with every energy in the first subregion, theta shifts uniformly and never changes a decision
    ops = OperatorConfig(crossover_rates={}, crossover_per_sweep=0.0)
    pisaa = Runner(quad(backend, kappa=1, partition=Partition(np.array([1e6])), operators=ops,
                        pilot=PilotConfig(enabled=False)))
    sa = Runner(quad(backend, kappa=1, mode="sa", operators=ops, pilot=PilotConfig(enabled=False)))
    pisaa.initialize()
    sa.initialize()
    for _ in range(300):
        pisaa.step()
        sa.step()
        np.testing.assert_array_equal(pisaa.pop.X, sa.pop.X)


def test_flat_energy_accepts_everything():
    from pisaa.problems.base import BoxSpace, Problem

    class Flat(Problem):
        name = "flat"

        def __init__(self):
            super().__init__(BoxSpace.cube(-1e9, 1e9, 2))

        def _energies(self, X):
            return np.zeros(X.shape[0])

    cfg = quad("numpy", mode="sa", kappa=2, temperature=TemperatureLadder(1.0, 10 ** 9, 1.0),
               operators=OperatorConfig(mutation_rates={"mrw": 1, "hr": 1}, crossover_rates={"sc": 1}),
               pilot=PilotConfig(enabled=False))
    tr = sa_run(cfg, Flat())
    np.testing.assert_array_equal(tr.accept[-1], 1.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_fixed_weights_stay_fixed(backend):
    w = (0.5, -0.2, 0.1, 0.0)
    tr = run(quad(backend, theta_reset=w, adapt_theta=False))
    np.testing.assert_array_equal(tr.raw_theta.theta, w)


@pytest.mark.parametrize("backend", BACKENDS)
def test_truncation_fires_with_tiny_bounds(backend):
    from pisaa.schedules import TruncationBounds
    r = Runner(quad(backend, n=200, truncation=TruncationBounds(1e-3, 2.0)))
    r.run()
    assert r.theta.trunc_count > 0
    th = r.theta.theta[r.theta.nonempty]
    assert np.sqrt(th @ th) <= r.cfg.truncation.bound(r.theta.trunc_count)


def test_warm_start_and_pilot_run():
    cfg = quad(n=500, warm_start=WarmStart(tau0=50.0, sweeps=20))
    r = Runner(cfg)
    r.initialize()
    assert r.n_pilot() == 25
    assert all(s.frozen for s in r.scales.values())


def test_trace_csv_round_trip(tmp_path):
    tr = run(quad(theta_stride=2))
    tr.to_csv(tmp_path / "t.csv")
    cols = read_trace_csv(tmp_path / "t.csv")
    assert list(cols) == tr.columns()
    np.testing.assert_array_equal(cols["best_energy"], tr.best_energy)
    assert np.isnan(cols["theta_1"][1]) and not np.isnan(cols["theta_1"][-1])


def test_run_config_validation():
    with pytest.raises(ValueError):
        quad(kappa=0)
    with pytest.raises(ValueError):
        quad(mode="nope")
    with pytest.raises(ValueError):
        RunConfig(problem={"name": "quadratic"}, partition=None)
    with pytest.raises(ValueError):
        quad(stride=0)
    with pytest.raises(ValueError):
        quad(backend="gpu")
    RunConfig(problem={"name": "quadratic"}, mode="sa")


def test_incompatible_operators_are_rejected():
    cfg = quad(operators=OperatorConfig(mutation_rates={"gibbs": 1}))
    with pytest.raises(ValueError):
        Runner(cfg).initialize()


def test_config_dict_is_json_friendly():
    import json
    d = config_dict(quad())
    assert json.loads(json.dumps(d)) == d
    assert d["partition"] == [0.1, 0.5, 1.0]
    assert config_dict(replace(quad(), seed=3)) != d
