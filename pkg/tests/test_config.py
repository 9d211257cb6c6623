import itertools
import json

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from pisaa.config import (ConfigError, ExperimentSpec, canonical_json, derive_seed, load_source,
                          validate_config)

QUAD = {"problem": {"name": "quadratic", "dim": 2}, "n": 100, "partition": {"grid": [0.1, 0.5]}}


def errors_of(source):
    with pytest.raises(ConfigError) as info:
        validate_config(source)
    return info.value.errors


def test_empty_file_lists_required_fields(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    errs = errors_of(str(path))
    assert any(e.startswith("problem:") for e in errs)
    assert any(e.startswith("n:") for e in errs)
    assert errors_of("") == errs


def test_beta_out_of_range():
    errs = errors_of({**QUAD, "beta": 0.3})
    assert errs == ["beta: must be > 0.5, got 0.3"]
    assert errors_of({**QUAD, "gain": {"beta": 1.2}})[0].startswith("beta:")


def test_one_message_per_violation():
    errs = errors_of({**QUAD, "lam": -1, "kappa": 0, "partition": {"grid": [1.0, 0.5]}})
    assert len(errs) == 3
    assert {e.split(":")[0] for e in errs} == {"kappa", "lam", "partition.grid"}


def test_defaults_are_filled():
    s = validate_config(QUAD).settings
    assert s["lam"] == 0.1
    assert s["beta"] == [0.55] and s["kappa"] == [1]
    assert s["gain"]["n_gamma"] == 100
    assert s["truncation"] == {"M0": 1e100, "growth": 1e10}
    assert s["temperature"]["tau_star"] == 0.01


def test_problem_default_partitions():
    spec = validate_config({"problem": {"name": "rastrigin", "dim": 2}, "n": 10})
    assert spec.partition().m == 400
    assert spec.partition().grid[0] == -0.01 and spec.partition().grid[-1] == 40.0
    assert validate_config({"problem": {"name": "mixture"}, "n": 10}).partition().m == 19
    assert any(e.startswith("partition:") for e in errors_of({"problem": {"name": "protein"}, "n": 10}))
    assert validate_config({"problem": {"name": "quadratic"}, "n": 10, "mode": "sa"}).partition() is None


def test_operator_checks():
    assert any("km" in e for e in errors_of({**QUAD, "problem": {"name": "quadratic", "dim": 1},
                                             "operators": {"mutation_rates": {"km": 1}}}))
    assert any("gibbs" in e for e in errors_of({**QUAD, "operators": {"mutation_rates": {"gibbs": 1}}}))
    ising = validate_config({"problem": {"name": "ising", "synthetic": {"height": 4, "width": 4}}, "n": 10})
    assert set(ising.settings["operators"]["mutation_rates"]) == {"gibbs"}
    one_d = validate_config({**QUAD, "problem": {"name": "quadratic", "dim": 1}})
    assert "km" not in one_d.settings["operators"]["mutation_rates"]
    assert "kc" not in one_d.settings["operators"]["crossover_rates"]


def test_unknown_keys_and_problems_are_reported():
    assert any("bogus" in e for e in errors_of({**QUAD, "bogus": 1}))
    assert any(e.startswith("problem") for e in errors_of({**QUAD, "problem": {"name": "nope"}}))


def test_yaml_text_and_file_agree(tmp_path):
    text = yaml.safe_dump(QUAD)
    path = tmp_path / "c.yaml"
    path.write_text(text)
    assert validate_config(text).to_dict() == validate_config(str(path)).to_dict()
    assert load_source(str(path)) == QUAD


def test_manifest_is_a_valid_source(tmp_path):
    spec = validate_config({**QUAD, "replicates": 2})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"spec": spec.to_dict(include_execution=False), "replicates": []}))
    again = validate_config(str(path))
    assert again.config_hash() == spec.config_hash()


def test_string_numbers_are_coerced():
    s = validate_config({**QUAD, "n": "1e3", "gain": {"n_gamma": "1e5"}}).settings
    assert s["n"] == 1000 and s["gain"]["n_gamma"] == 100000


def test_config_hash_ignores_execution_fields():
    a = validate_config({**QUAD, "workers": 1, "output": "x"})
    b = validate_config({**QUAD, "workers": 4, "output": "y"})
    c = validate_config({**QUAD, "seed": 1})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_output_dir_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv("PISAA_OUTPUT_ROOT", raising=False)
    spec = validate_config({**QUAD, "name": "demo"})
    assert str(spec.output_dir()) == "runs/demo"
    monkeypatch.setenv("PISAA_OUTPUT_ROOT", str(tmp_path))
    assert spec.output_dir() == tmp_path / "demo"
    assert str(validate_config({**QUAD, "output": "here"}).output_dir()) == "here"


def test_cells_and_split_budget():
    spec = validate_config({**QUAD, "n": 1000, "kappa": [1, 4], "beta": [0.6, 1.0], "mode": ["pisaa", "sa"],
                            "split_budget": True})
    cells = spec.cells()
    assert len(cells) == 8
    assert {spec.iterations(c) for c in cells} == {1000, 250}
    cfg = spec.run_config(cells[1], 3)
    assert cfg.n == spec.iterations(cells[1]) and cfg.kappa == cells[1].kappa
    assert cells[0].stem(2) == "pisaa_k1_b0.6_r2"


def test_seed_map_is_injective_over_the_grid():
    modes, kappas, betas, reps = ("pisaa", "psaa", "sa"), (1, 2, 4, 5, 8, 14, 16, 30), (0.55, 0.75, 1.0), range(48)
    seeds = {derive_seed(2024, "rastrigin", *cell) for cell in itertools.product(modes, kappas, betas, reps)}
    assert len(seeds) == 3 * 8 * 3 * 48
    assert all(0 <= s < 2 ** 64 for s in seeds)


@given(st.integers(0, 2 ** 32), st.integers(1, 64), st.floats(0.51, 1.0), st.integers(0, 1000))
def test_seed_is_a_pure_function(master, kappa, beta, rep):
    a = derive_seed(master, "mixture", "pisaa", kappa, beta, rep)
    assert a == derive_seed(master, "mixture", "pisaa", kappa, beta, rep)
    assert a != derive_seed(master, "mixture", "pisaa", kappa, beta, rep + 1)


def test_canonical_json_is_order_free():
    assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1})


def test_with_overrides():
    spec = validate_config(QUAD)
    other = spec.with_overrides(seed=9)
    assert isinstance(other, ExperimentSpec)
    assert other.settings["seed"] == 9 and spec.settings["seed"] == 0
    assert np.array_equal(other.partition().grid, spec.partition().grid)
    with pytest.raises(ConfigError):
        spec.with_overrides(kappa=0)
