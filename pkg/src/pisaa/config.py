"""Experiment files: parsing, validation, defaults and seed derivation.

An experiment file is YAML (JSON is accepted too, so a run manifest can be
fed straight back in). Only ``problem`` and ``n`` are required::

    name: rastrigin-kappa
    problem: {name: rastrigin, dim: 10}
    n: 200000
    kappa: [1, 5, 14, 30]      # sweep; a scalar is a one-element sweep
    beta: [0.55]
    mode: [pisaa, sa]
    replicates: 10
    seed: 2024
    partition: {u_min: -0.01, u_max: 40, m: 400}
    temperature: {tau_h: 1.0, n_tau: 1, tau_star: 0.01}
    gain: {n_gamma: 100000}

Everything else falls back to :data:`DEFAULTS`. Validation collects every
problem it finds and raises one :class:`ConfigError` listing them all.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .engine import MODES, OperatorConfig, PilotConfig, RunConfig, WarmStart
from .moves import CROSSOVERS, MUTATIONS, SelectionTemps
from .problems import default_partition, make_problem
from .schedules import GainSchedule, Partition, TemperatureLadder, TruncationBounds

OUTPUT_ENV = "PISAA_OUTPUT_ROOT"
REQUIRED = ("problem", "n")
PROBLEMS = ("mixture", "rastrigin", "protein", "ising", "quadratic")

DEFAULTS = {
    "name": None,
    "kappa": [1],
    "beta": [0.55],
    "mode": ["pisaa"],
    "replicates": 1,
    "seed": 0,
    "workers": 1,
    "output": None,
    "split_budget": False,
    "lam": 0.1,
    "partition": None,
    "gain": {"n_gamma": 100},
    "temperature": {"tau_h": 1.0, "n_tau": 1, "tau_star": 0.01},
    "truncation": {"M0": 1e100, "growth": 1e10},
    "normalization": "unit-sum",
    "theta_reset": None,
    "adapt_theta": True,
    "operators": {
        "mutation_rates": {"mrw": 1.0, "hr": 1.0, "km": 1.0},
        "crossover_rates": {"kc": 1.0, "sc": 1.0, "lc": 1.0},
        "crossover_per_sweep": 1.0,
        "km_k": 1,
        "kc_k": 1,
        "init_var": {"mrw": 0.1, "hr": 0.1, "km": 0.1, "sc": 0.1},
        "selection": {"tau_kc": 0.1, "tau_sc": 0.1, "tau_lc": 0.1},
        "literal_selection": False,
        "subregion_scaling": False,
    },
    "pilot": {"enabled": True, "fraction": 0.05, "cap": 10000, "batch_attempts": 200, "min_sweeps": 0},
    "warm_start": {"tau0": None, "sweeps": 0},
    "stride": 100,
    "theta_stride": 1,
    "backend": "auto",
    "oracle": None,
    "checkpoint_every": None,
}

ORACLE_DEFAULTS = {"tau": None, "tol": 1e-4}
# fields that change where or how fast a run executes but never what it computes
EXECUTION_FIELDS = ("output", "workers")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# ------------------------------------------------------------------ loading

def load_source(source) -> dict:
    """Raw mapping from a path, YAML text or mapping; a manifest yields its ``spec``."""
    if isinstance(source, dict):
        data = copy.deepcopy(source)
    else:
        if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source
                                                and source.strip() and Path(source).is_file()):
            text = Path(source).read_text()
        else:
            text = str(source)
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError([f"not valid YAML: {exc}"]) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping of settings"])
    if "spec" in data and "replicates" in data and isinstance(data["spec"], dict):
        data = data["spec"]
    return data


# ------------------------------------------------------------------ checks

class _Checker:
    def __init__(self):
        self.errors = []

    def fail(self, key, msg):
        self.errors.append(f"{key}: {msg}")

    def number(self, key, v, kind=float, lo=None, hi=None, lo_open=False, allow_none=False):
        if v is None and allow_none:
            return None
        if isinstance(v, bool):
            self.fail(key, f"expected a number, got {v!r}")
            return None
        if isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                self.fail(key, f"expected a number, got {v!r}")
                return None
        if not isinstance(v, (int, float)) or math.isnan(v):
            self.fail(key, f"expected a number, got {v!r}")
            return None
        if kind is int:
            if float(v) != int(v):
                self.fail(key, f"expected an integer, got {v!r}")
                return None
            v = int(v)
        else:
            v = float(v)
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.fail(key, f"must be {'>' if lo_open else '>='} {lo}, got {v!r}")
            return None
        if hi is not None and v > hi:
            self.fail(key, f"must be <= {hi}, got {v!r}")
            return None
        return v

    def flag(self, key, v):
        if not isinstance(v, bool):
            self.fail(key, f"expected true or false, got {v!r}")
            return None
        return v

    def mapping(self, key, v, allowed):
        if not isinstance(v, dict):
            self.fail(key, f"expected a mapping, got {v!r}")
            return {}
        for k in v:
            if k not in allowed:
                self.fail(f"{key}.{k}", f"unknown setting (known: {', '.join(sorted(allowed))})")
        return v

    def sweep(self, key, v, kind, **bounds):
        items = v if isinstance(v, list) else [v]
        if not items:
            self.fail(key, "sweep list is empty")
        out = [self.number(key, x, kind, **bounds) for x in items]
        if len(set(x for x in out if x is not None)) != len([x for x in out if x is not None]):
            self.fail(key, "sweep values must be distinct")
        return [x for x in out if x is not None]


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(out.get(k), dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_partition(c, raw, problem_name):
    if raw is None:
        default = default_partition(problem_name) if problem_name else None
        if default is None:
            return None
        raw = {"u_min": default[0], "u_max": default[1], "m": default[2]}
    raw = c.mapping("partition", raw, {"u_min", "u_max", "m", "grid"})
    if "grid" in raw:
        if set(raw) != {"grid"}:
            c.fail("partition", "give either grid or (u_min, u_max, m), not both")
        g = raw["grid"]
        if not isinstance(g, list) or not g:
            c.fail("partition.grid", "expected a non-empty list of thresholds")
            return None
        vals = [c.number("partition.grid", x) for x in g]
        if any(v is None for v in vals):
            return None
        if any(b <= a for a, b in zip(vals, vals[1:])):
            c.fail("partition.grid", "thresholds must be sorted strictly increasing")
            return None
        return {"grid": vals}
    missing = [k for k in ("u_min", "u_max", "m") if k not in raw]
    if missing:
        c.fail("partition", f"missing {', '.join(missing)}")
        return None
    lo = c.number("partition.u_min", raw["u_min"])
    hi = c.number("partition.u_max", raw["u_max"])
    m = c.number("partition.m", raw["m"], int, lo=2)
    if None in (lo, hi, m):
        return None
    if m > 2 and not hi > lo:
        c.fail("partition", f"grid not sorted: u_max ({hi!r}) must exceed u_min ({lo!r})")
        return None
    return {"u_min": lo, "u_max": hi, "m": m}


def partition_from(d) -> Partition | None:
    if d is None:
        return None
    if "grid" in d:
        return Partition(d["grid"])
    return Partition.uniform(d["u_min"], d["u_max"], d["m"])


def _check_rates(c, key, raw, names):
    raw = c.mapping(key, raw, set(names))
    return {k: c.number(f"{key}.{k}", v, lo=0) for k, v in raw.items() if k in names}


def _check_operators(c, raw):
    ops = c.mapping("operators", raw, set(DEFAULTS["operators"]))
    out = dict(ops)
    out["mutation_rates"] = _check_rates(c, "operators.mutation_rates", ops.get("mutation_rates", {}), MUTATIONS)
    out["crossover_rates"] = _check_rates(c, "operators.crossover_rates", ops.get("crossover_rates", {}),
                                          CROSSOVERS)
    if not any((v or 0) > 0 for v in out["mutation_rates"].values()):
        c.fail("operators.mutation_rates", "at least one mutation operator needs a positive rate")
    out["crossover_per_sweep"] = c.number("operators.crossover_per_sweep", ops.get("crossover_per_sweep"), lo=0)
    out["km_k"] = c.number("operators.km_k", ops.get("km_k"), int, lo=1)
    out["kc_k"] = c.number("operators.kc_k", ops.get("kc_k"), int, lo=1)
    iv = c.mapping("operators.init_var", ops.get("init_var", {}), {"mrw", "hr", "km", "sc"})
    out["init_var"] = {k: c.number(f"operators.init_var.{k}", v, lo=0, lo_open=True) for k, v in iv.items()}
    sel = c.mapping("operators.selection", ops.get("selection", {}), {"tau_kc", "tau_sc", "tau_lc"})
    out["selection"] = {k: c.number(f"operators.selection.{k}", v, lo=0, lo_open=True) for k, v in sel.items()}
    out["literal_selection"] = c.flag("operators.literal_selection", ops.get("literal_selection"))
    out["subregion_scaling"] = c.flag("operators.subregion_scaling", ops.get("subregion_scaling"))
    return out


def _check_problem(c, raw, data):
    if not isinstance(raw, dict) or "name" not in raw:
        c.fail("problem", "expected a mapping with a 'name' entry")
        return None, None
    name = raw["name"]
    if name not in PROBLEMS:
        c.fail("problem.name", f"unknown problem {name!r} (known: {', '.join(PROBLEMS)})")
        return None, None
    try:
        problem = make_problem(raw)
    except (TypeError, ValueError, OSError, KeyError) as exc:
        c.fail("problem", f"cannot build {name!r}: {exc}")
        return name, None
    return name, problem


def _problem_rate_defaults(merged, data, problem):
    # the generic operator defaults assume a continuous space of dimension >= 2
    given = data.get("operators") if isinstance(data.get("operators"), dict) else {}
    ops = merged["operators"]
    if "mutation_rates" not in given:
        if problem.discrete:
            ops["mutation_rates"] = {"gibbs": 1.0}
        elif problem.dim < 2:
            ops["mutation_rates"] = {"mrw": 1.0, "hr": 1.0}
    if "crossover_rates" not in given:
        if problem.discrete:
            ops["crossover_rates"] = {"kc": 1.0}
        elif problem.dim < 2:
            ops["crossover_rates"] = {"sc": 1.0, "lc": 1.0}


def validate_config(source) -> "ExperimentSpec":
    """Parse, check and fill defaults; raise :class:`ConfigError` listing every violation."""
    data = load_source(source)
    c = _Checker()
    for key in REQUIRED:
        if key not in data:
            c.fail(key, "required field is missing")
    for key in data:
        if key not in DEFAULTS and key not in REQUIRED:
            c.fail(key, "unknown setting")
    if "beta" not in data and isinstance(data.get("gain"), dict) and "beta" in data["gain"]:
        data["beta"] = data["gain"]["beta"]
    if isinstance(data.get("gain"), dict):
        data["gain"] = {k: v for k, v in data["gain"].items() if k != "beta"}
    merged = _merge(DEFAULTS, {k: v for k, v in data.items() if k in DEFAULTS or k in REQUIRED})

    name, problem = (None, None)
    if "problem" in data:
        name, problem = _check_problem(c, data["problem"], data)
    if problem is not None:
        _problem_rate_defaults(merged, data, problem)
    out = {"name": merged["name"] if merged["name"] is not None else (name or "experiment")}
    if not isinstance(out["name"], str) or not out["name"] or "/" in out["name"]:
        c.fail("name", "expected a plain, non-empty string")
    out["problem"] = copy.deepcopy(data.get("problem"))
    out["n"] = c.number("n", data["n"], int, lo=1) if "n" in data else None
    out["kappa"] = c.sweep("kappa", merged["kappa"], int, lo=1)
    out["beta"] = c.sweep("beta", merged["beta"], float, lo=0.5, hi=1.0, lo_open=True)
    modes = merged["mode"] if isinstance(merged["mode"], list) else [merged["mode"]]
    for m in modes:
        if m not in MODES:
            c.fail("mode", f"unknown mode {m!r} (known: {', '.join(MODES)})")
    if len(set(map(str, modes))) != len(modes):
        c.fail("mode", "sweep values must be distinct")
    out["mode"] = [m for m in modes if m in MODES]
    out["replicates"] = c.number("replicates", merged["replicates"], int, lo=1)
    out["seed"] = c.number("seed", merged["seed"], int, lo=0)
    out["workers"] = c.number("workers", merged["workers"], int, lo=1)
    out["output"] = merged["output"] if merged["output"] is None else str(merged["output"])
    out["split_budget"] = c.flag("split_budget", merged["split_budget"])
    out["lam"] = c.number("lam", merged["lam"], lo=0)
    out["partition"] = _check_partition(c, merged["partition"], name)
    if out["partition"] is None and any(m != "sa" for m in out["mode"]) and name is not None:
        if "partition" not in data:
            c.fail("partition", f"required for problem {name!r} (no default energy grid)")
    g = c.mapping("gain", merged["gain"], {"n_gamma"})
    out["gain"] = {"n_gamma": c.number("gain.n_gamma", g.get("n_gamma"), int, lo=1)}
    tl = c.mapping("temperature", merged["temperature"], {"tau_h", "n_tau", "tau_star"})
    out["temperature"] = {
        "tau_h": c.number("temperature.tau_h", tl.get("tau_h"), lo=0, lo_open=True),
        "n_tau": c.number("temperature.n_tau", tl.get("n_tau"), int, lo=1),
        "tau_star": c.number("temperature.tau_star", tl.get("tau_star"), lo=0, lo_open=True),
    }
    tr = c.mapping("truncation", merged["truncation"], {"M0", "growth"})
    out["truncation"] = {"M0": c.number("truncation.M0", tr.get("M0"), lo=0, lo_open=True),
                         "growth": c.number("truncation.growth", tr.get("growth"), lo=1, lo_open=True)}
    if merged["normalization"] not in ("unit-sum", "pi-weighted"):
        c.fail("normalization", "must be 'unit-sum' or 'pi-weighted'")
    out["normalization"] = merged["normalization"]
    reset = merged["theta_reset"]
    if reset is not None:
        if not isinstance(reset, list):
            c.fail("theta_reset", "expected a list with one value per subregion")
            reset = None
        else:
            reset = [c.number("theta_reset", v) for v in reset]
            m = partition_from(out["partition"]).m if out["partition"] else None
            if m is not None and len(reset) != m:
                c.fail("theta_reset", f"has {len(reset)} entries but the partition has {m} subregions")
    out["theta_reset"] = reset
    out["adapt_theta"] = c.flag("adapt_theta", merged["adapt_theta"])
    out["operators"] = _check_operators(c, merged["operators"])
    pl = c.mapping("pilot", merged["pilot"], set(DEFAULTS["pilot"]))
    out["pilot"] = {
        "enabled": c.flag("pilot.enabled", pl.get("enabled")),
        "fraction": c.number("pilot.fraction", pl.get("fraction"), lo=0, hi=1),
        "cap": c.number("pilot.cap", pl.get("cap"), int, lo=0),
        "batch_attempts": c.number("pilot.batch_attempts", pl.get("batch_attempts"), int, lo=1),
        "min_sweeps": c.number("pilot.min_sweeps", pl.get("min_sweeps"), int, lo=0),
    }
    ws = c.mapping("warm_start", merged["warm_start"], {"tau0", "sweeps"})
    out["warm_start"] = {"tau0": c.number("warm_start.tau0", ws.get("tau0"), lo=0, lo_open=True, allow_none=True),
                         "sweeps": c.number("warm_start.sweeps", ws.get("sweeps"), int, lo=0)}
    out["stride"] = c.number("stride", merged["stride"], int, lo=1)
    out["theta_stride"] = c.number("theta_stride", merged["theta_stride"], int, lo=1)
    if merged["backend"] not in ("auto", "numba", "numpy"):
        c.fail("backend", "must be auto, numba or numpy")
    out["backend"] = merged["backend"]
    out["checkpoint_every"] = c.number("checkpoint_every", merged["checkpoint_every"], int, lo=1, allow_none=True)
    out["oracle"] = _check_oracle(c, merged["oracle"], problem)

    if problem is not None and out["operators"]["mutation_rates"]:
        live = [k for k, v in out["operators"]["mutation_rates"].items() if v]
        if problem.discrete and any(op != "gibbs" for op in live):
            c.fail("operators.mutation_rates", f"problem {name!r} is binary; only gibbs applies")
        if not problem.discrete and "gibbs" in live:
            c.fail("operators.mutation_rates", "gibbs needs a binary-image problem")
        if "km" in live and not problem.discrete and problem.dim < 2:
            c.fail("operators.mutation_rates", "km needs dimension >= 2")
        kk = out["operators"].get("km_k")
        if "km" in live and kk is not None and not problem.discrete and kk >= problem.dim:
            c.fail("operators.km_k", f"must be below the dimension ({problem.dim})")
        cross = [k for k, v in out["operators"]["crossover_rates"].items() if v]
        ck = out["operators"].get("kc_k")
        crossing = max(out["kappa"] or [1]) > 1 and (out["operators"]["crossover_per_sweep"] or 0) > 0
        if crossing and "kc" in cross and ck is not None and ck >= problem.dim:
            c.fail("operators.kc_k", f"must be below the dimension ({problem.dim})")
        if crossing and problem.discrete and any(op != "kc" for op in cross):
            c.fail("operators.crossover_rates", f"problem {name!r} is binary; only kc applies")
    if c.errors:
        raise ConfigError(c.errors)
    return ExperimentSpec(out)


def _check_oracle(c, raw, problem):
    if raw is None or raw is False:
        return None
    if raw is True:
        raw = {}
    raw = c.mapping("oracle", raw, set(ORACLE_DEFAULTS))
    o = _merge(ORACLE_DEFAULTS, raw)
    o = {"tau": c.number("oracle.tau", o["tau"], lo=0, lo_open=True, allow_none=True),
         "tol": c.number("oracle.tol", o["tol"], lo=0, lo_open=True)}
    if problem is None:
        return o
    if problem.discrete:
        if problem.dim > 20:
            c.fail("oracle", f"{2 ** problem.dim} states are too many to enumerate (limit 2**20)")
    elif problem.dim > 2 or not problem.quadrature_boxes(1.0, 1.0):
        c.fail("oracle", f"problem {problem.name!r} (dimension {problem.dim}) is beyond the quadrature oracle")
    return o


# ------------------------------------------------------------------ experiment specs

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def derive_seed(master: int, problem_id: str, mode: str, kappa: int, beta: float, replicate: int) -> int:
    """64-bit seed for one experiment cell replicate (BLAKE2b of the identifying tuple)."""
    key = canonical_json([int(master), problem_id, mode, int(kappa), float(beta).hex(), int(replicate)])
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


def beta_tag(beta: float) -> str:
    return repr(float(beta))


@dataclass(frozen=True)
class Cell:
    mode: str
    kappa: int
    beta: float

    @property
    def key(self) -> tuple:
        return (self.mode, self.kappa, self.beta)

    def stem(self, replicate: int) -> str:
        return f"{self.mode}_k{self.kappa}_b{beta_tag(self.beta)}_r{replicate}"


@dataclass(frozen=True)
class ExperimentSpec:
    """A validated experiment: the run template plus the sweep and replicate plan."""

    settings: dict = field(repr=False)

    @property
    def name(self) -> str:
        return self.settings["name"]

    @property
    def replicates(self) -> int:
        return self.settings["replicates"]

    @property
    def workers(self) -> int:
        return self.settings["workers"]

    @property
    def oracle(self):
        return self.settings["oracle"]

    @property
    def checkpoint_every(self):
        return self.settings["checkpoint_every"]

    @property
    def problem_id(self) -> str:
        return canonical_json(self.settings["problem"])

    def to_dict(self, *, include_execution: bool = True) -> dict:
        d = copy.deepcopy(self.settings)
        if not include_execution:
            for k in EXECUTION_FIELDS:
                d.pop(k, None)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict(include_execution=False)).encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentSpec":
        d = self.to_dict()
        d.update(kw)
        return validate_config(d)

    def output_dir(self) -> Path:
        if self.settings["output"]:
            return Path(self.settings["output"])
        return Path(os.environ.get(OUTPUT_ENV, "runs")) / self.name

    def cells(self) -> list:
        s = self.settings
        return [Cell(m, k, b) for m in s["mode"] for k in s["kappa"] for b in s["beta"]]

    def iterations(self, cell: Cell) -> int:
        n = self.settings["n"]
        return max(1, n // cell.kappa) if self.settings["split_budget"] else n

    def seed(self, cell: Cell, replicate: int) -> int:
        return derive_seed(self.settings["seed"], self.problem_id, cell.mode, cell.kappa, cell.beta, replicate)

    def partition(self) -> Partition | None:
        return partition_from(self.settings["partition"])

    def run_config(self, cell: Cell, replicate: int) -> RunConfig:
        s = self.settings
        ops = s["operators"]
        operators = OperatorConfig(
            mutation_rates=dict(ops["mutation_rates"]), crossover_rates=dict(ops["crossover_rates"]),
            crossover_per_sweep=ops["crossover_per_sweep"], km_k=ops["km_k"], kc_k=ops["kc_k"],
            init_var=dict(ops["init_var"]), selection=SelectionTemps(**ops["selection"]),
            literal_selection=ops["literal_selection"], subregion_scaling=ops["subregion_scaling"])
        return RunConfig(
            problem=copy.deepcopy(s["problem"]), kappa=cell.kappa, n=self.iterations(cell), mode=cell.mode,
            seed=self.seed(cell, replicate), gain=GainSchedule(s["gain"]["n_gamma"], cell.beta),
            temperature=TemperatureLadder(**s["temperature"]), partition=self.partition(), lam=s["lam"],
            truncation=TruncationBounds(**s["truncation"]), operators=operators, pilot=PilotConfig(**s["pilot"]),
            warm_start=WarmStart(**s["warm_start"]), normalization=s["normalization"],
            theta_reset=None if s["theta_reset"] is None else tuple(s["theta_reset"]),
            adapt_theta=s["adapt_theta"], stride=s["stride"], theta_stride=s["theta_stride"],
            backend=s["backend"])
