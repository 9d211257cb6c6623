"""Population annealing driven by self-adjusting bias weights.

One iteration is one sweep:

1. every individual receives one mutation attempt (operator drawn per
   individual from the configured mutation rates);
2. ``floor(c) + Bernoulli(c - floor(c))`` crossover attempts follow, with
   ``c = crossover_per_sweep`` and the operator drawn from the crossover rates;
3. the bias weights move by ``gamma_t (p - pi)`` using the population's visit
   proportions, then the truncation check runs.

Random streams (Philox, spawned from the run seed) are split by role, and
every draw happens in a fixed order:

``ctrl``   one ``random(kappa)`` per sweep for mutation operator choice, then one
           ``random()`` for the crossover count (only when ``c`` is fractional)
           and one ``random()`` per crossover attempt for its operator;
``mut``    continuous problems: one batched proposal for the whole population
           (see :func:`pisaa.moves.propose_mutations`) then ``random(kappa)``
           for acceptance; binary images: the Gibbs kernel's draws;
``cross``  the crossover kernels;
``init``   the initial population.
"""

from __future__ import annotations

import csv
import math
import pickle
import warnings
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import moves
from .moves import CROSSOVERS, MUTATIONS, MoveContext, ProposalScale, SelectionTemps, adapt_scale
from .problems import make_problem
from .problems.base import Problem
from .schedules import (DesiredProbability, GainSchedule, Partition, TemperatureLadder, TruncationBounds,
                        desired_probability, gain_at, temperature_at)
from .target import BiasedTarget, ThetaState, normalize_theta, truncate, weight_update

MODES = ("pisaa", "psaa", "sa")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OperatorConfig:
    mutation_rates: dict = field(default_factory=lambda: {"mrw": 1.0, "hr": 1.0, "km": 1.0})
    crossover_rates: dict = field(default_factory=lambda: {"kc": 1.0, "sc": 1.0, "lc": 1.0})
    crossover_per_sweep: float = 1.0
    km_k: int = 1
    kc_k: int = 1
    init_var: dict = field(default_factory=lambda: {"mrw": 0.1, "hr": 0.1, "km": 0.1, "sc": 0.1})
    selection: SelectionTemps = field(default_factory=SelectionTemps)
    literal_selection: bool = False
    subregion_scaling: bool = False

    def normalized_rates(self, which: str) -> dict:
        rates = self.mutation_rates if which == "mutation" else self.crossover_rates
        total = sum(v for v in rates.values() if v > 0)
        if total <= 0:
            return {}
        order = MUTATIONS if which == "mutation" else CROSSOVERS
        return {k: rates[k] / total for k in order if rates.get(k, 0) > 0}


@dataclass(frozen=True)
class PilotConfig:
    enabled: bool = True
    fraction: float = 0.05
    cap: int = 10_000
    batch_attempts: int = 200
    min_sweeps: int = 0


@dataclass(frozen=True)
class WarmStart:
    tau0: float | None = None
    sweeps: int = 0


@dataclass(frozen=True)
class RunConfig:
    problem: dict | Problem = field(default_factory=lambda: {"name": "quadratic"})
    kappa: int = 1
    n: int = 1000
    mode: str = "pisaa"
    seed: int = 0
    gain: GainSchedule = field(default_factory=GainSchedule)
    temperature: TemperatureLadder = field(default_factory=TemperatureLadder)
    partition: Partition | None = None
    lam: float = 0.1
    truncation: TruncationBounds = field(default_factory=TruncationBounds)
    operators: OperatorConfig = field(default_factory=OperatorConfig)
    pilot: PilotConfig = field(default_factory=PilotConfig)
    warm_start: WarmStart = field(default_factory=WarmStart)
    normalization: str = "unit-sum"
    theta_reset: tuple | None = None
    adapt_theta: bool = True  # False keeps theta at theta_reset (fixed-weight sampling)
    stride: int = 100
    theta_stride: int = 1  # theta/visit columns every theta_stride-th record
    backend: str = "auto"  # "auto" | "numba" | "numpy"

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be >= 1")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode != "sa" and self.partition is None:
            raise ValueError("pisaa/psaa modes need an energy partition")
        if self.stride < 1 or self.theta_stride < 1:
            raise ValueError("strides must be >= 1")
        if self.backend not in ("auto", "numba", "numpy"):
            raise ValueError("backend must be auto, numba or numpy")


@dataclass
class Population:
    X: np.ndarray
    E: np.ndarray
    J: np.ndarray
    aux: np.ndarray | None = None
    best_x: np.ndarray | None = None
    best_energy: float = math.inf

    @property
    def kappa(self) -> int:
        return self.X.shape[0]

    def track(self, proposals, energies):
        energies = np.asarray(energies, dtype=float)
        if energies.size == 0:
            return
        k = int(np.argmin(energies))
        if energies[k] < self.best_energy:
            self.best_energy = float(energies[k])
            self.best_x = np.array(proposals[k], copy=True)


@dataclass
class OpStats:
    attempts: dict = field(default_factory=lambda: {op: 0 for op in MUTATIONS + CROSSOVERS})
    accepts: dict = field(default_factory=lambda: {op: 0 for op in MUTATIONS + CROSSOVERS})
    evals: dict = field(default_factory=lambda: {op: 0 for op in MUTATIONS + CROSSOVERS})

    def add(self, op, attempted, accepted, evals):
        self.attempts[op] += int(attempted)
        self.accepts[op] += int(accepted)
        self.evals[op] += int(evals)

    def rate(self, op) -> float:
        a = self.attempts[op]
        return self.accepts[op] / a if a else math.nan


@dataclass
class Trace:
    """Strided run record plus end-of-run summaries."""

    ops: list
    m: int
    t: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    best_energy: list = field(default_factory=list)
    accept: list = field(default_factory=list)  # rows of per-op cumulative rates
    visits: list = field(default_factory=list)  # rows or None
    theta: list = field(default_factory=list)  # rows or None
    final_theta: ThetaState | None = None
    raw_theta: ThetaState | None = None
    best_x: np.ndarray | None = None
    n_evals: int = 0
    evals: dict = field(default_factory=dict)
    attempts: dict = field(default_factory=dict)
    pilot: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)

    def columns(self) -> list:
        cols = ["t", "tau", "gamma", "best_energy"] + [f"accept_{op}" for op in self.ops]
        cols += [f"visit_{j + 1}" for j in range(self.m)] + [f"theta_{j + 1}" for j in range(self.m)]
        return cols

    def rows(self):
        for k in range(len(self.t)):
            row = [self.t[k], self.tau[k], self.gamma[k], self.best_energy[k], *self.accept[k]]
            for block in (self.visits[k], self.theta[k]):
                row += [""] * self.m if block is None else list(block)
            yield row

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([_fmt(v) for v in row])

    @property
    def final_best(self) -> float:
        return self.best_energy[-1] if self.best_energy else math.inf


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as float arrays (blank cells become NaN)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(c) if c != "" else math.nan for c in r] for r in body], dtype=float)
    data = data.reshape(len(body), len(header))
    return {h: data[:, k] for k, h in enumerate(header)}


# ---------------------------------------------------------------- streams

STREAMS = ("ctrl", "mut", "mut_u", "cross", "cross_n", "init")
KC_CODE = (MUTATIONS + CROSSOVERS).index("kc")


def make_streams(seed) -> dict:
    ss = np.random.SeedSequence(seed)
    return {name: np.random.Generator(np.random.Philox(child)) for name, child in zip(STREAMS, ss.spawn(len(STREAMS)))}


def psaa_chain_seeds(seed, kappa: int) -> list:
    """Seeds of the independent single-chain runs that make up a PSAA run."""
    children = np.random.SeedSequence(seed).spawn(kappa + len(STREAMS))[len(STREAMS):]
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


# ---------------------------------------------------------------- one sweep

@dataclass
class _Setup:
    problem: Problem
    mut_rates: dict
    cross_rates: dict
    pi: DesiredProbability | None


def _setup(cfg: RunConfig, problem: Problem) -> _Setup:
    ops = cfg.operators
    mut = ops.normalized_rates("mutation")
    cross = ops.normalized_rates("crossover") if cfg.kappa >= 2 and ops.crossover_per_sweep > 0 else {}
    if not mut:
        raise ValueError("at least one mutation operator needs a positive rate")
    if problem.discrete:
        bad = [op for op in list(mut) + list(cross) if op not in ("gibbs", "kc")]
        if bad:
            raise ValueError(f"operators {bad} need a continuous sample space")
    elif "gibbs" in mut:
        raise ValueError("the Gibbs pixel update needs a binary-lattice sample space")
    d = problem.dim
    if "km" in mut and not 1 <= ops.km_k < d:
        raise ValueError(f"k-point mutation needs 1 <= k < d (k={ops.km_k}, d={d})")
    if "kc" in cross and not 1 <= ops.kc_k <= d - 1:
        raise ValueError(f"k-point crossover needs 1 <= k <= d - 1 (k={ops.kc_k}, d={d})")
    pi = None
    if cfg.mode != "sa":
        pi = desired_probability(cfg.lam, cfg.partition.m)
    return _Setup(problem, mut, cross, pi)


def _fused_mutation(pop, choice, names, ctx, cfg, scales, rng, stats):
    res = moves.mutate(pop.X, pop.E, pop.J, choice, names, scales, ctx, rng, cfg.operators.km_k, pop.aux)
    pop.X, pop.E, pop.J, pop.aux = res.X, res.E, res.J, res.aux
    for code, op in enumerate(names):
        hit = choice == code
        stats.add(op, hit.sum(), res.accepted[hit].sum(), hit.sum())
    pop.track(res.proposals, res.proposal_energy)


def _sweep(pop: Population, target: BiasedTarget, cfg: RunConfig, setup: _Setup, scales: dict,
           streams: dict, stats: OpStats, crossover: bool = True):
    ops = cfg.operators
    ctx = MoveContext(setup.problem, target, ops.subregion_scaling)
    names = list(setup.mut_rates)
    cum = np.cumsum([setup.mut_rates[k] for k in names])
    choice = np.minimum(np.searchsorted(cum, streams["ctrl"].random(pop.kappa) * cum[-1], side="right"),
                        len(names) - 1)
    if setup.problem.discrete:
        for code, op in enumerate(names):
            idx = np.flatnonzero(choice == code)
            if idx.size == 0:
                continue
            aux = None if pop.aux is None else pop.aux[idx]
            res = moves.gibbs_pixel_mutation(pop.X[idx], pop.E[idx], pop.J[idx], ctx, streams["mut"], aux)
            pop.X[idx], pop.E[idx], pop.J[idx] = res.X, res.E, res.J
            if pop.aux is not None:
                pop.aux[idx] = res.aux
            stats.add(op, idx.size, res.accepted.sum(), idx.size)
            pop.track(res.proposals, res.proposal_energy)
    else:
        _fused_mutation(pop, choice, names, ctx, cfg, scales, streams["mut"], stats)
    if not (crossover and setup.cross_rates):
        return
    c = ops.crossover_per_sweep
    n_cross = int(math.floor(c))
    if c > n_cross and streams["ctrl"].random() < c - n_cross:
        n_cross += 1
    cnames = list(setup.cross_rates)
    ccum = np.cumsum([setup.cross_rates[k] for k in cnames])
    sel = ops.selection
    for _ in range(n_cross):
        op = cnames[min(int(np.searchsorted(ccum, streams["ctrl"].random() * ccum[-1], side="right")),
                        len(cnames) - 1)]
        rng = streams["cross"]
        if op == "kc":
            res = moves.kpoint_crossover(pop.X, pop.E, pop.J, ops.kc_k, ctx, sel.tau_kc, rng, pop.aux,
                                         ops.literal_selection)
        elif op == "sc":
            res = moves.snooker_crossover(pop.X, pop.E, pop.J, scales["sc"], ctx, sel.tau_sc, rng, pop.aux)
        else:
            res = moves.linear_crossover(pop.X, pop.E, pop.J, ctx, sel.tau_lc, rng, pop.aux)
        pop.X, pop.E, pop.J, pop.aux = res.X, res.E, res.J, res.aux
        stats.add(op, res.attempted, res.accepted, res.n_evals)
        pop.track(res.proposals, res.proposal_energy)


def pisaa_step(pop: Population, theta: ThetaState | None, t: int, cfg: RunConfig, streams: dict, *,
               setup: _Setup, scales: dict, stats: OpStats):
    """Sampling update, weight update and truncation for iteration ``t`` (1-based)."""
    tau = temperature_at(cfg.temperature, t)
    if cfg.mode == "sa" or theta is None:
        _sweep(pop, BiasedTarget.boltzmann(tau), cfg, setup, scales, streams, stats)
        return pop, theta
    _sweep(pop, BiasedTarget(cfg.partition, theta.theta, tau), cfg, setup, scales, streams, stats)
    if not cfg.adapt_theta:
        nonempty = theta.nonempty.copy()
        nonempty[pop.J] = True
        return pop, ThetaState._trusted(theta.theta, nonempty, theta.trunc_count, theta.theta_reset)
    gamma = gain_at(cfg.gain, t)
    theta = truncate(weight_update(theta, pop.J, setup.pi, gamma), cfg.truncation)
    return pop, theta


# ---------------------------------------------------------------- runner

class Runner:
    """Stateful driver for a single PISAA or SA run; supports checkpoint/resume.

    Continuous problems that provide a compiled energy run on the block
    kernel in :mod:`pisaa._fast` (``backend="numba"``); everything else, and
    any run with ``backend="numpy"``, uses the vectorised kernels of
    :mod:`pisaa.moves`. Each backend is deterministic given the seed; the
    two consume their streams differently and are not interchangeable.
    """

    BLOCK = 2048

    def __init__(self, cfg: RunConfig, problem: Problem | None = None):
        if cfg.mode == "psaa":
            raise ValueError("use run() for psaa mode")
        self.cfg = cfg
        self.problem = problem if problem is not None else make_problem(cfg.problem)
        self.setup = _setup(cfg, self.problem)
        self.backend = self._pick_backend()
        self.streams = make_streams(cfg.seed)
        self.scales = {op: ProposalScale.from_var(v) for op, v in cfg.operators.init_var.items()}
        self.stats = OpStats()
        self.pilot_stats = OpStats()
        self.pilot_history = {op: [] for op in self._adaptable()}
        self.t = 0
        self.visit_counts = None
        self.theta = None
        self.pop = None
        self._evals0 = self.problem.n_evals
        ops = list(self.setup.mut_rates) + list(self.setup.cross_rates)
        self.trace = Trace(ops=ops, m=0 if cfg.mode == "sa" else cfg.partition.m)
        self._records = 0

    def _pick_backend(self) -> str:
        want = self.cfg.backend
        spec = None if self.problem.discrete else self.problem.fast_spec()
        if want == "numba" and spec is None:
            raise ValueError(f"problem {self.problem.name!r} has no compiled kernel")
        if want == "numpy" or spec is None:
            return "numpy"
        self._fast_spec = spec
        return "numba"

    def _adaptable(self):
        ops = [op for op in self.setup.mut_rates if op in ("mrw", "hr", "km")]
        if "sc" in self.setup.cross_rates:
            ops.append("sc")
        return ops

    # -- initialisation
    def initialize(self):
        cfg, problem = self.cfg, self.problem
        X = problem.sample_initial(self.streams["init"], cfg.kappa)
        E, aux = problem.evaluate(X)
        E = np.asarray(E, dtype=float).copy()
        E[~problem.contains(X)] = np.inf
        X = np.ascontiguousarray(X, dtype=problem.dtype)
        if cfg.mode != "sa":
            reset = None if cfg.theta_reset is None else np.asarray(cfg.theta_reset, dtype=float)
            self.theta = ThetaState.initial(cfg.partition.m, reset)
            self.visit_counts = np.zeros(cfg.partition.m, dtype=np.int64)
        self.pop = Population(X, E, self._target(1).locate(E).astype(np.int64), aux)
        self.pop.track(X, E)
        if cfg.warm_start.sweeps > 0:
            self._warm_start()
        if cfg.pilot.enabled and self._adaptable():
            self._pilot()
        self.scales = {op: s.freeze() for op, s in self.scales.items()}
        self._record()

    def _target(self, t: int) -> BiasedTarget:
        tau = temperature_at(self.cfg.temperature, t)
        if self.cfg.mode == "sa":
            return BiasedTarget.boltzmann(tau)
        return BiasedTarget(self.cfg.partition, self.theta.theta, tau)

    def _relabel(self, target):
        self.pop.J = target.locate(self.pop.E).astype(np.int64)

    def _warm_start(self):
        ws = self.cfg.warm_start
        tau0 = ws.tau0 if ws.tau0 is not None else 100.0 * temperature_at(self.cfg.temperature, 1)
        target = BiasedTarget.boltzmann(tau0)
        self._relabel(target)
        self._advance(ws.sweeps, "warm", tau=tau0, stats=self.pilot_stats)
        self._relabel(self._target(1))

    def n_pilot(self) -> int:
        p = self.cfg.pilot
        return max(p.min_sweeps, min(int(math.ceil(p.fraction * self.cfg.n)), p.cap))

    def _pilot(self):
        """Scale adaptation at the starting temperature and weights, then freeze.

        An operator's scale moves once it has gathered ``batch_attempts``
        attempts since its last move. Blocks are sized so that no operator
        can cross that threshold before a block's last sweep, which keeps the
        schedule identical to checking after every sweep.
        """
        p = self.cfg.pilot
        window = OpStats()
        tau1 = temperature_at(self.cfg.temperature, 1)
        per_sweep = {op: (self.cfg.kappa if op in MUTATIONS else
                          int(math.ceil(self.cfg.operators.crossover_per_sweep))) for op in self._adaptable()}
        left = self.n_pilot()
        while left > 0:
            room = min((p.batch_attempts - window.attempts[op]) // max(per_sweep[op], 1)
                       for op in self._adaptable())
            b = int(min(left, max(1, room)))
            before = (dict(window.attempts), dict(window.accepts))
            self._advance(b, "pilot", tau=tau1, stats=window)
            left -= b
            for op in self._adaptable():
                self.pilot_stats.add(op, window.attempts[op] - before[0][op], window.accepts[op] - before[1][op], 0)
                if window.attempts[op] >= p.batch_attempts:
                    rate = window.rate(op)
                    self.pilot_history[op].append(rate)
                    self.scales[op] = adapt_scale(self.scales[op], rate)
                    window.attempts[op] = window.accepts[op] = 0

    def pilot_acceptance(self, last: int = 5) -> dict:
        """Mean acceptance of each adapted operator over its last ``last`` pilot batches."""
        return {op: float(np.mean(h[-last:])) if h else math.nan for op, h in self.pilot_history.items()}

    # -- sweeping
    def _advance(self, count: int, phase: str, tau: float | None = None, stats: OpStats | None = None):
        """Run ``count`` sweeps. ``phase`` is ``main`` (iterations ``t+1..t+count``),
        ``pilot`` (fixed temperature, no weight update) or ``warm`` (flat Boltzmann
        target at ``tau``, no crossovers)."""
        stats = self.stats if stats is None else stats
        if self.backend == "numba":
            return self._advance_fast(count, phase, tau, stats)
        for _ in range(count):
            if phase == "main":
                self.t += 1
                self.pop, self.theta = pisaa_step(self.pop, self.theta, self.t, self.cfg, self.streams,
                                                  setup=self.setup, scales=self.scales, stats=stats)
                self._count_visits()
            elif phase == "pilot":
                _sweep(self.pop, BiasedTarget.boltzmann(tau) if self.theta is None else
                       BiasedTarget(self.cfg.partition, self.theta.theta, tau),
                       self.cfg, self.setup, self.scales, self.streams, stats)
            else:
                _sweep(self.pop, BiasedTarget.boltzmann(tau), self.cfg, self.setup, self.scales, self.streams,
                       stats, crossover=False)

    def _count_visits(self):
        if self.visit_counts is not None:
            self.visit_counts += np.bincount(self.pop.J, minlength=self.cfg.partition.m)

    def _fast_layout(self):
        cfg, d = self.cfg, self.problem.dim
        kappa = cfg.kappa
        cross_on = bool(self.setup.cross_rates)
        slots = int(math.ceil(cfg.operators.crossover_per_sweep)) if cross_on else 0
        return {"ctrl": kappa + (1 + slots if cross_on else 0), "mut": kappa * d + kappa,
                "mut_u": kappa * d + kappa, "cross": slots * (d + 3), "cross_n": slots}, slots

    def _advance_fast(self, count, phase, tau, stats):
        from . import _fast

        cfg, pop = self.cfg, self.pop
        kind, params, wrap_kind, n_theta = self._fast_spec
        widths, slots = self._fast_layout()
        codes = {op: k for k, op in enumerate(MUTATIONS + CROSSOVERS)}
        mut_names = list(self.setup.mut_rates)
        cross_names = list(self.setup.cross_rates)
        mut_cum = np.cumsum([self.setup.mut_rates[k] for k in mut_names])
        cross_cum = np.cumsum([self.setup.cross_rates[k] for k in cross_names]) if cross_names else np.ones(1)
        scales = np.ones(7)
        for op, s in self.scales.items():
            scales[codes[op]] = s.var
        sel = cfg.operators.selection
        sa_like = self.theta is None or phase == "warm"
        if sa_like:
            grid, theta, nonempty, pi = np.empty(0), np.zeros(1), np.zeros(1, bool), np.zeros(1)
            visits = np.zeros(1, dtype=np.int64)
            trunc = np.array([math.inf, 1.0, 0.0, 0.0])
        else:
            grid = np.ascontiguousarray(cfg.partition.grid, dtype=float)
            theta, nonempty = self.theta.theta.copy(), self.theta.nonempty.copy()
            pi = np.asarray(self.setup.pi.pi, dtype=float)
            visits = self.visit_counts if phase == "main" else np.zeros_like(self.visit_counts)
            trunc = np.concatenate([[cfg.truncation.M0, cfg.truncation.growth, float(self.theta.trunc_count)],
                                    self.theta.theta_reset])
        attempts = np.zeros(7, dtype=np.int64)
        accepts = np.zeros(7, dtype=np.int64)
        evals = np.zeros(7, dtype=np.int64)
        best_x = np.zeros(self.problem.dim) if pop.best_x is None else np.array(pop.best_x, dtype=float)
        best_e = np.array([pop.best_energy])
        lower, upper = self.problem.space.lower, self.problem.space.upper
        done = 0
        while done < count:
            T = min(self.BLOCK, count - done)
            if phase == "main":
                ts = range(self.t + done + 1, self.t + done + T + 1)
                taus = np.array([temperature_at(cfg.temperature, t) for t in ts])
                gammas = np.array([gain_at(cfg.gain, t) for t in ts])
            else:
                taus, gammas = np.full(T, tau), np.zeros(T)
            g = self.streams
            draws = [g["ctrl"].random((T, widths["ctrl"])), g["mut"].standard_normal((T, widths["mut"])),
                     g["mut_u"].random((T, widths["mut_u"])), g["cross"].random((T, widths["cross"])),
                     g["cross_n"].standard_normal((T, widths["cross_n"]))]
            J = pop.J if not sa_like else np.zeros(cfg.kappa, dtype=np.int64)
            _fast.run_block(kind, *params, pop.X, pop.E, J, theta, nonempty, visits, grid, pi,
                            phase == "main" and not sa_like and cfg.adapt_theta, trunc, taus, gammas,
                            mut_cum, np.array([codes[k] for k in mut_names], dtype=np.int64),
                            cross_cum, np.array([codes[k] for k in cross_names] or [KC_CODE], dtype=np.int64),
                            slots, float(cfg.operators.crossover_per_sweep), scales,
                            int(cfg.operators.km_k), int(cfg.operators.kc_k),
                            np.array([sel.tau_kc, sel.tau_sc, sel.tau_lc]), bool(cfg.operators.literal_selection),
                            bool(cfg.operators.subregion_scaling) and not sa_like,
                            bool(cross_names) and phase != "warm",
                            lower, upper, wrap_kind, n_theta, *draws, attempts, accepts, evals, best_x, best_e)
            if not sa_like:
                pop.J = J
            done += T
        if phase == "main":
            self.t += count
        if not sa_like and phase == "main":
            self.theta = ThetaState._trusted(theta, nonempty, int(trunc[2]), self.theta.theta_reset)
        self.problem.n_evals += int(evals.sum())
        for op, k in codes.items():
            stats.add(op, attempts[k], accepts[k], evals[k])
        if best_e[0] < pop.best_energy:
            pop.best_energy = float(best_e[0])
            pop.best_x = best_x

    # -- main loop
    def step(self):
        self._advance(1, "main")
        if self.t % self.cfg.stride == 0 or self.t == self.cfg.n:
            self._record()

    def _record(self):
        tr, cfg, t = self.trace, self.cfg, self.t
        if tr.t and tr.t[-1] == t:
            return
        tr.t.append(t)
        tr.tau.append(temperature_at(cfg.temperature, max(t, 1)))
        tr.gamma.append(gain_at(cfg.gain, max(t, 1)))
        tr.best_energy.append(self.pop.best_energy)
        tr.accept.append([self.stats.rate(op) for op in tr.ops])
        full = self._records % cfg.theta_stride == 0 or t == cfg.n
        if self.theta is not None and full:
            total = self.visit_counts.sum()
            tr.visits.append(self.visit_counts / total if total else np.zeros(cfg.partition.m))
            tr.theta.append(self.theta.theta.copy())
        else:
            tr.visits.append(None)
            tr.theta.append(None)
        self._records += 1

    def run(self, until: int | None = None, checkpoint_path=None, checkpoint_every: int | None = None) -> Trace:
        if self.pop is None:
            self.initialize()
        until = self.cfg.n if until is None else min(until, self.cfg.n)
        while self.t < until:
            nxt = min(until, (self.t // self.cfg.stride + 1) * self.cfg.stride)
            if checkpoint_path and checkpoint_every:
                nxt = min(nxt, (self.t // checkpoint_every + 1) * checkpoint_every)
            self._advance(nxt - self.t, "main")
            if self.t % self.cfg.stride == 0 or self.t == self.cfg.n:
                self._record()
            if checkpoint_path and checkpoint_every and self.t % checkpoint_every == 0:
                self.checkpoint(checkpoint_path)
        return self.finish()

    def finish(self) -> Trace:
        tr = self.trace
        if self.theta is not None:
            tr.raw_theta = self.theta
            tr.final_theta = normalize_theta(self.theta, self.cfg.normalization, self.setup.pi)
        tr.best_x = self.pop.best_x
        tr.n_evals = self.problem.n_evals - self._evals0
        tr.evals = {op: self.stats.evals[op] for op in tr.ops}
        tr.attempts = {op: self.stats.attempts[op] for op in tr.ops}
        tr.pilot = self.pilot_acceptance()
        tr.scales = {op: s.var for op, s in self.scales.items()}
        return tr

    # -- checkpointing
    def checkpoint(self, path):
        state = {
            "version": CHECKPOINT_VERSION,
            "cfg": self.cfg,
            "t": self.t,
            "pop": self.pop,
            "theta": self.theta,
            "scales": self.scales,
            "stats": self.stats,
            "pilot_stats": self.pilot_stats,
            "pilot_history": self.pilot_history,
            "visit_counts": self.visit_counts,
            "trace": self.trace,
            "records": self._records,
            "rng": {k: g.bit_generator.state for k, g in self.streams.items()},
            "n_evals": self.problem.n_evals - self._evals0,
        }
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(state, fh, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(path)

    @classmethod
    def from_checkpoint(cls, path, problem: Problem | None = None) -> "Runner":
        with open(path, "rb") as fh:
            state = pickle.load(fh)
        if state.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {state.get('version')!r}")
        self = cls(state["cfg"], problem)
        for k, g in self.streams.items():
            g.bit_generator.state = state["rng"][k]
        self.t = state["t"]
        self.pop = state["pop"]
        self.theta = state["theta"]
        self.scales = state["scales"]
        self.stats = state["stats"]
        self.pilot_stats = state["pilot_stats"]
        self.pilot_history = state["pilot_history"]
        self.visit_counts = state["visit_counts"]
        self.trace = state["trace"]
        self._records = state["records"]
        self._evals0 = self.problem.n_evals - state["n_evals"]
        return self


def _merge_psaa(traces: list, cfg: RunConfig) -> Trace:
    base = traces[0]
    out = Trace(ops=base.ops, m=base.m, t=list(base.t), tau=list(base.tau), gamma=list(base.gamma))
    out.best_energy = list(np.minimum.reduce([np.asarray(tr.best_energy) for tr in traces]))
    with warnings.catch_warnings():
        # rows where no chain has attempted an operator yet stay NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        out.accept = [list(np.nanmean([tr.accept[k] for tr in traces], axis=0)) if base.ops else []
                      for k in range(len(base.t))]
        out.pilot = {op: float(np.nanmean([tr.pilot[op] for tr in traces])) for op in base.pilot}
    for name in ("visits", "theta"):
        rows = []
        for k in range(len(base.t)):
            blocks = [getattr(tr, name)[k] for tr in traces]
            rows.append(None if blocks[0] is None else np.mean(blocks, axis=0))
        setattr(out, name, rows)
    thetas = [tr.final_theta for tr in traces]
    mean = np.mean([th.theta for th in thetas], axis=0)
    nonempty = np.logical_or.reduce([th.nonempty for th in thetas])
    out.final_theta = ThetaState(mean, nonempty)
    out.raw_theta = out.final_theta
    k = int(np.argmin([tr.final_best for tr in traces]))
    out.best_x = traces[k].best_x
    out.n_evals = sum(tr.n_evals for tr in traces)
    out.evals = {op: sum(tr.evals[op] for tr in traces) for op in base.ops}
    out.attempts = {op: sum(tr.attempts[op] for tr in traces) for op in base.ops}
    out.scales = {op: float(np.mean([tr.scales[op] for tr in traces])) for op in base.scales}
    return out


def psaa_configs(cfg: RunConfig) -> list:
    return [replace(cfg, kappa=1, mode="pisaa", seed=s) for s in psaa_chain_seeds(cfg.seed, cfg.kappa)]


def run(cfg: RunConfig, problem: Problem | None = None) -> Trace:
    """Run to ``cfg.n`` iterations (any mode) and return the trace."""
    if cfg.mode == "psaa":
        return _merge_psaa([Runner(c, problem).run() for c in psaa_configs(cfg)], cfg)
    return Runner(cfg, problem).run()


def sa_run(cfg: RunConfig, problem: Problem | None = None) -> Trace:
    """Independent annealing chains with the same operators and ladder, no bias weights."""
    if cfg.mode != "sa":
        cfg = replace(cfg, mode="sa")
    return Runner(cfg, problem).run()


def resume(path, checkpoint_every: int | None = None) -> Trace:
    runner = Runner.from_checkpoint(path)
    return runner.run(checkpoint_path=path if checkpoint_every else None, checkpoint_every=checkpoint_every)


def config_dict(cfg: RunConfig) -> dict:
    """Plain, JSON-friendly view of a config (for manifests)."""
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name not in ("problem", "partition")}
    d = {k: asdict(v) if is_dataclass(v) else v for k, v in d.items()}
    d["problem"] = cfg.problem.describe() if isinstance(cfg.problem, Problem) else dict(cfg.problem)
    d["partition"] = None if cfg.partition is None else [float(u) for u in cfg.partition.grid]
    return d
