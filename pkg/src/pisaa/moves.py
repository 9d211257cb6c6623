"""Mutation and crossover kernels, partner selection and scale adaptation.

Every kernel works on a batch of individuals and leaves the frozen target
``f_{theta,tau}`` invariant. Random numbers are always drawn in the order
documented on each function, so a run is a deterministic function of its
streams no matter how the batch is split.

Proposals that leave the sample space are still evaluated (and counted) but
get energy ``+inf`` and are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .problems.base import Problem
from .target import BiasedTarget

TARGET_RATE = 0.234
MUTATIONS = ("mrw", "hr", "km", "gibbs")
CROSSOVERS = ("kc", "sc", "lc")


@dataclass(frozen=True)
class ProposalScale:
    """``log_var`` is ``log sigma^2``; proposals move by ``sigma^2`` times a unit draw."""

    log_var: float = math.log(0.1)
    target_rate: float = TARGET_RATE
    frozen: bool = False

    @classmethod
    def from_var(cls, var: float, **kw) -> "ProposalScale":
        if var <= 0:
            raise ValueError("proposal variance must be positive")
        return cls(math.log(var), **kw)

    @property
    def var(self) -> float:
        return math.exp(self.log_var)

    def freeze(self) -> "ProposalScale":
        return replace(self, frozen=True)


def adapt_scale(scale: ProposalScale, observed_accept: float) -> ProposalScale:
    if scale.frozen:
        raise ValueError("cannot adapt a frozen proposal scale")
    if not 0.0 <= observed_accept <= 1.0:
        raise ValueError("acceptance rate must lie in [0, 1]")
    return replace(scale, log_var=scale.log_var + (observed_accept - scale.target_rate))


@dataclass(frozen=True)
class SelectionTemps:
    tau_kc: float = 0.1
    tau_sc: float = 0.1
    tau_lc: float = 0.1

    def __post_init__(self):
        if min(self.tau_kc, self.tau_sc, self.tau_lc) <= 0:
            raise ValueError("selection temperatures must be positive")


@dataclass(frozen=True)
class MoveContext:
    """What a kernel needs besides the population: the problem and the frozen target.

    With ``subregion_scaling`` the step of an individual in subregion ``j``
    (1-based) is multiplied by ``j / (m + 1)``; the proposal is then no
    longer symmetric and a Hastings correction is applied.
    """

    problem: Problem
    target: BiasedTarget
    subregion_scaling: bool = False

    def step(self, base: float, labels) -> np.ndarray:
        labels = np.asarray(labels)
        if not self.subregion_scaling or self.target.partition is None:
            return np.full(labels.shape, base)
        return base * (labels + 1.0) / (self.target.partition.m + 1.0)


class MoveResult(NamedTuple):
    X: np.ndarray
    E: np.ndarray
    J: np.ndarray
    aux: np.ndarray | None
    accepted: np.ndarray  # bool per attempted individual
    proposal_energy: np.ndarray
    proposals: np.ndarray  # proposed points, for best-so-far tracking


def _log_uniform(rng, size):
    with np.errstate(divide="ignore"):
        return np.log(rng.random(size))


def _evaluate(ctx: MoveContext, Y):
    """Wrap, evaluate, and blank out-of-support proposals to ``+inf``."""
    Y = ctx.problem.wrap(Y)
    E, aux = ctx.problem.evaluate(Y)
    E = np.array(E, dtype=float)
    E[~ctx.problem.contains(Y)] = np.inf
    return Y, E, aux, ctx.target.locate(E)


def _commit(X, E, J, aux, Y, Ey, Jy, auxy, acc):
    X, E, J = X.copy(), E.copy(), J.copy()
    X[acc], E[acc], J[acc] = Y[acc], Ey[acc], Jy[acc]
    if aux is not None:
        aux = aux.copy()
        aux[acc] = auxy[acc]
    return X, E, J, aux


class Proposal(NamedTuple):
    D: np.ndarray  # displacement before wrapping
    base: np.ndarray  # per-individual sigma^2 before subregion scaling
    step: np.ndarray  # per-individual step after subregion scaling
    dist: np.ndarray  # |displacement| along the proposal's own axis
    d_eff: np.ndarray  # dimension of the proposal's normal draw (for the Hastings term)


def propose_mutations(choice, names, J, d: int, scales: dict, ctx: MoveContext, rng, k=None) -> Proposal:
    """Displacements for a batch where row ``i`` uses operator ``names[choice[i]]``.

    Draws, each over the whole batch: ``standard_normal((B, d))``; then
    ``standard_normal(B)`` if any of ``hr``/``km`` is in ``names``; then
    ``random((B, d))`` if ``km`` is in ``names``. ``mrw`` uses the first
    draw directly, ``hr`` normalises it to a direction, ``km`` ranks the
    uniform keys to pick ``k`` coordinates.
    """
    B = len(J)
    choice = np.asarray(choice)
    Z = rng.standard_normal((B, d))
    r = rng.standard_normal(B) if ("hr" in names or "km" in names) else None
    keys = rng.random((B, d)) if "km" in names else None
    D = np.empty((B, d))
    base = np.empty(B)
    dist = np.empty(B)
    d_eff = np.ones(B)
    for code, name in enumerate(names):
        rows = choice == code if len(names) > 1 else slice(None)
        base[rows] = scales[name].var
        s = ctx.step(scales[name].var, J[rows])
        if name == "mrw":
            D[rows] = s[:, None] * Z[rows]
            dist[rows] = np.abs(s) * np.sqrt(np.einsum("ij,ij->i", Z[rows], Z[rows]))
            d_eff[rows] = d
            continue
        if name == "hr":
            z = Z[rows]
            norm = np.sqrt(np.einsum("ij,ij->i", z, z))[:, None]
            e = np.divide(z, norm, out=np.zeros_like(z), where=norm > 0)
        elif name == "km":
            if k is None or not 1 <= k < d:
                raise ValueError(f"k-point mutation needs 1 <= k < d, got k={k}, d={d}")
            kk = keys[rows]
            e = np.zeros_like(kk)
            np.put_along_axis(e, np.argpartition(kk, k - 1, axis=1)[:, :k], 1.0, axis=1)
        else:
            raise ValueError(f"unknown continuous mutation {name!r}")
        step = s * r[rows]
        D[rows] = step[:, None] * e
        dist[rows] = np.abs(step)
    return Proposal(D, base, ctx.step(1.0, J) * base, dist, d_eff)


def hastings_correction(prop: Proposal, Jy, ctx: MoveContext) -> np.ndarray:
    """``log q(x | y) - log q(y | x)`` for subregion-scaled normal proposals."""
    if not ctx.subregion_scaling or ctx.target.partition is None:
        return np.zeros(prop.step.shape)
    s_x, s_y = prop.step, ctx.step(1.0, Jy) * prop.base
    return prop.d_eff * (np.log(s_x) - np.log(s_y)) + 0.5 * prop.dist**2 * (1.0 / s_x**2 - 1.0 / s_y**2)


def metropolis_accept(X, E, J, aux, D, corr, ctx: MoveContext, rng) -> MoveResult:
    """Evaluate ``X + D`` and accept each row with ``min(1, ratio)``; draws ``random(B)``."""
    Y, Ey, auxy, Jy = _evaluate(ctx, X + D)
    log_r = ctx.target.log_ratio(Ey, Jy, E, J)
    if corr is not None:
        c = corr(Jy) if callable(corr) else corr
        log_r = np.where(np.isfinite(Ey), log_r + c, -np.inf)
    acc = _log_uniform(rng, len(E)) < log_r
    X2, E2, J2, aux2 = _commit(X, E, J, aux, Y, Ey, Jy, auxy, acc)
    return MoveResult(X2, E2, J2, aux2, acc, Ey, Y)


def mutate(X, E, J, choice, names, scales: dict, ctx: MoveContext, rng, k=None, aux=None) -> MoveResult:
    """One continuous mutation attempt per row, all evaluated in one batch."""
    prop = propose_mutations(choice, names, J, X.shape[1], scales, ctx, rng, k)
    corr = (lambda Jy: hastings_correction(prop, Jy, ctx)) if ctx.subregion_scaling else None
    return metropolis_accept(X, E, J, aux, prop.D, corr, ctx, rng)


def _continuous_mutation(kind, X, E, J, aux, scale, ctx, rng, k=None):
    return mutate(X, E, J, np.zeros(len(J), dtype=np.intp), (kind,), {kind: scale}, ctx, rng, k, aux)


def metropolis_mutation(X, E, J, scale: ProposalScale, ctx: MoveContext, rng, aux=None) -> MoveResult:
    """Random-walk move ``x + sigma^2 r``, ``r`` standard normal.

    Draws: ``standard_normal((B, d))``, then ``random(B)``.
    """
    return _continuous_mutation("mrw", np.atleast_2d(X), np.asarray(E, float), np.asarray(J), aux,
                                scale, ctx, rng)


def hit_and_run_mutation(X, E, J, scale: ProposalScale, ctx: MoveContext, rng, aux=None) -> MoveResult:
    """Move ``x + sigma^2 r e`` along a uniform direction ``e``.

    Draws: ``standard_normal((B, d))`` (direction), ``standard_normal(B)``, ``random(B)``.
    """
    return _continuous_mutation("hr", np.atleast_2d(X), np.asarray(E, float), np.asarray(J), aux,
                                scale, ctx, rng)


def kpoint_mutation(X, E, J, k: int, scale: ProposalScale, ctx: MoveContext, rng, aux=None) -> MoveResult:
    """Shift ``k`` random coordinates by the same ``sigma^2 r``.

    Draws: ``standard_normal((B, d))`` (unused), ``standard_normal(B)``,
    ``random((B, d))`` (coordinate keys), ``random(B)``.
    """
    return _continuous_mutation("km", np.atleast_2d(X), np.asarray(E, float), np.asarray(J), aux,
                                scale, ctx, rng, k=k)


def gibbs_probability(log_f1, log_f0):
    """Probability of setting the pixel to 1 given both conditional log densities."""
    return expit(np.asarray(log_f1) - np.asarray(log_f0))


def gibbs_pixel_mutation(X, E, J, ctx: MoveContext, rng, aux=None) -> MoveResult:
    """Resample one uniformly chosen pixel from its full conditional.

    Draws: ``integers(0, p, B)`` (pixel), then ``random(B)``.
    """
    X = np.atleast_2d(X)
    B, p = X.shape
    problem = ctx.problem
    pix = rng.integers(0, p, size=B)
    rows = np.arange(B)
    Y = X.copy()
    Y[rows, pix] = 1 - X[rows, pix]
    if aux is not None and hasattr(problem, "flip_stats_delta"):
        auxy = aux + problem.flip_stats_delta(X, pix)
        problem.n_evals += B
        Ey = problem.energy_from_stats(auxy)
    else:
        Ey, auxy = problem.evaluate(Y)
    Ey = np.asarray(Ey, float)
    Jy = ctx.target.locate(Ey)
    lf_cur = ctx.target.log_density(E, J)
    lf_flip = ctx.target.log_density(Ey, Jy)
    cur_is_one = X[rows, pix] == 1
    w1 = gibbs_probability(np.where(cur_is_one, lf_cur, lf_flip), np.where(cur_is_one, lf_flip, lf_cur))
    new_val = (rng.random(B) < w1).astype(X.dtype)
    changed = new_val != X[rows, pix]
    X2, E2, J2, aux2 = _commit(X, np.asarray(E, float), np.asarray(J), aux, Y, Ey, Jy, auxy, changed)
    return MoveResult(X2, E2, J2, aux2, changed, Ey, Y)


# ---------------------------------------------------------------- selection

def _lse(z) -> float:
    m = z.max()
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.exp(z - m).sum()))


def _softmax(z):
    # scipy's logsumexp costs ~0.2 ms per call on tiny vectors; this is the hot path
    w = np.exp(z - z.max())
    return w / w.sum()


def selection_weights(energies, temp: float) -> np.ndarray:
    """Softmax of ``-U / temp``; ``+inf`` energies get weight 0."""
    return _softmax(-np.asarray(energies, dtype=float) / temp)


def partner_weights(energies, i: int, temp: float, literal: bool = False) -> np.ndarray:
    """Distribution of the partner ``j != i``.

    The default uses each candidate's own energy in the numerator. With
    ``literal=True`` every candidate gets the numerator of ``i`` itself,
    which normalises to the uniform distribution over ``j != i``.
    """
    e = np.asarray(energies, dtype=float)
    n = e.size
    if literal:
        w = np.full(n, 1.0 / (n - 1))
        w[i] = 0.0
        return w
    z = -e / temp
    z[i] = -np.inf
    return _softmax(z)


def _log_pair(z, lse_all, i, j, literal):
    if literal:
        return z[i] - lse_all - math.log(z.size - 1)
    rest = z.copy()
    rest[i] = -np.inf
    return z[i] - lse_all + z[j] - _lse(rest)


def log_pair_probability(energies, i: int, j: int, temp: float, literal: bool = False) -> float:
    z = -np.asarray(energies, dtype=float) / temp
    return float(_log_pair(z, _lse(z), i, j, literal))


def log_symmetric_pair_probability(energies, i: int, j: int, temp: float, literal: bool = False) -> float:
    """``log(P(i then j) + P(j then i))``."""
    z = -np.asarray(energies, dtype=float) / temp
    lse = _lse(z)
    a, b = _log_pair(z, lse, i, j, literal), _log_pair(z, lse, j, i, literal)
    hi = max(a, b)
    return hi + math.log1p(math.exp(min(a, b) - hi)) if hi > -math.inf else -math.inf


def pair_probability(energies, i: int, j: int, temp: float, literal: bool = False) -> float:
    """Ordered probability of drawing ``i`` first and then ``j``."""
    return math.exp(log_pair_probability(energies, i, j, temp, literal))


class PairDraw(NamedTuple):
    i: int
    j: int
    forward_prob: float  # P(i then j)
    reverse_prob: float  # P(j then i), same energies


def _draw(weights, u) -> int:
    c = np.cumsum(weights)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), weights.size - 1))


def select_pair(energies, temp: float, rng, literal: bool = False) -> PairDraw:
    """Energy-weighted ordered pair; draws ``random()`` twice.

    ``forward_prob + reverse_prob`` is the symmetrised selection probability
    used in the k-point crossover acceptance ratio.
    """
    e = np.asarray(energies, dtype=float)
    if e.size < 2:
        raise ValueError("crossover needs at least two individuals")
    i = _draw(selection_weights(e, temp), rng.random())
    j = _draw(partner_weights(e, i, temp, literal), rng.random())
    return PairDraw(i, j, pair_probability(e, i, j, temp, literal), pair_probability(e, j, i, temp, literal))


# ---------------------------------------------------------------- crossovers

class CrossoverResult(NamedTuple):
    X: np.ndarray
    E: np.ndarray
    J: np.ndarray
    aux: np.ndarray | None
    accepted: bool
    attempted: bool
    proposal_energy: np.ndarray
    proposals: np.ndarray
    n_evals: int


def swap_mask(points, d: int) -> np.ndarray:
    """Coordinates exchanged by a crossover with sorted cut points in ``1..d-1``.

    Segments ``[p1, p2), [p3, p4), ...`` are swapped; an unpaired last point
    swaps through the end.
    """
    mask = np.zeros(d, dtype=bool)
    pts = list(points) + ([d] if len(points) % 2 else [])
    for a, b in zip(pts[0::2], pts[1::2]):
        mask[a:b] = True
    return mask


def crossover_children(xi, xj, points):
    mask = swap_mask(points, xi.size)
    yi, yj = xi.copy(), xj.copy()
    yi[mask], yj[mask] = xj[mask], xi[mask]
    return yi, yj


def kpoint_crossover(X, E, J, k: int, ctx: MoveContext, temp: float, rng, aux=None,
                     literal: bool = False) -> CrossoverResult:
    """Segment exchange between an energy-selected pair; both children accepted jointly.

    Draws: two ``random()`` (pair), ``choice(d - 1, k)`` (cut points), ``random()``.
    """
    B, d = X.shape
    if not 1 <= k <= d - 1:
        raise ValueError(f"k-point crossover needs 1 <= k <= d - 1, got k={k}, d={d}")
    pair = select_pair(E, temp, rng, literal)
    i, j = pair.i, pair.j
    points = np.sort(rng.choice(d - 1, size=k, replace=False) + 1)
    yi, yj = crossover_children(X[i], X[j], points)
    Y, Ey, auxy, Jy = _evaluate(ctx, np.stack([yi, yj]))
    E_new = E.copy()
    E_new[[i, j]] = Ey
    if np.all(np.isfinite(Ey)):
        log_r = float(np.sum(ctx.target.log_ratio(Ey, Jy, E[[i, j]], J[[i, j]])))
        log_r += (log_symmetric_pair_probability(E_new, i, j, temp, literal)
                  - log_symmetric_pair_probability(E, i, j, temp, literal))
    else:
        log_r = -math.inf
    acc = bool(_log_uniform(rng, None) < log_r)
    if acc:
        X, E, J = X.copy(), E_new, J.copy()
        X[[i, j]] = Y
        J[[i, j]] = Jy
        if aux is not None:
            aux = aux.copy()
            aux[[i, j]] = auxy
    return CrossoverResult(X, E, J, aux, acc, True, Ey, Y, 2)


def _single_child(X, E, J, i, y, ctx, rng, aux):
    Y, Ey, auxy, Jy = _evaluate(ctx, y[None, :])
    log_r = ctx.target.log_ratio(Ey, Jy, E[i], J[i])[0]
    acc = bool(_log_uniform(rng, None) < log_r)
    if acc:
        X, E, J = X.copy(), E.copy(), J.copy()
        X[i], E[i], J[i] = Y[0], Ey[0], Jy[0]
        if aux is not None:
            aux = aux.copy()
            aux[i] = auxy[0]
    return CrossoverResult(X, E, J, aux, acc, True, Ey, Y, 1)


def _uniform_then_weighted(E, temp, rng):
    i = int(rng.integers(0, E.size))
    j = _draw(partner_weights(E, i, temp), rng.random())
    return i, j


def snooker_crossover(X, E, J, scale: ProposalScale, ctx: MoveContext, temp: float, rng,
                      aux=None) -> CrossoverResult:
    """Move ``x_i`` along the line towards an energy-selected partner ``x_j``.

    Acceptance is the plain density ratio, without a Jacobian term.
    Draws: ``integers`` (i), ``random()`` (j), ``standard_normal()``, ``random()``.
    A coincident pair is skipped and counted as a rejection (no evaluation).
    """
    if X.shape[0] < 2:
        raise ValueError("crossover needs at least two individuals")
    i, j = _uniform_then_weighted(E, temp, rng)
    r = rng.standard_normal()
    diff = X[j] - X[i]
    norm = float(np.linalg.norm(diff))
    if norm == 0.0:
        rng.random()
        return CrossoverResult(X, E, J, aux, False, True, np.empty(0), np.empty((0, X.shape[1])), 0)
    step = ctx.step(scale.var, J[i]).item()
    return _single_child(X, E, J, i, X[i] + step * r * diff / norm, ctx, rng, aux)


def linear_crossover(X, E, J, ctx: MoveContext, temp: float, rng, aux=None) -> CrossoverResult:
    """Propose ``x_i + r x_j`` with ``r`` uniform on the open interval (-1, 1).

    Draws: ``integers`` (i), ``random()`` (j), ``uniform(-1, 1)`` (redrawn on -1), ``random()``.
    """
    if X.shape[0] < 2:
        raise ValueError("crossover needs at least two individuals")
    i, j = _uniform_then_weighted(E, temp, rng)
    r = rng.uniform(-1.0, 1.0)
    while r == -1.0:
        r = rng.uniform(-1.0, 1.0)
    return _single_child(X, E, J, i, X[i] + r * X[j], ctx, rng, aux)
