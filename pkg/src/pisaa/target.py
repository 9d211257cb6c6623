"""The self-adjusting biased Boltzmann target.

The working log bias weights ``theta`` flatten the Boltzmann density across
energy subregions; the population visit proportions drive them toward the
desired frequencies. Subregion labels are 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .schedules import DesiredProbability, Partition, TruncationBounds


@dataclass(frozen=True)
class ThetaState:
    theta: np.ndarray
    nonempty: np.ndarray  # bool mask over subregions, the set S_t
    trunc_count: int = 0
    theta_reset: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        nonempty = np.array(self.nonempty, dtype=bool)
        if theta.shape != nonempty.shape:
            raise ValueError("theta and nonempty mask must have the same length")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        reset = np.zeros_like(theta) if self.theta_reset is None else np.array(self.theta_reset, dtype=float)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "nonempty", nonempty)
        object.__setattr__(self, "theta_reset", reset)

    @classmethod
    def initial(cls, m: int, theta_reset=None) -> "ThetaState":
        reset = np.zeros(m) if theta_reset is None else np.asarray(theta_reset, dtype=float)
        return cls(reset.copy(), np.zeros(m, dtype=bool), 0, reset)

    @classmethod
    def _trusted(cls, theta, nonempty, trunc_count, theta_reset) -> "ThetaState":
        # skips validation and copies; arrays must be fresh and well-formed
        obj = object.__new__(cls)
        object.__setattr__(obj, "theta", theta)
        object.__setattr__(obj, "nonempty", nonempty)
        object.__setattr__(obj, "trunc_count", trunc_count)
        object.__setattr__(obj, "theta_reset", theta_reset)
        return obj

    @property
    def m(self) -> int:
        return self.theta.size


def biased_log_density(energy, j, theta, tau: float):
    """Unnormalised ``log f_{theta,tau}``: ``-energy / tau - theta[j]``.

    ``theta`` may be a :class:`ThetaState` or a plain vector; ``j`` is a
    0-based label (scalar or array matching ``energy``).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    th = theta.theta if isinstance(theta, ThetaState) else np.asarray(theta)
    return -np.asarray(energy, dtype=float) / tau - th[j]


@dataclass(frozen=True)
class BiasedTarget:
    """Frozen snapshot of the target used during one sampling update.

    With ``partition=None`` the target is the plain Boltzmann density
    (simulated annealing baseline): every point carries label 0 and zero bias.
    """

    partition: Partition | None
    theta: np.ndarray
    tau: float

    @classmethod
    def boltzmann(cls, tau: float) -> "BiasedTarget":
        return cls(None, np.zeros(1), tau)

    def locate(self, energy) -> np.ndarray:
        if self.partition is None:
            return np.zeros(np.shape(energy), dtype=np.intp)
        return self.partition.locate(energy)

    def log_density(self, energy, j):
        e = np.asarray(energy, dtype=float)
        with np.errstate(invalid="ignore"):
            out = -e / self.tau - self.theta[j]
        return np.where(np.isfinite(e), out, -np.inf)

    def log_ratio(self, e_new, j_new, e_old, j_old):
        """Log Metropolis ratio ``log f(new) - log f(old)``; ``-inf`` for infinite proposals."""
        e_new = np.asarray(e_new, dtype=float)
        with np.errstate(invalid="ignore"):
            r = -(e_new - e_old) / self.tau - (self.theta[j_new] - self.theta[j_old])
        return np.where(np.isfinite(e_new), r, -np.inf)


def visit_proportion(indices, m: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.intp).ravel()
    return np.bincount(idx, minlength=m)[:m] / idx.size


def weight_update(theta: ThetaState, pop_indices, pi: DesiredProbability | np.ndarray,
                  gamma: float, proposed_indices=None) -> ThetaState:
    """``theta' = theta + gamma (p - pi)`` restricted to the non-empty set.

    ``proposed_indices`` (labels of every state proposed during the sampling
    update) enlarge the non-empty set before the update; accepted states are
    always included as well.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    pi_vec = pi.pi if isinstance(pi, DesiredProbability) else np.asarray(pi, dtype=float)
    m = theta.m
    idx = np.asarray(pop_indices, dtype=np.intp).ravel()
    if idx.size < 1:
        raise ValueError("population must hold at least one individual")
    nonempty = theta.nonempty.copy()
    nonempty[idx] = True
    if proposed_indices is not None:
        nonempty[np.asarray(proposed_indices, dtype=np.intp).ravel()] = True
    p = np.bincount(idx, minlength=m) / idx.size
    new = theta.theta.copy()
    new[nonempty] += gamma * (p[nonempty] - pi_vec[nonempty])
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("weight update produced non-finite bias weights")
    return ThetaState._trusted(new, nonempty, theta.trunc_count, theta.theta_reset)


def truncate(theta: ThetaState, bounds: TruncationBounds) -> ThetaState:
    """Reset to ``theta_reset`` and bump the counter when ``||theta_S||_2`` exceeds ``M_c``."""
    th = theta.theta[theta.nonempty]
    if float(np.sqrt(th @ th)) <= bounds.bound(theta.trunc_count):
        return theta
    return ThetaState._trusted(theta.theta_reset.copy(), theta.nonempty.copy(), theta.trunc_count + 1,
                               theta.theta_reset)


def normalize_theta(theta: ThetaState, mode: str = "unit-sum", pi=None) -> ThetaState:
    """Additive gauge fix over the non-empty subregions.

    ``unit-sum`` makes ``sum_S exp(theta_j) = 1``; ``pi-weighted`` makes
    ``sum_S pi_j exp(theta_j) = 1``. Entries outside the non-empty set keep
    their reset values. If nothing has been visited yet, every subregion is
    treated as non-empty.
    """
    mask = theta.nonempty if theta.nonempty.any() else np.ones(theta.m, dtype=bool)
    th = theta.theta
    if mode == "unit-sum":
        z = -logsumexp(th[mask])
    elif mode == "pi-weighted":
        if pi is None:
            raise ValueError("pi-weighted normalisation needs the desired probability")
        pi_vec = pi.pi if isinstance(pi, DesiredProbability) else np.asarray(pi, dtype=float)
        z = -logsumexp(th[mask], b=pi_vec[mask])
    else:
        raise ValueError(f"unknown normalisation mode {mode!r}")
    new = th.copy()
    new[mask] += z
    return replace(theta, theta=new)
