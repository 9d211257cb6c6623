"""Deterministic control sequences and the energy partition.

Everything here is an immutable value object; the engine evaluates the
schedules at each iteration and shares the partition across chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Partition:
    """Energy grid ``u_1 < ... < u_{m-1}`` splitting the space into ``m`` subregions.

    Subregion ``j`` (1-based) holds the points with ``u_{j-1} < U(x) <= u_j``;
    the first and last subregions absorb everything below ``u_1`` and above
    ``u_{m-1}``.
    """

    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float).ravel()
        if grid.size < 1:
            raise ValueError("a partition needs at least one threshold (m >= 2)")
        if not np.all(np.isfinite(grid)):
            raise ValueError("partition thresholds must be finite")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("partition thresholds must be strictly increasing")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def m(self) -> int:
        return self.grid.size + 1

    @classmethod
    def uniform(cls, u_min: float, u_max: float, m: int) -> "Partition":
        """``m - 1`` equally spaced thresholds from ``u_min`` to ``u_max`` inclusive."""
        if m < 2:
            raise ValueError("m must be >= 2")
        if m == 2:
            return cls(np.array([u_min], dtype=float))
        if not u_max > u_min:
            raise ValueError("u_max must exceed u_min")
        return cls(np.linspace(u_min, u_max, m - 1))

    def locate(self, energy) -> np.ndarray:
        """0-based subregion labels for an array of energies (vectorised).

        NaN energies are treated as ``+inf`` and land in the last subregion.
        """
        e = np.asarray(energy, dtype=float)
        e = np.where(np.isnan(e), np.inf, e)
        return np.searchsorted(self.grid, e, side="left")


def subregion_index(partition: Partition, energy: float) -> int:
    """1-based label of the subregion containing ``energy`` (binary search)."""
    return int(partition.locate(energy)) + 1


@dataclass(frozen=True)
class DesiredProbability:
    pi: np.ndarray = field(repr=False)
    lam: float = 0.0

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @property
    def m(self) -> int:
        return self.pi.size


def desired_probability(lam: float, m: int) -> DesiredProbability:
    """Geometric desired sampling frequencies ``pi_j ~ exp(-lam (j - 1))``."""
    if m < 2:
        raise ValueError("m must be >= 2 (invalid partition)")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if math.isinf(lam):
        pi = np.zeros(m)
        pi[0] = 1.0
        return DesiredProbability(pi, lam)
    logw = -lam * np.arange(m, dtype=float)
    w = np.exp(logw - logw.max())
    return DesiredProbability(w / w.sum(), lam)


@dataclass(frozen=True)
class GainSchedule:
    n_gamma: int = 100
    beta: float = 0.55

    def __post_init__(self):
        if self.n_gamma <= 0:
            raise ValueError("n_gamma must be positive")
        # configs enforce (0.5, 1]; the bare formula accepts any positive exponent
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")


def gain_at(s: GainSchedule, t: int) -> float:
    """``gamma_t = (n_gamma / max(t, n_gamma)) ** beta``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    return (s.n_gamma / max(t, s.n_gamma)) ** s.beta


@dataclass(frozen=True)
class TemperatureLadder:
    tau_h: float = 1.0
    n_tau: int = 1
    tau_star: float = 0.01

    def __post_init__(self):
        if self.tau_h <= 0 or self.tau_star <= 0 or self.n_tau <= 0:
            raise ValueError("tau_h, n_tau and tau_star must be positive")


def temperature_at(ladder: TemperatureLadder, t: int) -> float:
    """Square-root cooling ``tau_h sqrt(n_tau / max(t, n_tau)) + tau_star``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    return ladder.tau_h * math.sqrt(ladder.n_tau / max(t, ladder.n_tau)) + ladder.tau_star


@dataclass(frozen=True)
class TruncationBounds:
    """Varying truncation bounds ``M_c = growth**c * M0``."""

    M0: float = 1e100
    growth: float = 1e10

    def __post_init__(self):
        if self.M0 <= 0 or self.growth <= 1:
            raise ValueError("need M0 > 0 and growth > 1")

    def bound(self, c: int) -> float:
        # float overflow saturates at inf, which is still a valid (never hit) bound
        try:
            return self.M0 * self.growth**c
        except OverflowError:
            return math.inf
