from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BoxSpace:
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(lo >= hi):
            raise ValueError("need lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, low: float, high: float, d: int) -> "BoxSpace":
        return cls(np.full(d, low), np.full(d, high))

    @property
    def d(self) -> int:
        return self.lower.size

    def contains(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lower) & (X <= self.upper), axis=1)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((size, self.d))


class Problem:
    """Cost function plus its sample space.

    Subclasses implement :meth:`_energies` on a 2-d batch of points. The
    public :meth:`energies` counts evaluations so budget audits can compare
    against the analytic count implied by the operator schedule.
    """

    name = "problem"
    discrete = False
    dtype = float

    def __init__(self, space: BoxSpace, init_space: BoxSpace | None = None):
        self.space = space
        self.init_space = init_space or space
        self.n_evals = 0

    @property
    def dim(self) -> int:
        return self.space.d

    def energies(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=self.dtype))
        self.n_evals += X.shape[0]
        return self._energies(X)

    def evaluate(self, X):
        """``(energies, aux)``; ``aux`` holds cached sufficient statistics or ``None``."""
        return self.energies(X), None

    def energy_from_aux(self, aux) -> np.ndarray:  # pragma: no cover - only for problems with aux
        raise NotImplementedError

    def energy(self, x) -> float:
        return float(self.energies(np.asarray(x, dtype=self.dtype)[None, :])[0])

    def _energies(self, X) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def contains(self, X) -> np.ndarray:
        return self.space.contains(X)

    def wrap(self, X) -> np.ndarray:
        """Map proposals back into canonical coordinates (angles); identity by default."""
        return X

    def sample_initial(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.init_space.sample(rng, size)

    def quadrature_boxes(self, tau: float, u_max: float):
        """Disjoint boxes covering the effective support of ``exp(-U/tau)``.

        Returning ``None`` means the problem does not admit a quadrature oracle.
        """
        return None

    def enumerate_states(self):
        """All states of a small discrete space, or ``None``."""
        return None

    def fast_spec(self):
        """``(energy_fn, params, wrap_kind, n_theta)`` for the compiled kernel, or ``None``."""
        return None

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim}
