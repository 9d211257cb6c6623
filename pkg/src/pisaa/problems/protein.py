"""Off-lattice AB heteropolymer in two and three dimensions.

Monomer types follow the Fibonacci words ``S0 = A, S1 = B, S_i = S_{i-2} S_{i-1}``;
consecutive beads are joined by rigid unit bonds. Only the bond direction
angles are free, and a fixed gauge removes the global rotations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .base import BoxSpace, Problem

TWO_PI = 2.0 * np.pi

# gauge for (theta_1, phi_1, phi_2); "planar" keeps the first two bonds in the
# xy-plane so the 3D chain with every free phi = pi/2 is the 2D chain.
GAUGES = {
    "planar": (0.0, np.pi / 2, np.pi / 2),
    "literal": (0.0, 0.0, 0.0),
}


@lru_cache(maxsize=None)
def fibonacci_sequence(n: int) -> str:
    if n < 3:
        raise ValueError("chain length must be a Fibonacci number >= 3")
    words = ["A", "B"]
    while len(words[-1]) < n:
        words.append(words[-2] + words[-1])
    if len(words[-1]) != n:
        raise ValueError(f"{n} is not a Fibonacci number")
    return words[-1]


def _coupling(sequence: str, dim: int) -> np.ndarray:
    is_a = np.array([c == "A" for c in sequence])
    both_a = is_a[:, None] & is_a[None, :]
    both_b = ~is_a[:, None] & ~is_a[None, :]
    if dim == 2:
        return np.where(both_a, 1.0, np.where(both_b, 0.5, -0.5))
    return np.where(both_a, 1.0, 0.5)


@dataclass(frozen=True)
class AbChain:
    """Gauge-fixed AB chain.

    ``angles`` holds ``theta_2..theta_{N-1}`` in 2D (``d = N - 2``) and
    ``theta_2..theta_{N-1}, phi_3..phi_{N-1}`` in 3D (``d = 2N - 5``).
    """

    sequence: str
    dim: int
    angles: np.ndarray = field(repr=False)
    gauge: str = "planar"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if set(self.sequence) - {"A", "B"}:
            raise ValueError("sequence must contain only A and B")
        angles = np.asarray(self.angles, dtype=float).ravel()
        if angles.size != angle_dimension(len(self.sequence), self.dim):
            raise ValueError(f"expected {angle_dimension(len(self.sequence), self.dim)} angles, got {angles.size}")
        object.__setattr__(self, "angles", angles)

    @classmethod
    def fibonacci(cls, n: int, dim: int, angles=None, gauge: str = "planar") -> "AbChain":
        seq = fibonacci_sequence(n)
        if angles is None:
            angles = np.zeros(angle_dimension(n, dim))
            if dim == 3:
                angles[n - 2:] = np.pi / 2
        return cls(seq, dim, angles, gauge)

    @property
    def n(self) -> int:
        return len(self.sequence)

    def positions(self) -> np.ndarray:
        u = bond_vectors(self.angles[None, :], self.n, self.dim, self.gauge)
        return _positions(u)[0]


def angle_dimension(n: int, dim: int) -> int:
    return n - 2 if dim == 2 else 2 * n - 5


def bond_vectors(params: np.ndarray, n: int, dim: int, gauge: str = "planar") -> np.ndarray:
    """Unit bond vectors ``u_1..u_{N-1}`` for a batch of gauge-fixed angle vectors."""
    b = params.shape[0]
    if dim == 2:
        theta = np.concatenate([np.zeros((b, 1)), params], axis=1)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    th1, ph1, ph2 = GAUGES[gauge]
    theta = np.concatenate([np.full((b, 1), th1), params[:, : n - 2]], axis=1)
    phi = np.concatenate([np.full((b, 1), ph1), np.full((b, 1), ph2), params[:, n - 2:]], axis=1)
    sp = np.sin(phi)
    return np.stack([np.cos(theta) * sp, np.sin(theta) * sp, np.cos(phi)], axis=-1)


def _positions(u: np.ndarray) -> np.ndarray:
    b, _, dim = u.shape
    return np.concatenate([np.zeros((b, 1, dim)), np.cumsum(u, axis=1)], axis=1)


@lru_cache(maxsize=None)
def _pair_index(n: int):
    return np.triu_indices(n, k=2)


def _lj_energy(pos: np.ndarray, coupling: np.ndarray) -> np.ndarray:
    n = pos.shape[1]
    i, j = _pair_index(n)
    diff = pos[:, i, :] - pos[:, j, :]
    r2 = np.einsum("bkd,bkd->bk", diff, diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv6 = 1.0 / (r2 * r2 * r2)
        terms = 4.0 * (inv6 * inv6 - coupling[i, j] * inv6)
    out = terms.sum(axis=1)
    return np.where(np.any(r2 == 0.0, axis=1), np.inf, out)


def ab_energies(params, sequence: str, dim: int, gauge: str = "planar") -> np.ndarray:
    params = np.atleast_2d(np.asarray(params, dtype=float))
    n = len(sequence)
    u = bond_vectors(params, n, dim, gauge)
    dots1 = np.einsum("bkd,bkd->bk", u[:, :-1], u[:, 1:])
    if dim == 2:
        local = np.sum(0.25 * (1.0 - dots1), axis=1)
    else:
        dots2 = np.einsum("bkd,bkd->bk", u[:, :-2], u[:, 2:])
        local = dots1.sum(axis=1) - 0.5 * dots2.sum(axis=1)
    return local + _lj_energy(_positions(u), _coupling(sequence, dim))


def ab2d_energy(chain: AbChain) -> float:
    if chain.dim != 2:
        raise ValueError("expected a 2D chain")
    return float(ab_energies(chain.angles, chain.sequence, 2)[0])


def ab3d_energy(chain: AbChain) -> float:
    if chain.dim != 3:
        raise ValueError("expected a 3D chain")
    return float(ab_energies(chain.angles, chain.sequence, 3, chain.gauge)[0])


def energy_from_positions(pos: np.ndarray, sequence: str, dim: int) -> float:
    """Energy of an explicit bead configuration (any orientation), for cross-checks."""
    pos = np.asarray(pos, dtype=float)
    u = np.diff(pos, axis=0)[None]
    dots1 = np.einsum("bkd,bkd->bk", u[:, :-1], u[:, 1:])
    if dim == 2:
        local = np.sum(0.25 * (1.0 - dots1), axis=1)
    else:
        dots2 = np.einsum("bkd,bkd->bk", u[:, :-2], u[:, 2:])
        local = dots1.sum(axis=1) - 0.5 * dots2.sum(axis=1)
    return float((local + _lj_energy(pos[None], _coupling(sequence, dim)))[0])


def angles_from_positions(pos: np.ndarray, dim: int) -> np.ndarray:
    """Gauge-fixed ("planar") angle vector of a chain given bead positions.

    The configuration is rotated so the first bond lies on the x-axis and
    the second bond in the upper xy half-plane.
    """
    pos = np.asarray(pos, dtype=float)
    u = np.diff(pos, axis=0)
    e1 = u[0] / np.linalg.norm(u[0])
    w = u[1] - (u[1] @ e1) * e1
    if np.linalg.norm(w) < 1e-12:
        w = np.eye(dim)[np.argmin(np.abs(e1))]
        w = w - (w @ e1) * e1
    e2 = w / np.linalg.norm(w)
    if dim == 2:
        Q = np.stack([e1, e2])
        v = u @ Q.T
        theta = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
        return theta[1:]
    e3 = np.cross(e1, e2)
    Q = np.stack([e1, e2, e3])
    v = u @ Q.T
    theta = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
    phi = np.arccos(np.clip(v[:, 2], -1.0, 1.0))
    return np.concatenate([theta[1:], phi[2:]])


class ABProtein(Problem):
    name = "protein"

    def __init__(self, n: int = 13, dim: int = 2, gauge: str = "planar", init: str = "self_avoiding",
                 min_distance: float = 0.9):
        if gauge not in GAUGES:
            raise ValueError(f"unknown gauge {gauge!r}")
        if init not in ("self_avoiding", "uniform"):
            raise ValueError("init must be 'self_avoiding' or 'uniform'")
        self.init = init
        self.min_distance = float(min_distance)
        self.sequence = fibonacci_sequence(n)
        self.n = n
        self.chain_dim = dim
        self.gauge = gauge
        d = angle_dimension(n, dim)
        upper = np.full(d, TWO_PI)
        if dim == 3:
            upper[n - 2:] = np.pi
        super().__init__(BoxSpace(np.zeros(d), upper))
        self._phi_slice = slice(n - 2, None) if dim == 3 else slice(0, 0)

    def _energies(self, X):
        return ab_energies(X, self.sequence, self.chain_dim, self.gauge)

    def wrap(self, X):
        X = np.array(X, dtype=float, copy=True)
        if self.chain_dim == 2:
            return np.mod(X, TWO_PI)
        th = slice(0, self.n - 2)
        X[..., th] = np.mod(X[..., th], TWO_PI)
        phi = np.mod(X[..., self._phi_slice], TWO_PI)
        X[..., self._phi_slice] = np.where(phi > np.pi, TWO_PI - phi, phi)
        return X

    def contains(self, X):
        return np.ones(np.atleast_2d(X).shape[0], dtype=bool)

    def fast_spec(self):
        from .. import _fast
        th1, ph1, ph2 = GAUGES[self.gauge]
        meta = np.array([self.n, self.chain_dim, th1, ph1, ph2], dtype=float)
        C = np.ascontiguousarray(_coupling(self.sequence, self.chain_dim))
        return _fast.PROTEIN, (C, _fast.no_array(), meta), 1 if self.chain_dim == 2 else 2, self.n - 2

    def sample_initial(self, rng, size):
        if self.init == "uniform":
            return super().sample_initial(rng, size)
        return np.stack([self._grow(rng) for _ in range(size)])

    def _grow(self, rng, tries: int = 1000):
        # place bonds one at a time with uniform free angles, redrawing any bond that
        # brings its end monomer closer than min_distance to an earlier non-neighbour;
        # uniform starts in 2-d are mostly self-crossing, which no local move can undo
        low, high = self.space.lower, self.space.upper
        while True:
            x = np.zeros(self.dim)
            for b in range(1, self.n - 1):
                free = self._bond_params(b)
                for _ in range(tries):
                    x[free] = rng.uniform(low[free], high[free])
                    pos = _positions(bond_vectors(x[None], self.n, self.chain_dim, self.gauge))[0]
                    if np.min(np.linalg.norm(pos[:b] - pos[b + 1], axis=1)) >= self.min_distance:
                        break
                else:
                    break
            else:
                return x

    def _bond_params(self, b: int) -> list:
        """Parameter indices of bond ``b`` (0-based; bond 0 is fully gauge-fixed)."""
        if self.chain_dim == 2:
            return [b - 1]
        idx = [b - 1]
        if b >= 2:
            idx.append(self.n - 2 + b - 2)
        return idx

    def describe(self):
        return {"name": self.name, "dim": self.dim, "n": self.n, "chain_dim": self.chain_dim,
                "gauge": self.gauge, "init": self.init}
