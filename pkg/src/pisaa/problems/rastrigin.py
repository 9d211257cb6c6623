from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import BoxSpace, Problem


@dataclass(frozen=True)
class RotationMatrix:
    R: np.ndarray = field(repr=False)
    seed: int | None = None


def salomon_rotation(d: int, seed=None) -> RotationMatrix:
    """Random orthogonal matrix as a product of planar (Givens) rotations.

    Every axis pair is visited once, in random order, with a uniform angle in
    ``[-pi, pi)``. The result is re-polished with a polar decomposition if
    rounding pushes ``R^T R`` away from the identity by more than 1e-12.
    """
    if d < 2:
        raise ValueError("rotation needs d >= 2")
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    order = rng.permutation(len(pairs))
    angles = rng.uniform(-np.pi, np.pi, size=len(pairs))
    R = np.eye(d)
    for k, a in zip(order, angles):
        i, j = pairs[k]
        c, s = np.cos(a), np.sin(a)
        ri, rj = R[i].copy(), R[j].copy()
        R[i] = c * ri - s * rj
        R[j] = s * ri + c * rj
    if np.abs(R.T @ R - np.eye(d)).max() > 1e-12:
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
    R.setflags(write=False)
    return RotationMatrix(R, seed)


def rastrigin(y) -> np.ndarray:
    y = np.atleast_2d(y)
    d = y.shape[1]
    return 10.0 * d + np.sum(y * y - 10.0 * np.cos(2 * np.pi * y), axis=1)


def rotated_rastrigin(x, R: RotationMatrix | np.ndarray | None = None) -> float:
    x = np.asarray(x, dtype=float)
    if R is not None:
        mat = R.R if isinstance(R, RotationMatrix) else np.asarray(R)
        x = mat @ x
    return float(rastrigin(x[None, :])[0])


class RotatedRastrigin(Problem):
    name = "rastrigin"

    def __init__(self, dim: int = 2, rotation_seed=0, bound: float = 5.12):
        self.rotation = salomon_rotation(dim, rotation_seed) if dim >= 2 else None
        super().__init__(BoxSpace.cube(-bound, bound, dim))
        self._Rt = None if self.rotation is None else np.ascontiguousarray(self.rotation.R.T)

    def _energies(self, X):
        Y = X if self._Rt is None else X @ self._Rt
        return rastrigin(Y)

    def fast_spec(self):
        from .. import _fast
        R = np.eye(self.dim) if self.rotation is None else np.ascontiguousarray(self.rotation.R)
        return _fast.RASTRIGIN, (R, _fast.no_array(), np.zeros(1)), 0, 0

    def describe(self):
        seed = None if self.rotation is None else self.rotation.seed
        return {"name": self.name, "dim": self.dim, "rotation_seed": seed}
