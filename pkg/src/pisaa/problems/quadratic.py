from __future__ import annotations

import numpy as np

from .base import BoxSpace, Problem


class Quadratic(Problem):
    """``U(x) = scale * ||x||^2`` on a cube; a toy with an exact quadrature oracle."""

    name = "quadratic"

    def __init__(self, dim: int = 1, bound: float = 1.0, scale: float = 1.0):
        self.scale = float(scale)
        self.bound = float(bound)
        super().__init__(BoxSpace.cube(-bound, bound, dim))

    def _energies(self, X):
        return self.scale * np.einsum("ij,ij->i", X, X)

    def quadrature_boxes(self, tau, u_max):
        return [(self.space.lower, self.space.upper)]

    def fast_spec(self):
        from .. import _fast
        return _fast.QUADRATIC, (_fast.no_array(), _fast.no_array(), np.array([self.scale])), 0, 0

    def describe(self):
        return {"name": self.name, "dim": self.dim, "bound": self.bound, "scale": self.scale}
