from __future__ import annotations

import csv
import math
from importlib import resources

import numpy as np
from scipy.special import logsumexp

from .base import BoxSpace, Problem


def gaussian_mixture_energy(x, components, var: float) -> float:
    """``-log sum_i w_i N_2(x | mu_i, var I)`` evaluated with log-sum-exp.

    ``components`` is a sequence of ``(weight, mean)`` pairs.
    """
    w = np.array([c[0] for c in components], dtype=float)
    mu = np.array([np.asarray(c[1], dtype=float) for c in components])
    return float(_mixture_energies(np.atleast_2d(np.asarray(x, dtype=float)), np.log(w), mu, var)[0])


def _mixture_energies(X, log_w, means, var):
    d = X.shape[1]
    sq = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    log_comp = log_w[None, :] - 0.5 * d * math.log(2 * math.pi * var) - sq / (2 * var)
    return -logsumexp(log_comp, axis=1)


def load_components(path=None):
    """Read ``(weight, mean_x, mean_y)`` rows from CSV; default is the shipped 20-mode table."""
    if path is None:
        text = resources.files("pisaa.problems").joinpath("data/mixture20_means.csv").read_text()
        rows = list(csv.DictReader(text.splitlines()))
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    return [(float(r["weight"]), (float(r["mean_x"]), float(r["mean_y"]))) for r in rows]


class GaussianMixture(Problem):
    name = "mixture"

    def __init__(self, components=None, var: float = 0.001, half_width: float = 1e10,
                 init_box=None):
        components = load_components() if components is None else list(components)
        self.weights = np.array([c[0] for c in components], dtype=float)
        if not math.isclose(self.weights.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError("mixture weights must sum to 1")
        self.means = np.array([np.asarray(c[1], dtype=float) for c in components])
        self.var = float(var)
        self._log_w = np.log(self.weights)
        d = self.means.shape[1]
        space = BoxSpace.cube(-half_width, half_width, d)
        if init_box is None:
            init = BoxSpace(self.means.min(axis=0) - 1.0, self.means.max(axis=0) + 1.0)
        else:
            init = BoxSpace(*init_box)
        super().__init__(space, init)

    def _energies(self, X):
        return _mixture_energies(X, self._log_w, self.means, self.var)

    def quadrature_boxes(self, tau, u_max):
        d = self.means.shape[1]
        level = u_max + 40.0 * tau
        k = len(self.weights)
        r2 = 2 * self.var * (level + math.log(k) + self._log_w - 0.5 * d * math.log(2 * math.pi * self.var))
        radius = np.sqrt(np.maximum(r2, 0.0)) + 1e-12
        lo = self.means - radius[:, None]
        hi = self.means + radius[:, None]
        overlap = False
        for a in range(k):
            for b in range(a + 1, k):
                if np.all(lo[a] < hi[b]) and np.all(lo[b] < hi[a]):
                    overlap = True
        if overlap:
            lo_all, hi_all = lo.min(axis=0), hi.max(axis=0)
            return [(np.maximum(lo_all, self.space.lower), np.minimum(hi_all, self.space.upper))]
        return [(np.maximum(lo[c], self.space.lower), np.minimum(hi[c], self.space.upper)) for c in range(k)]

    def fast_spec(self):
        from .. import _fast
        d = self.means.shape[1]
        consts = np.array([self.var, 0.5 * d * math.log(2 * math.pi * self.var)])
        return _fast.MIXTURE, (np.ascontiguousarray(self.means), self._log_w[None, :].copy(), consts), 0, 0

    def describe(self):
        return {"name": self.name, "dim": self.dim, "components": len(self.weights), "var": self.var}
