"""A direct, loop-by-loop single-chain SAA used as the equivalence reference.

It shares nothing with the engine except the problem, the schedules and the
random streams, which it consumes in the documented order.
"""

from __future__ import annotations

import math

import numpy as np

from pisaa.engine import make_streams
from pisaa.schedules import desired_probability, gain_at, temperature_at


def _label(grid, e):
    # left-open, right-closed slices; +inf and NaN land in the top slice
    if not e <= grid[-1]:
        return len(grid)
    return int(np.searchsorted(grid, e, side="left"))


def saa_trajectory(problem, grid, n, *, seed, var, lam, gain, ladder, layout, bounds=(1e100, 1e10)):
    """Yield ``(x, energy, theta)`` after each of ``n`` random-walk iterations.

    ``layout="block"`` reads draws the way the compiled kernel does (one
    control uniform, two normals, two uniforms per sweep, from separate
    streams); ``layout="numpy"`` reads a control uniform then a normal and an
    acceptance uniform from the mutation stream.
    """
    grid = np.asarray(grid, dtype=float)
    m = grid.size + 1
    pi = desired_probability(lam, m).pi
    g = make_streams(seed)
    x = problem.sample_initial(g["init"], 1)[0].astype(float)
    e = float(problem.energies(x[None, :])[0])
    j = _label(grid, e)
    theta = np.zeros(m)
    seen = np.zeros(m, dtype=bool)
    resets = 0
    lo, hi = problem.space.lower, problem.space.upper
    for t in range(1, n + 1):
        tau = temperature_at(ladder, t)
        if layout == "block":
            g["ctrl"].random((1, 1))
            z = g["mut"].standard_normal((1, 2))[0, 0]
            u = g["mut_u"].random((1, 2))[0, 1]
        else:
            g["ctrl"].random(1)
            z = g["mut"].standard_normal((1, 1))[0, 0]
            u = g["mut"].random(1)[0]
        y = x + var * z
        inside = bool(np.all((y >= lo) & (y <= hi)))
        ey = float(problem.energies(y[None, :])[0]) if inside else math.inf
        jy = _label(grid, ey)
        if math.isfinite(ey):
            log_r = -(ey - e) / tau - (theta[jy] - theta[j])
            log_u = math.log(u) if u > 0 else -math.inf
            if log_u < log_r:
                x, e, j = y, ey, jy
        seen[j] = True
        step = gain_at(gain, t)
        hit = np.zeros(m)
        hit[j] = 1.0
        theta[seen] = theta[seen] + step * (hit[seen] - pi[seen])
        if math.sqrt(float(np.sum(theta[seen] ** 2))) > bounds[0] * bounds[1] ** resets:
            theta = np.zeros(m)
            resets += 1
        yield x.copy(), e, theta.copy()
