"""Post-processing: exact bias weights, weight error, efficiency and replicate summaries.

The exact ("oracle") weights are

    w_j = log integral over E_j of exp(-U(x) / tau) dx - log pi_j

computed by tensor trapezoid quadrature (continuous problems with ``d <= 2``)
or by summing over every state (small discrete problems), then gauge-fixed
the same way a run's final weights are. Subregions that carry no mass get
``-inf`` and are left out of every comparison; the desired probability of
those subregions is spread evenly over the others, which is the frequency
a run actually targets when some subregions are unreachable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .problems.base import Problem
from .schedules import DesiredProbability, Partition
from .target import ThetaState


class OracleUnsupported(ValueError):
    """The problem is too large (or of the wrong kind) for an exact oracle."""


@dataclass(frozen=True)
class OracleWeights:
    w: np.ndarray  # normalised weights; -inf on subregions with no mass
    log_mass: np.ndarray  # log integral of exp(-U/tau) per subregion
    tau: float
    method: str  # "quadrature" | "enumeration"
    resolution: int = 0  # grid points per axis (quadrature)
    change: float = 0.0  # max entry change at the last refinement

    @property
    def m(self) -> int:
        return self.w.size

    @property
    def nonempty(self) -> np.ndarray:
        return np.isfinite(self.log_mass)


def effective_pi(pi, nonempty) -> np.ndarray:
    """Desired probability with the share of empty subregions spread over the rest."""
    pi = np.asarray(pi.pi if isinstance(pi, DesiredProbability) else pi, dtype=float)
    mask = np.asarray(nonempty, dtype=bool)
    out = np.zeros_like(pi)
    if mask.any():
        out[mask] = pi[mask] + pi[~mask].sum() / mask.sum()
    return out


def _normalize(w, mask, mode, pi):
    out = np.full(w.shape, -math.inf)
    if mode == "unit-sum":
        z = -logsumexp(w[mask])
    elif mode == "pi-weighted":
        z = -logsumexp(w[mask], b=np.asarray(pi, dtype=float)[mask])
    else:
        raise ValueError(f"unknown normalisation mode {mode!r}")
    out[mask] = w[mask] + z
    return out


GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class _Rows:
    """Integrals of ``exp(-(U - shift)/tau)`` along the last axis of a box, per subregion.

    Each row is cut into cells by ``n`` equally spaced nodes. A cell whose
    ends lie in different subregions is split at the exact threshold
    crossings (found by bisection), and a cell hiding an interior extremum
    that crosses a threshold is first split at that extremum (found by a
    golden-section search). Every piece then lies inside one subregion and
    gets the trapezoid rule, with the integrand at a crossing known exactly.
    """

    BISECT = 50
    GOLDEN_STEPS = 40

    def __init__(self, problem, grid, tau, lo, hi, n, shift):
        self.problem, self.grid, self.tau, self.shift = problem, grid, tau, shift
        self.m = grid.size + 1
        self.d = lo.size
        self.x = np.linspace(lo[-1], hi[-1], n)
        self.energies = _energy_fn(problem)

    def energy(self, x0, x):
        pts = x[:, None] if self.d == 1 else np.column_stack([x0, x])
        U = self.energies(pts)
        return np.where(np.isnan(U), np.inf, U)

    def f(self, u):
        return np.exp(-(u - self.shift) / self.tau)

    def label(self, u):
        return np.searchsorted(self.grid, u, side="left")

    def __call__(self, x0s):
        x0s = np.atleast_1d(np.asarray(x0s, dtype=float))
        r, n = x0s.size, self.x.size
        U = self.energy(np.repeat(x0s, n), np.tile(self.x, r)).reshape(r, n)
        row = np.repeat(np.arange(r), n - 1)
        xl, xr = np.tile(self.x[:-1], r), np.tile(self.x[1:], r)
        ul, ur = U[:, :-1].ravel(), U[:, 1:].ravel()
        row, xl, xr, ul, ur = self._split_extrema(x0s, U, row, xl, xr, ul, ur)
        return self._integrate(x0s, r, row, xl, xr, ul, ur)

    def _split_extrema(self, x0s, U, row, xl, xr, ul, ur):
        n = U.shape[1]
        if n < 3:
            return row, xl, xr, ul, ur
        mid, left, right = U[:, 1:-1], U[:, :-2], U[:, 2:]
        is_min = (mid < left) & (mid <= right)
        is_max = (mid > left) & (mid >= right)
        rr, kk = np.nonzero(is_min | is_max)
        if rr.size == 0:
            return row, xl, xr, ul, ur
        k = kk + 1  # node index of the grid extremum
        sign = np.where(is_min[rr, kk], 1.0, -1.0)
        a, b = self.x[k - 1].copy(), self.x[k + 1].copy()
        c = b - GOLDEN * (b - a)
        e = a + GOLDEN * (b - a)
        x0 = x0s[rr]
        fc, fe = sign * self.energy(x0, c), sign * self.energy(x0, e)
        for _ in range(self.GOLDEN_STEPS):
            left = fc < fe  # minimum lies in [a, e]
            b = np.where(left, e, b)
            a = np.where(left, a, c)
            c_new = np.where(left, b - GOLDEN * (b - a), e)
            e_new = np.where(left, c, a + GOLDEN * (b - a))
            fp = sign * self.energy(x0, np.where(left, c_new, e_new))
            fc, fe = np.where(left, fp, fe), np.where(left, fc, fp)
            c, e = c_new, e_new
        xs = 0.5 * (a + b)
        us = self.energy(x0, xs)
        hidden = (self.label(us) != self.label(U[rr, k])) & np.isfinite(us) & (xs != self.x[k])
        if not hidden.any():
            return row, xl, xr, ul, ur
        rr, k, xs, us = rr[hidden], k[hidden], xs[hidden], us[hidden]
        cell = np.where(xs < self.x[k], k - 1, k)
        flat = rr * (n - 1) + cell
        keep = np.ones(row.size, dtype=bool)
        keep[flat] = False
        row = np.concatenate([row[keep], rr, rr])
        new_xl = np.concatenate([xl[keep], xl[flat], xs])
        new_xr = np.concatenate([xr[keep], xs, xr[flat]])
        new_ul = np.concatenate([ul[keep], ul[flat], us])
        new_ur = np.concatenate([ur[keep], us, ur[flat]])
        return row, new_xl, new_xr, new_ul, new_ur

    def _integrate(self, x0s, r, row, xl, xr, ul, ur):
        m, grid = self.m, self.grid
        out = np.zeros(r * m)
        ll, lr = self.label(ul), self.label(ur)
        same = ll == lr
        np.add.at(out, row[same] * m + ll[same], 0.5 * (xr[same] - xl[same]) * (self.f(ul[same]) + self.f(ur[same])))
        cross = np.flatnonzero(~same)
        if cross.size == 0:
            return out.reshape(r, m)
        lo = np.minimum(ll[cross], lr[cross])
        hi = np.maximum(ll[cross], lr[cross])
        up = ul[cross] < ur[cross]
        count = hi - lo
        seg = np.repeat(np.arange(cross.size), count)
        offs = np.concatenate([[0], np.cumsum(count)[:-1]])
        rank = np.arange(seg.size) - offs[seg]
        q = lo[seg] + rank  # threshold index crossed, ascending
        g = grid[q]
        a, b = xl[cross][seg].copy(), xr[cross][seg].copy()
        x0 = x0s[row[cross][seg]]
        inc = up[seg]
        for _ in range(self.BISECT):
            c = 0.5 * (a + b)
            below = self.energy(x0, c) <= g
            move_a = below == inc
            a = np.where(move_a, c, a)
            b = np.where(move_a, b, c)
        pos = 0.5 * (a + b)
        # spatial order inside each segment: ascending thresholds when U rises
        srank = np.where(inc, rank, count[seg] - 1 - rank)
        order = np.lexsort((srank, seg))
        P, V = pos[order], g[order]
        S = cross.size
        npieces = count + 1
        pseg = np.repeat(np.arange(S), npieces)
        poffs = np.concatenate([[0], np.cumsum(npieces)[:-1]])
        k = np.arange(pseg.size) - poffs[pseg]
        first, last = k == 0, k == count[pseg]
        idx_prev = offs[pseg] + k - 1
        idx_next = offs[pseg] + k
        sx = np.where(first, xl[cross][pseg], P[np.clip(idx_prev, 0, max(P.size - 1, 0))])
        su = np.where(first, ul[cross][pseg], V[np.clip(idx_prev, 0, max(V.size - 1, 0))])
        ex = np.where(last, xr[cross][pseg], P[np.clip(idx_next, 0, max(P.size - 1, 0))])
        eu = np.where(last, ur[cross][pseg], V[np.clip(idx_next, 0, max(V.size - 1, 0))])
        lab = np.where(up[pseg], lo[pseg] + k, hi[pseg] - k)
        val = 0.5 * (ex - sx) * (self.f(su) + self.f(eu))
        np.add.at(out, row[cross][pseg] * m + lab, val)
        return out.reshape(r, m)


def _energy_fn(problem):
    """Batch energy callable; the compiled kernel when the problem has one."""
    spec = problem.fast_spec()
    if spec is None:
        return lambda X: np.asarray(problem.energies(X), dtype=float)
    from . import _fast
    kind, params = spec[0], spec[1]
    return lambda X: _fast.batch_energy(kind, np.ascontiguousarray(X, dtype=float), *params)


def _box_shift(problem, boxes):
    lows = []
    for lo, hi in boxes:
        axes = [np.linspace(lo[k], hi[k], 33) for k in range(len(lo))]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
        e = _energy_fn(problem)(pts)
        e = e[np.isfinite(e)]
        if e.size:
            lows.append(e.min())
    return min(lows) if lows else 0.0


def _log_masses_on_grid(problem, partition, tau, boxes, n, rtol=1e-6, max_depth=40):
    """Per-subregion log integrals over ``boxes`` with ``n`` nodes per axis.

    The last axis is handled by :class:`_Rows`. In two dimensions the row
    integrals are combined by adaptive Simpson panels over the first axis:
    a row integral has a square-root singularity wherever a level curve is
    tangent to the rows, and only panels near those points need refining.
    """
    m = 1 if partition is None else partition.m
    grid = np.empty(0) if partition is None else np.asarray(partition.grid, dtype=float)
    boxes = [(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)) for lo, hi in boxes]
    shift = _box_shift(problem, boxes)
    total = np.zeros(m)
    for lo, hi in boxes:
        rows = _Rows(problem, grid, tau, lo, hi, n, shift)
        if lo.size == 1:
            total += rows(np.zeros(1))[0]
            continue
        total += _adaptive_simpson(rows, lo[0], hi[0], n, rtol, max_depth)
    return np.where(total > 0, np.log(np.where(total > 0, total, 1.0)) - shift / tau, -math.inf)


def _adaptive_simpson(rows, a, b, n, rtol, max_depth):
    """Adaptive Simpson over the first axis, refining all open panels together."""
    panels = max(1, (n - 1) // 2)
    edges = np.linspace(a, b, 2 * panels + 1)
    Fe = rows(edges)
    lo, hi = edges[0:-1:2], edges[2::2]
    fa, fm, fb = Fe[0:-1:2], Fe[1::2], Fe[2::2]
    whole = (hi - lo)[:, None] / 6 * (fa + 4 * fm + fb)
    scale = np.where(whole.sum(axis=0) > 0, whole.sum(axis=0), np.inf)
    width = b - a
    out = np.zeros(Fe.shape[1])
    for depth in range(max_depth + 1):
        c = 0.5 * (lo + hi)
        Fq = rows(np.concatenate([0.5 * (lo + c), 0.5 * (c + hi)]))
        ql, qr = Fq[:lo.size], Fq[lo.size:]
        h = (hi - lo)[:, None]
        left = h / 12 * (fa + 4 * ql + fm)
        right = h / 12 * (fm + 4 * qr + fb)
        err = np.abs(left + right - whole)
        done = np.all(err <= 15 * rtol * scale * h / width, axis=1) | (depth == max_depth)
        out += (left + right + (left + right - whole) / 15)[done].sum(axis=0)
        go = ~done
        if not go.any():
            break
        lo, hi, c = lo[go], hi[go], c[go]
        lo, hi = np.concatenate([lo, c]), np.concatenate([c, hi])
        fa, fm, fb = (np.concatenate([fa[go], fm[go]]), np.concatenate([ql[go], qr[go]]),
                      np.concatenate([fm[go], fb[go]]))
        whole = np.concatenate([left[go], right[go]])
    return out


def oracle_weights(problem: Problem, partition: Partition | None, pi, tau: float, *,
                   normalization: str = "unit-sum", tol: float = 1e-4, start: int = 257,
                   max_points: int = 2 ** 22 + 1, max_states: int = 2 ** 20) -> OracleWeights:
    """Exact bias weights at temperature ``tau``.

    ``partition=None`` means a single subregion. Quadrature starts at ``start``
    points per axis and doubles the resolution until no finite entry moves by
    more than ``tol``; it raises :class:`OracleUnsupported` if the problem has
    no quadrature boxes, ``d > 2``, or the gate cannot be met within
    ``max_points`` points per axis.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    m = 1 if partition is None else partition.m
    pi_vec = np.ones(1) if partition is None else np.asarray(
        pi.pi if isinstance(pi, DesiredProbability) else pi, dtype=float)
    if pi_vec.size != m:
        raise ValueError("pi and partition disagree on m")
    u_max = 0.0 if partition is None else float(partition.grid[-1])

    if problem.discrete:
        states = problem.enumerate_states()
        if states is None or len(states) > max_states:
            raise OracleUnsupported(f"{problem.name}: state space too large to enumerate")
        e = np.asarray(problem.energies(states), dtype=float)
        lab = np.zeros(e.size, dtype=np.intp) if partition is None else partition.locate(e)
        log_mass = np.full(m, -math.inf)
        for j in np.unique(lab):
            log_mass[j] = logsumexp(-e[lab == j] / tau)
        method, res, change = "enumeration", len(states), 0.0
    else:
        if problem.dim > 2:
            raise OracleUnsupported(f"{problem.name}: quadrature oracle needs d <= 2 (d={problem.dim})")
        boxes = problem.quadrature_boxes(tau, u_max)
        if boxes is None:
            raise OracleUnsupported(f"{problem.name}: no quadrature boxes")
        cap = max_points if problem.dim == 1 else int(round(math.sqrt(max_points))) * 4 + 1
        # trapezoid errors here are a clean O(h^2), so successive levels are
        # combined by one Richardson step and the gate compares those
        n = start
        coarse = _log_masses_on_grid(problem, partition, tau, boxes, n)
        prev = None
        while True:
            n2 = 2 * n - 1  # nested grid: every old node is reused
            if n2 > cap:
                raise OracleUnsupported(
                    f"{problem.name}: quadrature did not reach tol={tol} within {n} points per axis")
            fine = _log_masses_on_grid(problem, partition, tau, boxes, n2)
            cur = _richardson(coarse, fine)
            n, coarse = n2, fine
            if prev is not None:
                change = _max_change(_weights(prev, pi_vec, normalization), _weights(cur, pi_vec, normalization))
                if change < tol:
                    break
            prev = cur
        log_mass, method, res = cur, "quadrature", n

    if not np.isfinite(log_mass).any():
        raise OracleUnsupported(f"{problem.name}: no mass found at tau={tau}")
    w = _weights(log_mass, pi_vec, normalization)
    return OracleWeights(w, log_mass, float(tau), method, res, change)


def _weights(log_mass, pi_vec, normalization):
    mask = np.isfinite(log_mass)
    target = effective_pi(pi_vec, mask)
    raw = np.where(mask, log_mass - np.log(np.where(mask, target, 1.0)), -math.inf)
    return _normalize(raw, mask, normalization, pi_vec)


def _richardson(coarse, fine):
    """``(4 I(h/2) - I(h)) / 3`` in log space; falls back to ``fine`` if not positive."""
    out = fine.copy()
    both = np.isfinite(coarse) & np.isfinite(fine)
    arg = (4.0 - np.exp(coarse[both] - fine[both])) / 3.0
    vals = out[both]
    vals[arg > 0] += np.log(arg[arg > 0])
    out[both] = vals
    return out


def _max_change(a, b):
    if not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return math.inf
    fin = np.isfinite(a)
    return float(np.max(np.abs(a[fin] - b[fin]))) if fin.any() else 0.0


def _theta_vector(theta):
    if isinstance(theta, ThetaState):
        return theta.theta
    return np.asarray(theta, dtype=float)


def theta_mse(theta, oracle: OracleWeights, *, renormalize: bool = True,
              normalization: str = "unit-sum", pi=None) -> float:
    """``||theta - w||_2`` over the subregions the oracle finds non-empty.

    With ``renormalize`` the estimate is first gauge-fixed over that same set,
    so any additive constant in ``theta`` drops out.
    """
    th = _theta_vector(theta)
    if th.size != oracle.m:
        raise ValueError(f"theta has {th.size} entries, oracle has {oracle.m}")
    mask = oracle.nonempty
    if renormalize:
        th = _normalize(th, mask, normalization, np.ones(th.size) if pi is None else
                        (pi.pi if isinstance(pi, DesiredProbability) else pi))
    diff = th[mask] - oracle.w[mask]
    return float(np.sqrt(diff @ diff))


def relative_efficiency(runs_kappa, runs_single, oracle: OracleWeights, *, statistic: str = "norm",
                        aggregate: str = "ratio_of_means") -> float:
    """Error of the population estimator at ``n // kappa`` over the single chain's at ``n``.

    ``statistic="norm"`` compares error norms; ``"squared"`` compares squared
    norms (mean squared error). ``aggregate`` picks ratio of means (default)
    or mean of per-replicate ratios (needs paired, equal-length inputs).
    """
    if statistic not in ("norm", "squared"):
        raise ValueError("statistic must be 'norm' or 'squared'")
    a = np.array([theta_mse(th, oracle) for th in runs_kappa])
    b = np.array([theta_mse(th, oracle) for th in runs_single])
    if statistic == "squared":
        a, b = a ** 2, b ** 2
    if a.size == 0 or b.size == 0:
        raise ValueError("need at least one run on each side")
    if aggregate == "ratio_of_means":
        den = b.mean()
        if den == 0:
            raise ZeroDivisionError("single-chain error is zero; efficiency undefined")
        return float(a.mean() / den)
    if aggregate == "mean_of_ratios":
        if a.size != b.size:
            raise ValueError("mean_of_ratios needs paired replicates")
        if np.any(b == 0):
            raise ZeroDivisionError("single-chain error is zero; efficiency undefined")
        return float(np.mean(a / b))
    raise ValueError("aggregate must be 'ratio_of_means' or 'mean_of_ratios'")


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` on ``log x``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


# ---------------------------------------------------------------- replicates

@dataclass
class ReplicateSummary:
    t: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    min: np.ndarray
    max: np.ndarray
    n: int
    terminal: dict = field(default_factory=dict)  # key -> {"mean", "se", "min", "max", "n"}

    def tidy_rows(self, problem: str = "", kappa="", beta="", mode=""):
        for k, t in enumerate(self.t):
            for stat in ("mean", "se", "min", "max"):
                yield {"problem": problem, "mode": mode, "kappa": kappa, "beta": beta, "t": int(t),
                       "statistic": f"best_{stat}", "value": float(getattr(self, stat)[k])}


def _best_column(trace):
    if isinstance(trace, dict):
        return np.asarray(trace["t"]), np.asarray(trace["best_energy"], dtype=float)
    return np.asarray(trace.t), np.asarray(trace.best_energy, dtype=float)


def _stats(v):
    v = np.asarray(v, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size >= 2 else math.nan
    return {"mean": float(v.mean()), "se": se, "min": float(v.min()), "max": float(v.max()), "n": int(v.size)}


def summarize_replicates(traces, keys=None) -> ReplicateSummary:
    """Pointwise mean, standard error, min and max of the best-energy columns.

    ``traces`` are :class:`~pisaa.engine.Trace` objects or column dicts from
    :func:`~pisaa.engine.read_trace_csv`. ``keys`` (one hashable per trace,
    e.g. ``(problem, kappa)``) groups the terminal-value table; by default all
    traces form one group keyed ``None``.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to summarise")
    cols = [_best_column(tr) for tr in traces]
    t0 = cols[0][0]
    for t, _ in cols[1:]:
        if t.shape != t0.shape or not np.array_equal(t, t0):
            raise ValueError("traces differ in length or stride")
    best = np.vstack([b for _, b in cols])
    R = best.shape[0]
    se = best.std(axis=0, ddof=1) / math.sqrt(R) if R >= 2 else np.full(best.shape[1], math.nan)
    keys = [None] * R if keys is None else list(keys)
    if len(keys) != R:
        raise ValueError("one key per trace")
    terminal = {}
    for key in dict.fromkeys(keys):
        terminal[key] = _stats([best[r, -1] for r in range(R) if keys[r] == key])
    return ReplicateSummary(t0.copy(), best.mean(axis=0), se, best.min(axis=0), best.max(axis=0), R, terminal)


def visit_windows(trace) -> np.ndarray:
    """Per-window subregion frequencies recovered from cumulative visit rows.

    Needs a trace with visit columns on every record (``theta_stride=1``);
    row ``k`` covers iterations ``t[k]+1 .. t[k+1]``.
    """
    t = np.asarray(trace.t, dtype=float)
    rows = trace.visits
    if any(r is None for r in rows[1:]):
        raise ValueError("visit columns missing on some records; use theta_stride=1")
    cum = np.array([np.zeros(trace.m) if rows[0] is None else rows[0]] + rows[1:], dtype=float) * t[:, None]
    dt = np.diff(t)
    return np.diff(cum, axis=0) / dt[:, None]


def batch_means(windows) -> tuple:
    """Mean and standard error of per-window frequencies (batch-means estimate)."""
    w = np.asarray(windows, dtype=float)
    return w.mean(axis=0), w.std(axis=0, ddof=1) / math.sqrt(w.shape[0])


TIDY_COLUMNS = ("problem", "mode", "kappa", "beta", "t", "statistic", "value")


def write_tidy_csv(rows, path):
    """One row per (problem, mode, kappa, beta, t, statistic); floats written exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIDY_COLUMNS)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in TIDY_COLUMNS])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.floating):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return "" if v is None else str(v)
