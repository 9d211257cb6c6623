"""Compiled sweep kernel for continuous problems.

The kernel runs a block of sweeps on pre-drawn random numbers. Each sweep
consumes a fixed number of draws from each stream, so splitting a run into
blocks of any size gives the same trajectory. Row ``t`` of each draw array
belongs to sweep ``t`` of the block:

``ctrl_u``   ``kappa`` operator choices, then (only when crossovers are on) one
             uniform for the fractional crossover count and ``C`` operator choices
``mut_n``    ``kappa * d`` normals (individual ``i`` uses ``[i*d, (i+1)*d)``),
             then ``kappa`` scalar normals
``mut_u``    ``kappa * d`` coordinate keys, then ``kappa`` acceptance uniforms
``cross_u``  per crossover slot ``d + 3`` uniforms: first pick, partner, ``d - 1``
             cut-point keys, linear-crossover coefficient, acceptance
``cross_n``  per crossover slot one normal (snooker step)

with ``C = ceil(crossover_per_sweep)``. The semantics mirror
:mod:`pisaa.moves`; only the order in which draws are taken differs.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

TWO_PI = 2.0 * math.pi
HALF_ULP = 2.0**-54

# operator codes, index into MUTATIONS + CROSSOVERS
MRW, HR, KM, GIBBS, KC, SC, LC = range(7)


# ---------------------------------------------------------------- energies

QUADRATIC, RASTRIGIN, MIXTURE, PROTEIN = range(4)


@nb.njit(cache=True)
def quadratic_energy(x, A, B, c):
    s = 0.0
    for k in range(x.size):
        s += x[k] * x[k]
    return c[0] * s


@nb.njit(cache=True)
def rastrigin_energy(x, A, B, c):
    R = A
    d = x.size
    s = 10.0 * d
    for i in range(d):
        y = 0.0
        for k in range(d):
            y += R[i, k] * x[k]
        s += y * y - 10.0 * math.cos(TWO_PI * y)
    return s


@nb.njit(cache=True)
def mixture_energy(x, A, B, c):
    log_w, means = B[0], A
    var, log_norm = c[0], c[1]
    k = log_w.size
    best = -np.inf
    for q in range(k):  # two passes avoid a scratch array per call
        r2 = 0.0
        for j in range(x.size):
            diff = x[j] - means[q, j]
            r2 += diff * diff
        term = log_w[q] - 0.5 * r2 / var
        if term > best:
            best = term
    if best == -np.inf:
        return np.inf
    s = 0.0
    for q in range(k):
        r2 = 0.0
        for j in range(x.size):
            diff = x[j] - means[q, j]
            r2 += diff * diff
        s += math.exp(log_w[q] - 0.5 * r2 / var - best)
    return -(best + math.log(s) - log_norm)


@nb.njit(cache=True)
def protein_energy(x, A, B, c):
    C, meta = A, c
    n = int(meta[0])
    dim = int(meta[1])
    u = np.zeros((n - 1, 3))
    for k in range(n - 1):
        if dim == 2:
            th = 0.0 if k == 0 else x[k - 1]
            u[k, 0] = math.cos(th)
            u[k, 1] = math.sin(th)
        else:
            th = meta[2] if k == 0 else x[k - 1]
            if k == 0:
                ph = meta[3]
            elif k == 1:
                ph = meta[4]
            else:
                ph = x[n - 2 + k - 2]
            sp = math.sin(ph)
            u[k, 0] = math.cos(th) * sp
            u[k, 1] = math.sin(th) * sp
            u[k, 2] = math.cos(ph)
    local = 0.0
    for k in range(n - 2):
        dot = u[k, 0] * u[k + 1, 0] + u[k, 1] * u[k + 1, 1] + u[k, 2] * u[k + 1, 2]
        local += 0.25 * (1.0 - dot) if dim == 2 else dot
    if dim == 3:
        for k in range(n - 3):
            local -= 0.5 * (u[k, 0] * u[k + 2, 0] + u[k, 1] * u[k + 2, 1] + u[k, 2] * u[k + 2, 2])
    pos = np.zeros((n, 3))
    for k in range(n - 1):
        for c in range(3):
            pos[k + 1, c] = pos[k, c] + u[k, c]
    lj = 0.0
    for i in range(n):
        for j in range(i + 2, n):
            r2 = 0.0
            for q in range(3):
                diff = pos[i, q] - pos[j, q]
                r2 += diff * diff
            if r2 == 0.0:
                return np.inf
            inv6 = 1.0 / (r2 * r2 * r2)
            lj += 4.0 * (inv6 * inv6 - C[i, j] * inv6)
    return local + lj


@nb.njit(cache=True)
def energy(kind, x, A, B, c):
    if kind == QUADRATIC:
        return quadratic_energy(x, A, B, c)
    if kind == RASTRIGIN:
        return rastrigin_energy(x, A, B, c)
    if kind == MIXTURE:
        return mixture_energy(x, A, B, c)
    return protein_energy(x, A, B, c)


@nb.njit(cache=True)
def batch_energy(kind, X, A, B, c):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = energy(kind, X[i], A, B, c)
    return out


def no_array():
    return np.zeros((1, 1))


# ---------------------------------------------------------------- helpers

@nb.njit(cache=True)
def _locate(grid, e):
    if e != e:
        e = np.inf
    lo, hi = 0, grid.size
    while lo < hi:  # first index with grid[idx] >= e
        mid = (lo + hi) // 2
        if grid[mid] < e:
            lo = mid + 1
        else:
            hi = mid
    return lo


@nb.njit(cache=True)
def _choose(cum, u):
    target = u * cum[cum.size - 1]
    for k in range(cum.size):
        if cum[k] > target:
            return k
    return cum.size - 1


@nb.njit(cache=True)
def _wrap(y, wrap_kind, n_theta):
    if wrap_kind == 0:
        return
    for k in range(y.size):
        v = y[k] % TWO_PI
        if wrap_kind == 2 and k >= n_theta and v > math.pi:
            v = TWO_PI - v
        y[k] = v


@nb.njit(cache=True)
def _inside(y, lower, upper, wrap_kind):
    if wrap_kind != 0:
        return True
    for k in range(y.size):
        if not (y[k] >= lower[k] and y[k] <= upper[k]):
            return False
    return True


@nb.njit(cache=True)
def _k_smallest(keys, k, out):
    # indices of the k smallest keys, ascending by index
    n = keys.size
    order = np.argsort(keys)
    sel = np.sort(order[:k])
    for a in range(k):
        out[a] = sel[a]
    return n


@nb.njit(cache=True)
def _lse(z, skip):
    m = -np.inf
    for k in range(z.size):
        if k != skip and z[k] > m:
            m = z[k]
    if m == -np.inf:
        return -np.inf
    s = 0.0
    for k in range(z.size):
        if k != skip:
            s += math.exp(z[k] - m)
    return m + math.log(s)


@nb.njit(cache=True)
def _draw(z, skip, u):
    # inverse-cdf draw from softmax(z) with entry `skip` removed
    m = -np.inf
    for k in range(z.size):
        if k != skip and z[k] > m:
            m = z[k]
    total = 0.0
    for k in range(z.size):
        if k != skip:
            total += math.exp(z[k] - m)
    target = u * total
    c = 0.0
    last = -1
    for k in range(z.size):
        if k == skip:
            continue
        c += math.exp(z[k] - m)
        last = k
        if c > target:
            return k
    return last


@nb.njit(cache=True)
def _draw_other_uniform(n, skip, u):
    k = min(int(u * (n - 1)), n - 2)
    return k + 1 if k >= skip else k


@nb.njit(cache=True)
def _log_pair(z, lse_all, i, j, literal):
    if literal:
        return z[i] - lse_all - math.log(z.size - 1)
    return z[i] - lse_all + z[j] - _lse(z, i)


@nb.njit(cache=True)
def _log_sym(E, i, j, temp, literal):
    z = -E / temp
    lse = _lse(z, -1)
    a = _log_pair(z, lse, i, j, literal)
    b = _log_pair(z, lse, j, i, literal)
    hi = max(a, b)
    if hi == -np.inf:
        return -np.inf
    return hi + math.log1p(math.exp(min(a, b) - hi))


@nb.njit(cache=True)
def _log_accept(u):
    return math.log(u) if u > 0.0 else -np.inf


# ---------------------------------------------------------------- block kernel

@nb.njit(cache=True)
def run_block(kind, A, B, C, X, E, J, theta, nonempty, visits, grid, pi, update_theta, trunc,
              taus, gammas, mut_cum, mut_codes, cross_cum, cross_codes, n_cross_slots, c_per_sweep,
              scales, km_k, kc_k, sel_temps, literal, scaling, crossover_on,
              lower, upper, wrap_kind, n_theta,
              ctrl_u, mut_n, mut_u, cross_u, cross_n,
              attempts, accepts, evals, best_x, best_e):
    kappa, d = X.shape
    m = grid.size + 1
    y = np.empty(d)
    y2 = np.empty(d)
    e_dir = np.empty(d)
    idx = np.empty(max(d, 1), dtype=np.int64)
    counts = np.zeros(m)
    for t in range(taus.size):
        tau = taus[t]
        # mutation phase: every individual gets one attempt
        for i in range(kappa):
            code = mut_codes[_choose(mut_cum, ctrl_u[t, i])]
            s_base = scales[code]
            s_x = s_base * (J[i] + 1.0) / (m + 1.0) if scaling else s_base
            zoff = i * d
            r = mut_n[t, kappa * d + i]
            if code == MRW:
                nz = 0.0
                for k in range(d):
                    y[k] = X[i, k] + s_x * mut_n[t, zoff + k]
                    nz += mut_n[t, zoff + k] ** 2
                dist = abs(s_x) * math.sqrt(nz)
                d_eff = d
            elif code == HR:
                nz = 0.0
                for k in range(d):
                    nz += mut_n[t, zoff + k] ** 2
                nz = math.sqrt(nz)
                step = s_x * r
                for k in range(d):
                    e_dir[k] = mut_n[t, zoff + k] / nz if nz > 0 else 0.0
                    y[k] = X[i, k] + step * e_dir[k]
                dist = abs(step)
                d_eff = 1
            else:
                _k_smallest(mut_u[t, zoff:zoff + d], km_k, idx)
                step = s_x * r
                for k in range(d):
                    y[k] = X[i, k]
                for a in range(km_k):
                    y[idx[a]] += step
                dist = abs(step)
                d_eff = 1
            _wrap(y, wrap_kind, n_theta)
            ey = energy(kind, y, A, B, C)
            evals[code] += 1
            attempts[code] += 1
            if not _inside(y, lower, upper, wrap_kind):
                ey = np.inf
            if ey < best_e[0]:
                best_e[0] = ey
                best_x[:] = y
            if ey == np.inf or ey != ey:
                continue
            jy = _locate(grid, ey)
            log_r = -(ey - E[i]) / tau - (theta[jy] - theta[J[i]])
            if scaling:
                s_y = s_base * (jy + 1.0) / (m + 1.0)
                log_r += d_eff * (math.log(s_x) - math.log(s_y)) + 0.5 * dist * dist * (
                    1.0 / (s_x * s_x) - 1.0 / (s_y * s_y))
            if _log_accept(mut_u[t, kappa * d + i]) < log_r:
                accepts[code] += 1
                X[i, :] = y
                E[i] = ey
                J[i] = jy
        # crossover phase
        if crossover_on:
            n_cross = int(math.floor(c_per_sweep))
            frac = c_per_sweep - n_cross
            if frac > 0 and ctrl_u[t, kappa] < frac:
                n_cross += 1
            for a in range(n_cross):
                code = cross_codes[_choose(cross_cum, ctrl_u[t, kappa + 1 + a])]
                cu = cross_u[t, a * (d + 3):(a + 1) * (d + 3)]
                attempts[code] += 1
                if code == KC:
                    temp = sel_temps[0]
                    z = -E / temp
                    i = _draw(z, -1, cu[0])
                    if literal:
                        j = _draw_other_uniform(kappa, i, cu[1])
                    else:
                        j = _draw(z, i, cu[1])
                    _k_smallest(cu[2:d + 1], kc_k, idx)
                    for k in range(d):
                        y[k] = X[i, k]
                        y2[k] = X[j, k]
                    npts = kc_k + (kc_k % 2)
                    for s in range(0, npts, 2):
                        lo = idx[s] + 1
                        hi = idx[s + 1] + 1 if s + 1 < kc_k else d
                        for k in range(lo, hi):
                            y[k] = X[j, k]
                            y2[k] = X[i, k]
                    _wrap(y, wrap_kind, n_theta)
                    _wrap(y2, wrap_kind, n_theta)
                    e1 = energy(kind, y, A, B, C)
                    e2 = energy(kind, y2, A, B, C)
                    evals[code] += 2
                    if not _inside(y, lower, upper, wrap_kind):
                        e1 = np.inf
                    if not _inside(y2, lower, upper, wrap_kind):
                        e2 = np.inf
                    if e1 < best_e[0]:
                        best_e[0] = e1
                        best_x[:] = y
                    if e2 < best_e[0]:
                        best_e[0] = e2
                        best_x[:] = y2
                    if e1 == np.inf or e2 == np.inf or e1 != e1 or e2 != e2:
                        continue
                    j1 = _locate(grid, e1)
                    j2 = _locate(grid, e2)
                    log_r = (-(e1 - E[i]) / tau - (theta[j1] - theta[J[i]])
                             - (e2 - E[j]) / tau - (theta[j2] - theta[J[j]]))
                    sym_old = _log_sym(E, i, j, temp, literal)
                    ei, ej = E[i], E[j]
                    E[i], E[j] = e1, e2
                    sym_new = _log_sym(E, i, j, temp, literal)
                    E[i], E[j] = ei, ej
                    log_r += sym_new - sym_old
                    if _log_accept(cu[d + 2]) < log_r:
                        accepts[code] += 1
                        X[i, :] = y
                        X[j, :] = y2
                        E[i], E[j] = e1, e2
                        J[i], J[j] = j1, j2
                    continue
                temp = sel_temps[1] if code == SC else sel_temps[2]
                i = min(int(cu[0] * kappa), kappa - 1)
                z = -E / temp
                j = _draw(z, i, cu[1])
                if code == SC:
                    nd = 0.0
                    for k in range(d):
                        nd += (X[j, k] - X[i, k]) ** 2
                    nd = math.sqrt(nd)
                    if nd == 0.0:
                        continue
                    s_base = scales[SC]
                    s_x = s_base * (J[i] + 1.0) / (m + 1.0) if scaling else s_base
                    for k in range(d):
                        y[k] = X[i, k] + s_x * cross_n[t, a] * (X[j, k] - X[i, k]) / nd
                else:
                    rr = 2.0 * (cu[d + 1] + HALF_ULP) - 1.0
                    for k in range(d):
                        y[k] = X[i, k] + rr * X[j, k]
                _wrap(y, wrap_kind, n_theta)
                ey = energy(kind, y, A, B, C)
                evals[code] += 1
                if not _inside(y, lower, upper, wrap_kind):
                    ey = np.inf
                if ey < best_e[0]:
                    best_e[0] = ey
                    best_x[:] = y
                if ey == np.inf or ey != ey:
                    continue
                jy = _locate(grid, ey)
                log_r = -(ey - E[i]) / tau - (theta[jy] - theta[J[i]])
                if _log_accept(cu[d + 2]) < log_r:
                    accepts[code] += 1
                    X[i, :] = y
                    E[i] = ey
                    J[i] = jy
        # bookkeeping and weight update
        counts[:] = 0.0
        for i in range(kappa):
            visits[J[i]] += 1
            counts[J[i]] += 1.0
            nonempty[J[i]] = True
        if update_theta:
            g = gammas[t]
            for k in range(m):
                if nonempty[k]:
                    theta[k] += g * (counts[k] / kappa - pi[k])
            nrm = 0.0
            for k in range(m):
                if nonempty[k]:
                    nrm += theta[k] * theta[k]
            bound = trunc[0] * trunc[1] ** trunc[2]
            if math.sqrt(nrm) > bound:
                theta[:] = trunc[3:]
                trunc[2] += 1.0
