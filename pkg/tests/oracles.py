"""Slow, independent reference implementations used only by the tests.

Everything here is written with plain loops or exact arithmetic straight from
the defining formulas, without calling into the package's numerical kernels.
"""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

EDGES = ((1, 0), (-1, 0), (0, 1), (0, -1))


def mirror(t: int, n: int) -> int:
    """Half-sample symmetric index: -1 -> 0, n -> n - 1."""
    period = 2 * n
    t %= period
    return period - 1 - t if t >= n else t


def diamond_gradients_loop(u, h=1.0):
    """Edge-midpoint gradients from corner averages, one pixel at a time."""
    u = np.asarray(u, dtype=float)
    m, n = u.shape

    def at(i, j):
        return u[mirror(i, m), mirror(j, n)]

    out = np.zeros((4, 2, m, n))
    for i in range(m):
        for j in range(n):
            c11 = (at(i, j) + at(i, j + 1) + at(i + 1, j) + at(i + 1, j + 1)) / 4
            c1m = (at(i, j) + at(i + 1, j) + at(i, j - 1) + at(i + 1, j - 1)) / 4
            cmm = (at(i, j) + at(i - 1, j) + at(i, j - 1) + at(i - 1, j - 1)) / 4
            cm1 = (at(i, j) + at(i, j + 1) + at(i - 1, j) + at(i - 1, j + 1)) / 4
            grads = {
                (1, 0): (at(i + 1, j) - at(i, j), c11 - c1m),
                (-1, 0): (at(i - 1, j) - at(i, j), cm1 - cmm),
                (0, 1): (c11 - cm1, at(i, j + 1) - at(i, j)),
                (0, -1): (c1m - cmm, at(i, j - 1) - at(i, j)),
            }
            for e, d in enumerate(EDGES):
                out[e, 0, i, j] = grads[d][0] / h
                out[e, 1, i, j] = grads[d][1] / h
    return out


def dense_semi_implicit(rhs, coef, weights):
    """Dense direct solve of ``u - coef * sum_d weights_d (u_nb - u) = rhs``;
    edges leaving the image contribute nothing (zero flux)."""
    m, n = rhs.shape
    size = m * n
    a = np.zeros((size, size))
    for i in range(m):
        for j in range(n):
            p = i * n + j
            a[p, p] = 1.0
            for e, (di, dj) in enumerate(EDGES):
                ii, jj = i + di, j + dj
                if not (0 <= ii < m and 0 <= jj < n):
                    continue
                wgt = coef[i, j] * weights[e, i, j]
                a[p, p] += wgt
                a[p, ii * n + jj] -= wgt
    return np.linalg.solve(a, rhs.ravel()).reshape(m, n)


def clt_brute(data, k, i, j, rho, dtheta=1.0):
    """Exhaustive minimisation over both displacement sets, scalar arithmetic."""
    data = np.asarray(data, dtype=float)
    nf, m, n = data.shape
    prev = data[k - 1] if k > 0 else data[1 if nf > 1 else 0]
    nxt = data[k + 1] if k < nf - 1 else data[nf - 2 if nf > 1 else 0]
    cur = data[k]

    def at(f, a, b):
        return f[mirror(a, m), mirror(b, n)]

    u0 = cur[i, j]
    gi = 0.5 * (at(cur, i + 1, j) - at(cur, i - 1, j))
    gj = 0.5 * (at(cur, i, j + 1) - at(cur, i, j - 1))
    offs = list(itertools.product(range(-rho, rho + 1), repeat=2))
    best = math.inf
    for w1 in offs:
        a = abs(at(prev, i - w1[0], j - w1[1]) - u0)
        for w2 in offs:
            b = abs(at(nxt, i + w2[0], j + w2[1]) - u0)
            val = abs(gi * (w1[0] - w2[0]) + gj * (w1[1] - w2[1])) + a + b
            best = min(best, val)
    return best / dtheta ** 2


def otsu_exhaustive(hist):
    """Threshold maximising the between-class variance, in exact rationals.

    The variance uses the two-class definition (class weights times squared
    mean offsets); empty classes score zero; the smallest maximiser wins.
    """
    hist = [int(v) for v in hist]
    total = sum(hist)
    p = [Fraction(v, total) for v in hist]
    mu_tot = sum(r * pr for r, pr in enumerate(p))
    best, best_t = Fraction(-1), None
    w0 = m0 = Fraction(0)                 # running class-0 weight and first moment
    for t in range(len(hist) - 1):
        w0 += p[t]
        m0 += t * p[t]
        w1 = 1 - w0
        if w0 == 0 or w1 == 0:
            var = Fraction(0)
        else:
            mu0 = m0 / w0
            mu1 = (mu_tot - m0) / w1
            var = w0 * (mu0 - mu_tot) ** 2 + w1 * (mu1 - mu_tot) ** 2
        if var > best:
            best, best_t = var, t
    return best_t, best


def edt_to_boundary(mask, h=1.0):
    """Distance from every region pixel to the nearest inner-boundary pixel
    (brute force over all boundary pixels)."""
    mask = np.asarray(mask, dtype=bool)
    m, n = mask.shape
    boundary = []
    for i in range(m):
        for j in range(n):
            if not mask[i, j]:
                continue
            nbs = [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)]
            if any(not (0 <= a < m and 0 <= b < n) or not mask[a, b] for a, b in nbs):
                boundary.append((i, j))
    bd = np.array(boundary, dtype=float)
    out = np.full(mask.shape, np.nan)
    for i, j in zip(*np.nonzero(mask)):
        out[i, j] = h * np.sqrt(((bd - (i, j)) ** 2).sum(axis=1)).min()
    return out


def flood_components(mask):
    """8-connected components by breadth-first search, labelled in raster order."""
    mask = np.asarray(mask, dtype=bool)
    m, n = mask.shape
    labels = np.zeros((m, n), dtype=int)
    count = 0
    for i in range(m):
        for j in range(n):
            if mask[i, j] and not labels[i, j]:
                count += 1
                labels[i, j] = count
                queue = [(i, j)]
                while queue:
                    a, b = queue.pop()
                    for da in (-1, 0, 1):
                        for db in (-1, 0, 1):
                            x, y = a + da, b + db
                            if 0 <= x < m and 0 <= y < n and mask[x, y] and not labels[x, y]:
                                labels[x, y] = count
                                queue.append((x, y))
    return labels, count


def mean_hausdorff_loops(a, b):
    def directed(p, q):
        total = []
        for x in p:
            total.append(min(math.sqrt((x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]))
                             for y in q))
        return math.fsum(total) / len(p)
    return 0.5 * (directed(a, b) + directed(b, a))


def crop_oracle(frame, p_noise):
    """Walk the histogram down from the top until the cumulative count reaches
    the noise budget; clamp everything above that intensity."""
    values = sorted(int(v) for v in np.ravel(frame))
    budget = len(values) * p_noise
    levels = sorted(set(values), reverse=True)
    count = 0
    i_star = levels[-1]
    for lev in levels:
        count += values.count(lev)
        if count >= budget:
            i_star = lev
            break
    return np.minimum(np.asarray(frame, dtype=float), i_star)
