"""Space-time nonlinear diffusion of a 2D+time stack.

Perona-Malik diffusion gated by the *curvature of Lambertian trajectory*
(clt): points that keep their intensity along a smooth temporal path get
``clt ~ 0`` and are left alone, incoherent noise gets diffused.  Each outer
(scale) step is semi-implicit: a linear system per slice, solved by SOR on a
finite-volume grid with diamond-cell edge gradients.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numba
import numpy as np
from scipy import ndimage

from ._parallel import map_slices
from ._sor import OFFSETS, SolverError, sor_solve
from .stack_io import ImageStack

log = logging.getLogger(__name__)

__all__ = [
    "FilterParams", "FilterReport", "presmooth", "gaussian_kernel", "edge_detector",
    "diamond_gradients", "edge_field", "clt_value", "clt_slice", "clt_field",
    "filter_outer_step", "filter_stack", "SolverError", "OFFSETS",
]


@dataclass(frozen=True)
class FilterParams:
    tau_f: float = 0.25
    k: float = 100.0
    sigma: float = 0.1
    h: float = 0.1
    rho: int = 2
    dtheta: float = 1.0
    outer_tol: float = 1e-3
    sor_omega: float = 1.8
    sor_tol: float = 1e-6
    sor_max_sweeps: int = 1000
    max_outer: int = 100
    freeze_clt: bool = False

    def __post_init__(self):
        if self.tau_f <= 0:
            raise ValueError("tau_f must be > 0")
        if self.k <= 0:
            raise ValueError("k must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.h <= 0:
            raise ValueError("h must be > 0")
        if int(self.rho) != self.rho or self.rho < 0:
            raise ValueError("rho must be a non-negative integer")
        if not 1.0 < self.sor_omega < 2.0:
            raise ValueError("sor_omega must lie in (1, 2)")
        if self.outer_tol <= 0:
            raise ValueError("outer_tol must be > 0")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")


@dataclass
class FilterReport:
    params: Optional[FilterParams] = None
    outer_iterations: int = 0
    converged: bool = False
    # one list per outer step: sum |u^{n+1} - u^n| for every slice
    slice_changes: List[List[float]] = field(default_factory=list)
    sor_sweeps: List[List[int]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = []
        if self.params is not None:
            for name, value in vars(self.params).items():
                lines.append(f"filter.{name}={value}")
        lines.append(f"outer_iterations={self.outer_iterations}")
        lines.append(f"converged={self.converged}")
        for n, (changes, sweeps) in enumerate(zip(self.slice_changes, self.sor_sweeps)):
            ch = ",".join(f"{c:.6g}" for c in changes)
            sw = ",".join(str(s) for s in sweeps)
            lines.append(f"step{n}.change={ch}")
            lines.append(f"step{n}.sor_sweeps={sw}")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def gaussian_kernel(sigma: float, h: float = 1.0) -> np.ndarray:
    """Normalised 1D Gaussian of *variance* ``sigma`` (physical units) sampled
    on a grid of spacing ``h`` and truncated at three standard deviations."""
    if sigma <= 0:
        return np.ones(1)
    std_px = math.sqrt(sigma) / h
    radius = max(1, int(math.ceil(3.0 * std_px)))
    x = np.arange(-radius, radius + 1) * h
    k = np.exp(-x * x / (2.0 * sigma))
    return k / k.sum()


def presmooth(frame, sigma: float, h: float = 1.0) -> np.ndarray:
    """Separable Gaussian convolution with mirrored boundaries; ``sigma=0`` is identity."""
    frame = np.asarray(frame, dtype=np.float64)
    if sigma <= 0:
        return frame.copy()
    k = gaussian_kernel(sigma, h)
    out = ndimage.convolve1d(frame, k, axis=0, mode="reflect")
    return ndimage.convolve1d(out, k, axis=1, mode="reflect")


def edge_detector(s, k: float):
    """Perona-Malik edge stopping function ``1 / (1 + k s^2)``."""
    s = np.asarray(s, dtype=np.float64)
    return 1.0 / (1.0 + k * s * s)


def diamond_gradients(frame, h: float = 1.0) -> np.ndarray:
    """Gradients at the four edge midpoints of every pixel.

    Returns shape ``(4, 2, M, N)``: edge index in :data:`OFFSETS` order
    ``(1,0), (-1,0), (0,1), (0,-1)``, then the two components along axis 0 and
    axis 1.  Tangential components come from corner averages of the four
    pixels sharing each corner.
    """
    u = np.asarray(frame, dtype=np.float64)
    p = np.pad(u, 1, mode="edge")
    c = p[1:-1, 1:-1]
    ip, im = p[2:, 1:-1], p[:-2, 1:-1]
    jp, jm = p[1:-1, 2:], p[1:-1, :-2]
    u11 = 0.25 * (c + jp + ip + p[2:, 2:])
    u1m1 = 0.25 * (c + ip + jm + p[2:, :-2])
    um1m1 = 0.25 * (c + im + jm + p[:-2, :-2])
    um11 = 0.25 * (c + jp + im + p[:-2, 2:])
    g = np.empty((4, 2) + u.shape)
    g[0, 0], g[0, 1] = ip - c, u11 - u1m1          # (1, 0)
    g[1, 0], g[1, 1] = im - c, um11 - um1m1        # (-1, 0)
    g[2, 0], g[2, 1] = u11 - um11, jp - c          # (0, 1)
    g[3, 0], g[3, 1] = u1m1 - um1m1, jm - c        # (0, -1)
    return g / h


def edge_field(frame, k: float, sigma: float, h: float = 1.0) -> np.ndarray:
    """Per-edge diffusivities ``g(|grad G_sigma * u|)``, shape ``(4, M, N)``."""
    grads = diamond_gradients(presmooth(frame, sigma, h), h)
    return edge_detector(np.hypot(grads[:, 0], grads[:, 1]), k)


# --------------------------------------------------------------------------
# clt
# --------------------------------------------------------------------------

def _mirror_pad(frame, pad):
    # half-sample symmetric extension: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
    m, n = frame.shape

    def idx(size):
        t = np.mod(np.arange(-pad, size + pad), 2 * size)
        return np.where(t >= size, 2 * size - 1 - t, t)

    return np.ascontiguousarray(frame[np.ix_(idx(m), idx(n))])


@numba.njit(cache=True, nogil=True, inline="always")
def _clt_at(prev, cur, nxt, i, j, rho, a, b):
    # arrays are padded by rho + 1; (i, j) are padded coordinates
    side = 2 * rho + 1
    nw = side * side
    u0 = cur[i, j]
    gi = 0.5 * (cur[i + 1, j] - cur[i - 1, j])
    gj = 0.5 * (cur[i, j + 1] - cur[i, j - 1])
    min_b = np.inf
    for p in range(nw):
        wi = p // side - rho
        wj = p % side - rho
        a[p] = abs(prev[i - wi, j - wj] - u0)
        b[p] = abs(nxt[i + wi, j + wj] - u0)
        if b[p] < min_b:
            min_b = b[p]
    best = np.inf
    for p in range(nw):
        # |dot| + a + b >= a + b holds under IEEE rounding, so pruning is exact
        ap = a[p]
        if ap + min_b >= best:
            continue
        w1i = p // side - rho
        w1j = p % side - rho
        for q in range(nw):
            if ap + b[q] >= best:
                continue
            dwi = w1i - (q // side - rho)
            dwj = w1j - (q % side - rho)
            val = abs(gi * dwi + gj * dwj) + ap + b[q]
            if val < best:
                best = val
    return best


@numba.njit(cache=True, nogil=True)
def _clt_kernel(prev, cur, nxt, rho, dtheta2, out):
    m, n = out.shape
    pad = rho + 1
    nw = (2 * rho + 1) ** 2
    a = np.empty(nw)
    b = np.empty(nw)
    for i in range(m):
        for j in range(n):
            out[i, j] = _clt_at(prev, cur, nxt, i + pad, j + pad, rho, a, b) / dtheta2


def _neighbours(data, k):
    last = data.shape[0] - 1
    if last == 0:
        return data[0], data[0]
    prev = data[k - 1] if k > 0 else data[1]
    nxt = data[k + 1] if k < last else data[last - 1]
    return prev, nxt


def _padded_triplet(data, k, rho):
    prev, nxt = _neighbours(data, k)
    pad = int(rho) + 1
    return _mirror_pad(prev, pad), _mirror_pad(data[k], pad), _mirror_pad(nxt, pad)


def clt_slice(data: np.ndarray, k: int, rho: int = 2, dtheta: float = 1.0) -> np.ndarray:
    """clt for every pixel of slice ``k`` of a ``(frames, M, N)`` array.

    The minimisation runs exhaustively over integer displacement pairs
    ``(w1, w2)`` with Chebyshev norm at most ``rho`` (pixels).  The spatial
    gradient is a central difference in per-pixel units, so ``<grad u, w>`` is
    independent of the pixel size.  Temporal boundary slices use the reflected
    neighbour (slice 1 stands in for slice -1).
    """
    data = np.asarray(data, dtype=np.float64)
    out = np.empty(data.shape[1:])
    _clt_kernel(*_padded_triplet(data, k, rho), int(rho), float(dtheta) ** 2, out)
    return out


def clt_value(data, k: int, i: int, j: int, rho: int = 2, dtheta: float = 1.0) -> float:
    """Scalar clt at pixel ``(i, j)`` of slice ``k``; see :func:`clt_slice`."""
    data = np.asarray(data, dtype=np.float64)
    nw = (2 * rho + 1) ** 2
    pad = int(rho) + 1
    best = _clt_at(*_padded_triplet(data, k, rho), int(i) + pad, int(j) + pad, int(rho),
                   np.empty(nw), np.empty(nw))
    return float(best / float(dtheta) ** 2)


def clt_field(data, rho: int = 2, dtheta: float = 1.0, threads: int = 1) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    slices = map_slices(lambda k: clt_slice(data, k, rho, dtheta), range(data.shape[0]), threads)
    return np.stack(slices)


# --------------------------------------------------------------------------
# scale steps
# --------------------------------------------------------------------------

def _step_slice(u, clt, g, params):
    c = params.tau_f * clt / (params.h * params.h)
    new, sweeps, _ = sor_solve(u, c, g, params.sor_omega, params.sor_tol,
                               params.sor_max_sweeps, x0=u)
    return new, sweeps


def filter_outer_step(data, params: FilterParams, clt=None, g=None, threads: int = 1,
                      return_info: bool = False):
    """One semi-implicit scale step for every slice.

    ``clt`` (shape ``(frames, M, N)`` or scalar) and ``g`` (shape
    ``(frames, 4, M, N)``, ``(4, M, N)`` or scalar) override the coefficients
    computed from ``data``; used for frozen-clt runs and for tests.
    """
    data = np.asarray(data, dtype=np.float64)
    nf = data.shape[0]
    if clt is None:
        clt = clt_field(data, params.rho, params.dtheta, threads)
    else:
        clt = np.broadcast_to(np.asarray(clt, dtype=np.float64), data.shape)

    def one(k):
        if g is None:
            gk = edge_field(data[k], params.k, params.sigma, params.h)
        else:
            ga = np.asarray(g, dtype=np.float64)
            gk = ga[k] if ga.ndim == 4 else np.broadcast_to(ga, (4,) + data.shape[1:])
        return _step_slice(data[k], clt[k], gk, params)

    results = map_slices(one, range(nf), threads)
    out = np.stack([r[0] for r in results])
    if return_info:
        return out, [r[1] for r in results]
    return out


def filter_stack(stack: ImageStack, params: FilterParams = FilterParams(),
                 report: Optional[FilterReport] = None, threads: int = 1) -> ImageStack:
    """Iterate scale steps until every slice changes by less than ``outer_tol``
    (L1 over the slice) or ``max_outer`` steps have run."""
    if report is None:
        report = FilterReport()
    report.params = params
    u = stack.data.copy()
    frozen = clt_field(u, params.rho, params.dtheta, threads) if params.freeze_clt else None
    for n in range(params.max_outer):
        new, sweeps = filter_outer_step(u, params, clt=frozen, threads=threads, return_info=True)
        changes = np.abs(new - u).sum(axis=(1, 2))
        u = new
        report.outer_iterations = n + 1
        report.slice_changes.append([float(x) for x in changes])
        report.sor_sweeps.append(list(sweeps))
        log.debug("filter step %d: max slice change %.3g", n, changes.max())
        if np.all(changes < params.outer_tol):
            report.converged = True
            break
    return stack.with_data(u, stack.value_range)
