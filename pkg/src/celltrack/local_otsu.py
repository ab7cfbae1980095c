"""Windowed Otsu thresholding with a background-only window test.

Every pixel gets its own Otsu threshold from the ``s x s`` window around it
(mirrored at the image border).  A window is accepted as containing an object
only if the two Otsu classes differ in mean by more than ``delta`` relative to
the darker class; otherwise the pixel is background whatever its intensity.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from ._parallel import map_slices
from .stack_io import ImageStack

L_MAX = 255


@dataclass(frozen=True)
class OtsuParams:
    s: Optional[int] = 50   # None: one window covering the whole image
    delta: float = 0.5
    presence_test: bool = True

    def __post_init__(self):
        if self.s is not None and self.s < 1:
            raise ValueError("window side s must be >= 1")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")


@dataclass(frozen=True)
class WindowStats:
    threshold: int
    between_var: float
    omega0: float
    omega1: float
    mu0: float
    mu1: float
    mu_tot: float


def _as_levels(frame) -> np.ndarray:
    f = np.asarray(frame)
    if f.dtype.kind == "f":
        if not np.all(f == np.rint(f)):
            raise ValueError("local Otsu expects integer intensities in [0, 255]")
    f = f.astype(np.int64)
    if f.size and (f.min() < 0 or f.max() > L_MAX):
        raise ValueError("local Otsu expects integer intensities in [0, 255]")
    return f


def _mirror_idx(t: np.ndarray, n: int) -> np.ndarray:
    t = np.mod(t, 2 * n)
    return np.where(t >= n, 2 * n - 1 - t, t)


def window_histogram(frame, i: int, j: int, s: int) -> np.ndarray:
    """256-bin counts of the window whose rows run ``i - s//2 ... i - s//2 + s - 1``
    (same for columns), mirrored at the border."""
    f = _as_levels(frame)
    m, n = f.shape
    rows = _mirror_idx(np.arange(s) + i - s // 2, m)
    cols = _mirror_idx(np.arange(s) + j - s // 2, n)
    return np.bincount(f[np.ix_(rows, cols)].ravel(), minlength=L_MAX + 1)


@numba.njit(cache=True, nogil=True)
def _otsu_hist(hist, total, s_tot):
    # argmax of the between-class variance; integer bookkeeping keeps
    # (mu_tot*w0 - mu0*w0) exact, ties go to the smallest threshold
    best = 0.0
    t_best = 0
    n0 = 0
    s0 = 0
    for t in range(L_MAX):
        c = hist[t]
        n0 += c
        s0 += t * c
        if c == 0 or n0 == 0 or n0 == total:
            continue
        num = float(s_tot * n0 - s0 * total)
        key = num * num / (float(n0) * float(total - n0))
        if key > best:
            best = key
            t_best = t
    return t_best, best


def otsu_optimal(histogram) -> WindowStats:
    """Optimal Otsu threshold of a histogram over intensities ``0..255``.

    Thresholds run over ``0 <= T < 255``; a class left empty scores zero
    between-class variance, and ties resolve to the smallest ``T``.
    """
    hist = np.zeros(L_MAX + 1, dtype=np.int64)
    h = np.asarray(histogram, dtype=np.int64)
    hist[:len(h)] = h
    total = int(hist.sum())
    if total <= 0:
        raise ValueError("histogram is empty")
    levels = np.arange(L_MAX + 1)
    s_tot = int((levels * hist).sum())
    t, key = _otsu_hist(hist, total, s_tot)
    n0 = int(hist[:t + 1].sum())
    s0 = int((levels[:t + 1] * hist[:t + 1]).sum())
    w0 = n0 / total
    mu0 = s0 / n0 if n0 else 0.0
    mu1 = (s_tot - s0) / (total - n0) if total - n0 else 0.0
    return WindowStats(threshold=int(t), between_var=key / (total * total), omega0=w0,
                       omega1=1.0 - w0, mu0=mu0, mu1=mu1, mu_tot=s_tot / total)


def between_class_variance(hist, t: int) -> float:
    """Between-class variance of threshold ``t`` in the reduced one-mean form."""
    p = np.asarray(hist, dtype=np.float64)
    p = p / p.sum()
    r = np.arange(len(p))
    w0 = p[:t + 1].sum()
    if w0 <= 0 or w0 >= 1:
        return 0.0
    mu_tot = (r * p).sum()
    m0w0 = (r[:t + 1] * p[:t + 1]).sum()
    return (mu_tot * w0 - m0w0) ** 2 / (w0 * (1 - w0))


def object_presence(stats: WindowStats, delta: float) -> bool:
    """Relative mean difference test; an empty class means background only.

    ``mu0 == 0`` (a black background class) counts as presence when the other
    class is brighter.
    """
    if stats.omega0 <= 0 or stats.omega1 <= 0:
        return False
    if stats.mu0 == 0:
        return stats.mu1 > 0
    return abs(stats.mu0 - stats.mu1) / stats.mu0 > delta


@numba.njit(cache=True, inline="always")
def _mirror(t, n):
    period = 2 * n
    t = t % period
    if t >= n:
        t = period - 1 - t
    return t


@numba.njit(cache=True, nogil=True)
def _local_kernel(f, s, delta, test, out):
    m, n = f.shape
    half = s // 2
    rows = np.empty(s, np.int64)
    cols = np.empty(n + s, np.int64)
    for t in range(n + s):
        cols[t] = _mirror(t - half, n)
    total = s * s
    hist = np.zeros(L_MAX + 1, np.int64)
    for i in range(m):
        for a in range(s):
            rows[a] = _mirror(i - half + a, m)
        hist[:] = 0
        s_tot = 0
        for b in range(s):
            cb = cols[b]
            for a in range(s):
                v = f[rows[a], cb]
                hist[v] += 1
                s_tot += v
        for j in range(n):
            if j > 0:
                c_out = cols[j - 1]
                c_in = cols[j - 1 + s]
                for a in range(s):
                    v = f[rows[a], c_out]
                    hist[v] -= 1
                    s_tot -= v
                    v = f[rows[a], c_in]
                    hist[v] += 1
                    s_tot += v
            t_best, key = _otsu_hist(hist, total, s_tot)
            n0 = 0
            s0 = 0
            for t in range(t_best + 1):
                n0 += hist[t]
                s0 += t * hist[t]
            present = True
            if test:
                if n0 == 0 or n0 == total:
                    present = False
                else:
                    mu0 = s0 / n0
                    mu1 = (s_tot - s0) / (total - n0)
                    if mu0 == 0:
                        present = mu1 > 0
                    else:
                        present = abs(mu0 - mu1) / mu0 > delta
            out[i, j] = 1 if (present and f[i, j] > t_best) else 0


def local_thresholds(frame, s: int) -> np.ndarray:
    """Per-pixel optimal thresholds (slow reference path, used by tests and tools)."""
    f = _as_levels(frame)
    out = np.empty(f.shape, dtype=np.int64)
    for i in range(f.shape[0]):
        for j in range(f.shape[1]):
            out[i, j] = otsu_optimal(window_histogram(f, i, j, s)).threshold
    return out


def binarize_frame(frame, params: OtsuParams = OtsuParams()) -> np.ndarray:
    """Binary mask of one ``[0, 255]`` frame."""
    f = _as_levels(frame)
    if params.s is None:
        stats = otsu_optimal(np.bincount(f.ravel(), minlength=L_MAX + 1))
        if params.presence_test and not object_presence(stats, params.delta):
            return np.zeros(f.shape, dtype=bool)
        return f > stats.threshold
    out = np.empty(f.shape, dtype=np.uint8)
    _local_kernel(np.ascontiguousarray(f), int(params.s), float(params.delta),
                  bool(params.presence_test), out)
    return out.astype(bool)


def binarize_stack(stack, params: OtsuParams = OtsuParams(), threads: int = 1) -> np.ndarray:
    """Binary stack ``(frames, M, N)`` from a ``[0, 255]`` stack."""
    data = stack.data if isinstance(stack, ImageStack) else np.asarray(stack)
    if data.ndim == 2:
        data = data[None]
    masks = map_slices(lambda k: binarize_frame(data[k], params), range(data.shape[0]), threads)
    return np.stack(masks)
