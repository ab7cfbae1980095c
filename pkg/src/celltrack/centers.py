"""Connected regions, in-region distance function and approximate centers.

The distance function is the steady state of ``d_t + |grad d| = 1`` solved by
explicit time relaxation with the upwind Rouy-Tourin stencil.  Pixels outside
the segmentation hold the sentinel ``BIG``; region pixels touching the outside
(4-neighbourhood) are pinned to zero.  The distance maximum of a region is its
approximate center, which therefore always lies inside the region.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numba
import numpy as np
from scipy import ndimage

BIG = 1e9

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Region:
    theta: int
    label: int
    rows: np.ndarray        # row-major ordered pixel coordinates
    cols: np.ndarray
    center: tuple           # (row, col)

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def cx(self) -> int:
        return int(self.center[1])

    @property
    def cy(self) -> int:
        return int(self.center[0])


def label_image(mask_frame) -> tuple:
    """8-connected label image (0 = background) and the region count.

    Labels follow the raster order in which each region's first pixel appears.
    """
    mask = np.asarray(mask_frame).astype(bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    return labels.astype(np.int32), int(n)


def drop_small(mask_frame, min_area: int = 1) -> np.ndarray:
    """Remove 8-connected components smaller than ``min_area`` pixels."""
    mask = np.asarray(mask_frame).astype(bool)
    if min_area <= 1:
        return mask
    labels, n = label_image(mask)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = sizes >= min_area
    keep[0] = False
    return keep[labels]


# --------------------------------------------------------------------------
# eikonal
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def _boundary_and_interior(inside):
    nf, m, n = inside.shape
    interior = np.zeros(inside.shape, np.bool_)
    for k in range(nf):
        for i in range(m):
            for j in range(n):
                if not inside[k, i, j]:
                    continue
                # pixels at the image border count as touching the outside
                if (i == 0 or j == 0 or i == m - 1 or j == n - 1
                        or not inside[k, i - 1, j] or not inside[k, i + 1, j]
                        or not inside[k, i, j - 1] or not inside[k, i, j + 1]):
                    continue
                interior[k, i, j] = True
    return interior


@numba.njit(cache=True)
def _eikonal_kernel(d, ks, iis, jjs, h, tol, max_iter, per_slice):
    nf = d.shape[0]
    npx = ks.size
    tau = 0.5 * h
    new = np.empty(npx)
    active = np.ones(nf, np.bool_)
    changes = np.zeros(nf)
    it = 0
    while it < max_iter:
        it += 1
        for p in range(npx):
            k = ks[p]
            if not active[k]:
                new[p] = d[k, iis[p], jjs[p]]
                continue
            i = iis[p]
            j = jjs[p]
            c = d[k, i, j]
            dm = min(d[k, i - 1, j] - c, 0.0)
            dp = min(d[k, i + 1, j] - c, 0.0)
            m10 = max(dm * dm, dp * dp)
            dm = min(d[k, i, j - 1] - c, 0.0)
            dp = min(d[k, i, j + 1] - c, 0.0)
            m01 = max(dm * dm, dp * dp)
            new[p] = c + tau - tau / h * np.sqrt(m10 + m01)
        changes[:] = 0.0
        for p in range(npx):
            k = ks[p]
            changes[k] += abs(new[p] - d[k, iis[p], jjs[p]])
            d[k, iis[p], jjs[p]] = new[p]
        if per_slice:
            done = True
            for k in range(nf):
                if active[k] and changes[k] < tol:
                    active[k] = False
                if active[k]:
                    done = False
            if done:
                break
        elif changes.sum() < tol:
            break
    return it


def eikonal_distance(masks, h: float = 1.0, tol: float = 1e-3, max_iter: int = 100000,
                     per_slice: bool = False, return_iterations: bool = False):
    """Distance-to-boundary inside the segmented regions of a frame or stack.

    Outside pixels get :data:`BIG`.  Iteration stops when the summed absolute
    update over the whole stack drops below ``tol`` (``per_slice=True`` applies
    the test to each slice separately).
    """
    inside = np.asarray(masks).astype(bool)
    single = inside.ndim == 2
    if single:
        inside = inside[None]
    d = np.where(inside, 0.0, BIG)
    ks, iis, jjs = np.nonzero(_boundary_and_interior(inside))
    it = 0
    if ks.size:
        it = _eikonal_kernel(d, ks.astype(np.int64), iis.astype(np.int64),
                             jjs.astype(np.int64), float(h), float(tol), int(max_iter),
                             bool(per_slice))
    out = d[0] if single else d
    return (out, it) if return_iterations else out


def region_center(distance, rows, cols) -> tuple:
    """Pixel of maximal distance among ``(rows, cols)``; the first one in
    row-major order wins ties."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    order = np.lexsort((cols, rows))
    vals = np.asarray(distance)[rows[order], cols[order]]
    p = order[int(np.argmax(vals))]
    return int(rows[p]), int(cols[p])


def regions_of_frame(labels, n: int, distance, theta: int = 0) -> List[Region]:
    """Regions of one labelled frame with their distance-maximum centers."""
    if n == 0:
        return []
    # stable sort on flat index keeps each region's pixels in row-major order
    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    order = np.argsort(flat[idx], kind="stable")
    idx = idx[order]
    bounds = np.searchsorted(flat[idx], np.arange(1, n + 2))
    regions = []
    w = labels.shape[1]
    for lab in range(1, n + 1):
        pix = idx[bounds[lab - 1]:bounds[lab]]
        rows, cols = pix // w, pix % w
        regions.append(Region(theta, lab, rows, cols, region_center(distance, rows, cols)))
    return regions


def label_regions(mask_frame, h: float = 1.0, theta: int = 0) -> List[Region]:
    """8-connected regions of one binary frame with their centers."""
    labels, n = label_image(mask_frame)
    d = eikonal_distance(labels > 0, h)
    return regions_of_frame(labels, n, d, theta)


@dataclass
class CenterData:
    """Per-slice labels, distance fields and regions of a segmented stack."""
    labels: np.ndarray          # (frames, M, N) int32
    distance: np.ndarray        # (frames, M, N), BIG outside
    regions: List[List[Region]]
    iterations: int = 0
    per_slice_stop: bool = False


def compute_centers(mask_stack, h: float = 1.0, min_area: int = 1, tol: float = 1e-3,
                    per_slice: bool = False) -> CenterData:
    masks = np.asarray(mask_stack).astype(bool)
    if masks.ndim == 2:
        masks = masks[None]
    masks = np.stack([drop_small(m, min_area) for m in masks]) if masks.size else masks
    labelled = [label_image(m) for m in masks]
    labels = (np.stack([lab for lab, _ in labelled]) if labelled
              else np.zeros(masks.shape, np.int32))
    d, it = eikonal_distance(masks, h, tol, per_slice=per_slice, return_iterations=True)
    regions = [regions_of_frame(labelled[k][0], labelled[k][1], d[k], k)
               for k in range(masks.shape[0])]
    return CenterData(labels, d, regions, it, per_slice)


def write_centers_csv(path, regions: Sequence[Sequence[Region]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "label", "cx", "cy", "area"])
        for per_slice in regions:
            for r in per_slice:
                w.writerow([r.theta, r.label, r.cx, r.cy, r.area])


def read_centers_csv(path) -> Dict[int, List[dict]]:
    out: Dict[int, List[dict]] = {}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {k: int(v) for k, v in row.items()}
            out.setdefault(rec["theta"], []).append(rec)
    return out
