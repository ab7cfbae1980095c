"""Segmentation and tracking quality measures."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np


def _points(a) -> np.ndarray:
    p = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    if p.shape[0] == 0:
        raise ValueError("point set is empty")
    return p


def directed_mean_hausdorff(a, b) -> float:
    """Mean over ``a`` of the distance to the nearest point of ``b``."""
    pa, pb = _points(a), _points(b)
    nearest = []
    for lo in range(0, len(pa), 512):
        dx = pa[lo:lo + 512, None, 0] - pb[None, :, 0]
        dy = pa[lo:lo + 512, None, 1] - pb[None, :, 1]
        nearest.extend(np.sqrt(dx * dx + dy * dy).min(axis=1).tolist())
    return math.fsum(nearest) / len(pa)


def mean_hausdorff(a, b) -> float:
    """Symmetrised mean Hausdorff distance of two 2D point sets."""
    return 0.5 * (directed_mean_hausdorff(a, b) + directed_mean_hausdorff(b, a))


def _pair(mask_a, mask_b):
    a = np.asarray(mask_a).astype(bool)
    b = np.asarray(mask_b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def iou(mask_a, mask_b) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    a, b = _pair(mask_a, mask_b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def dice(mask_a, mask_b) -> float:
    a, b = _pair(mask_a, mask_b)
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * np.count_nonzero(a & b) / total


def boundary_extract(mask) -> np.ndarray:
    """Inner boundary: foreground pixels with a background 4-neighbour (the
    outside of the image counts as background).  Returns ``(k, 2)`` as
    ``(row, col)``."""
    m = np.asarray(mask).astype(bool)
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return np.argwhere(m & ~interior)


def exposed_edges(mask) -> int:
    m = np.asarray(mask).astype(bool)
    p = np.pad(m, 1, constant_values=False).astype(np.int8)
    return int(np.abs(np.diff(p, axis=0)).sum() + np.abs(np.diff(p, axis=1)).sum())


def shape_stats(mask, h: float = 1.0) -> Tuple[float, float, float]:
    """``(perimeter, area, circularity)`` with the perimeter taken as the number
    of exposed pixel edges; circularity is ``4 pi area / perimeter^2``."""
    m = np.asarray(mask).astype(bool)
    area = float(np.count_nonzero(m)) * h * h
    if area == 0:
        raise ValueError("mask is empty")
    perimeter = exposed_edges(m) * h
    return perimeter, area, 4.0 * math.pi * area / perimeter ** 2


def polyline_length(points) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(p) < 2:
        return 0.0
    return float(np.hypot(*np.diff(p, axis=0).T).sum())


def trajectory_distance(manual: Dict[int, Tuple[float, float]],
                        auto: Dict[int, Tuple[float, float]]):
    """``(d_H, d_avg, L_manual, L_auto)`` for two trajectories given as
    ``{theta: (x, y)}``.  ``d_avg`` averages the point distance over the
    common slices."""
    common = sorted(set(manual) & set(auto))
    if not common:
        raise ValueError("trajectories share no slice")
    pm = np.array([manual[t] for t in sorted(manual)], dtype=np.float64)
    pa = np.array([auto[t] for t in sorted(auto)], dtype=np.float64)
    d_avg = math.fsum(math.dist(manual[t], auto[t]) for t in common) / len(common)
    return mean_hausdorff(pm, pa), d_avg, polyline_length(pm), polyline_length(pa)


Link = Tuple[int, Hashable, int, Hashable]     # (theta, source, theta_next, target)


def link_accuracy(pred_links: Sequence[Link], true_links: Sequence[Link],
                  per_slice: Optional[Dict[int, float]] = None) -> float:
    """Mean over slices of (correct links / all links).

    A true link from ``(theta, src)`` is correct when the predicted links
    leaving that source are exactly that one link.  Predicted links whose
    source has no true link count as extra wrong links.  ``src`` and target
    identities are compared directly, so predicted points must already be
    mapped to ground-truth ids (see :func:`match_points`).
    """
    true_by_src = {(t, s): (tn, d) for t, s, tn, d in true_links}
    pred_by_src: Dict[tuple, set] = defaultdict(set)
    for t, s, tn, d in pred_links:
        pred_by_src[(t, s)].add((tn, d))
    correct: Dict[int, int] = defaultdict(int)
    total: Dict[int, int] = defaultdict(int)
    for (t, s), target in true_by_src.items():
        total[t] += 1
        if pred_by_src.get((t, s)) == {target}:
            correct[t] += 1
    for (t, s), targets in pred_by_src.items():
        if (t, s) not in true_by_src:
            total[t] += len(targets)
    if not total:
        return 1.0
    acc = {t: correct[t] / total[t] for t in sorted(total)}
    if per_slice is not None:
        per_slice.update(acc)
    return float(np.mean(list(acc.values())))


def match_points(points: Sequence[Tuple[int, float, float]],
                 gold: Dict[int, Dict[Hashable, Tuple[float, float]]],
                 radius: float = np.inf) -> List[Optional[Hashable]]:
    """Ground-truth id of each ``(theta, x, y)``: the nearest gold center in
    the same slice within ``radius`` (``None`` otherwise)."""
    out = []
    for theta, x, y in points:
        best, best_d = None, radius
        for gid, (gx, gy) in sorted(gold.get(theta, {}).items()):
            d = math.hypot(x - gx, y - gy)
            if d < best_d or (best is None and d <= best_d):
                best, best_d = gid, d
        out.append(best)
    return out


@dataclass
class EvalReport:
    d_h: float = float("nan")
    d_avg: float = float("nan")
    iou: float = float("nan")
    dice: float = float("nan")
    perimeter: float = float("nan")
    area: float = float("nan")
    circularity: float = float("nan")
    mean_accuracy: float = float("nan")
    l_manual: float = float("nan")
    l_auto: float = float("nan")
    extra: Dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        rows = {k: v for k, v in vars(self).items() if k != "extra"}
        rows.update(self.extra)
        return "".join(f"{k}={v}\n" for k, v in rows.items())
