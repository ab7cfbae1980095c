"""Trajectory extraction and linking.

Partial trajectories come from temporal overlap of segmented regions, found by
walking backwards in time from the last slice.  They are then joined in two
passes: first across short gaps where the objects never overlapped (endpoint
extrapolation along the finite-difference tangent), then across short runs of
common slices caused by fragmented segmentation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .centers import BIG, CenterData, Region, compute_centers


class Point(NamedTuple):
    theta: int
    x: float
    y: float
    estimated: bool = False
    label: int = 0          # source region label, 0 for estimated points


@dataclass
class Trajectory:
    id: int
    points: List[Point] = field(default_factory=list)

    @property
    def start(self) -> int:
        return self.points[0].theta

    @property
    def end(self) -> int:
        return self.points[-1].theta

    def __len__(self) -> int:
        return len(self.points)

    def xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64).reshape(-1, 2)

    def at(self, theta: int) -> Optional[Point]:
        k = theta - self.start
        if 0 <= k < len(self.points):
            return self.points[k]
        return None


@dataclass(frozen=True)
class LinkParams:
    dr: float = 30.0          # pass-1 radius (pixels)
    dr2: float = 120.0        # pass-2 radius (pixels)
    dr_theta: int = 5         # pass-2 maximum common slices
    dtheta: float = 1.0
    max_gap: int = 2          # pass-1 endpoint slice difference, 1..max_gap

    def __post_init__(self):
        if self.dr < 0 or self.dr2 < 0:
            raise ValueError("link radii must be >= 0")
        if self.dr_theta < 0:
            raise ValueError("dr_theta must be >= 0")
        if self.dtheta <= 0:
            raise ValueError("dtheta must be > 0")
        if self.max_gap < 1:
            raise ValueError("max_gap must be >= 1")


@dataclass
class TrackReport:
    n_partial: int = 0
    n_after_pass1: int = 0
    n_after_pass2: int = 0
    mean_length: float = 0.0
    pass1_links: int = 0
    pass2_links: int = 0

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in vars(self).items())


# --------------------------------------------------------------------------
# partial trajectories
# --------------------------------------------------------------------------

def extract_partial(data: CenterData) -> List[Trajectory]:
    """Backtracking extraction of partial trajectories.

    Slices are seeded from the last one downwards.  Every active chain head at
    slice ``theta`` (taken in label order) is projected onto ``theta - 1``:
    if the projected center lies in an unclaimed region that region's center
    is adopted; otherwise the head region's pixels are scanned in row-major
    order for the first one lying in an unclaimed region at ``theta - 1``.  A
    region is claimed by at most one chain, and unclaimed regions seed new
    chains when their slice becomes the starting slice.
    """
    nf = data.labels.shape[0]
    claimed = [np.zeros(len(r) + 1, dtype=bool) for r in data.regions]
    trajs: List[Trajectory] = []

    def point(theta, lab):
        reg = data.regions[theta][lab - 1]
        return Point(theta, float(reg.cx), float(reg.cy), False, lab)

    for theta_l in range(nf - 1, -1, -1):
        heads: List[Tuple[int, List[Point]]] = []
        for reg in data.regions[theta_l]:
            if not claimed[theta_l][reg.label]:
                claimed[theta_l][reg.label] = True
                chain = [point(theta_l, reg.label)]
                trajs.append(Trajectory(len(trajs), chain))
                heads.append((reg.label, chain))
        theta = theta_l
        while heads and theta > 0:
            prev_d = data.distance[theta - 1]
            prev_lab = data.labels[theta - 1]
            taken = claimed[theta - 1]
            nxt = []
            for lab, chain in sorted(heads, key=lambda t: t[0]):
                reg = data.regions[theta][lab - 1]
                ci, cj = reg.center
                found = 0
                if prev_d[ci, cj] != BIG and not taken[prev_lab[ci, cj]]:
                    found = prev_lab[ci, cj]
                else:
                    hits = prev_lab[reg.rows, reg.cols]
                    ok = (prev_d[reg.rows, reg.cols] != BIG) & ~taken[hits]
                    pos = np.flatnonzero(ok)
                    if pos.size:
                        found = hits[pos[0]]
                if found:
                    taken[found] = True
                    chain.append(point(theta - 1, int(found)))
                    nxt.append((int(found), chain))
            heads = nxt
            theta -= 1
    for t in trajs:
        t.points.reverse()
    trajs.sort(key=lambda t: t.id)
    return trajs


# --------------------------------------------------------------------------
# tangents and extrapolation
# --------------------------------------------------------------------------

# backward-difference weights on (r_b, r_{b-1}, r_{b-2}, r_{b-3}) by order
_TANGENT = {
    1: (1.0, -1.0),
    2: (1.5, -2.0, 0.5),
    3: (11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0),
}
# extrapolation r_{b+1} = c_v * V * dtheta + sum c_k r_{b-k}
_EXTRAP = {
    1: (1.0, (1.0,)),
    2: (2.0 / 3.0, (4.0 / 3.0, -1.0 / 3.0)),
    3: (6.0 / 11.0, (18.0 / 11.0, -9.0 / 11.0, 2.0 / 11.0)),
}


def _end_points(points: np.ndarray, end: str) -> np.ndarray:
    # points ordered from the chosen end inwards
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if end == "tail":
        return pts[::-1]
    if end == "head":
        return pts
    raise ValueError("end must be 'head' or 'tail'")


def _order(n: int) -> int:
    return min(n - 1, 3)


def tangent(points, end: str = "tail", dtheta: float = 1.0) -> np.ndarray:
    """Finite-difference tangent at one end of a trajectory.

    ``points`` is an ``(n, 2)`` array in time order.  Four or more points use
    the third-order one-sided difference, three points second order, two
    points first order; a single point has zero velocity.  At the head the
    forward difference is used, at the tail the backward one.
    """
    pts = _end_points(points, end)
    order = _order(len(pts))
    if order == 0:
        return np.zeros(2)
    w = _TANGENT[order]
    v = sum(c * pts[k] for k, c in enumerate(w)) / dtheta
    return v if end == "tail" else -v


def extrapolate(points, end: str = "tail", dtheta: float = 1.0) -> np.ndarray:
    """Estimated point one slice beyond ``end`` assuming the end tangent stays
    the same one slice further out; a single point extrapolates to itself."""
    pts = _end_points(points, end)
    order = _order(len(pts))
    if order == 0:
        return pts[0].copy()
    v = tangent(points, end, dtheta)
    if end == "head":
        v = -v
    cv, coeffs = _EXTRAP[order]
    return cv * v * dtheta + sum(c * pts[k] for k, c in enumerate(coeffs))


def extrapolate_steps(points, end: str, steps: int, dtheta: float = 1.0) -> List[np.ndarray]:
    """``steps`` successive estimates beyond ``end`` (nearest first); each
    estimate is appended before the next one is made."""
    pts = [np.asarray(p, dtype=np.float64) for p in np.asarray(points).reshape(-1, 2)]
    out = []
    for _ in range(steps):
        window = pts[-4:] if end == "tail" else pts[:4]
        est = extrapolate(np.array(window), end, dtheta)
        out.append(est)
        if end == "tail":
            pts.append(est)
        else:
            pts.insert(0, est)
    return out


# --------------------------------------------------------------------------
# pass 1: gap linking
# --------------------------------------------------------------------------

def _pass1_candidate(a: Trajectory, b: Trajectory, params: LinkParams):
    gap = b.start - a.end
    xa, xb = a.xy(), b.xy()
    if gap == 1:
        fwd = extrapolate(xa[-4:], "tail", params.dtheta)
        bwd = extrapolate(xb[:4], "head", params.dtheta)
        key = min(np.hypot(*(fwd - xb[0])), np.hypot(*(bwd - xa[-1])))
        return key, []
    fwd = extrapolate_steps(xa[-4:], "tail", gap - 1, params.dtheta)
    bwd = extrapolate_steps(xb[:4], "head", gap - 1, params.dtheta)[::-1]
    dists = [np.hypot(*(f - g)) for f, g in zip(fwd, bwd)]
    fill = []
    for k, (f, g) in enumerate(zip(fwd, bwd)):
        w = (k + 1) / gap
        fill.append((1.0 - w) * f + w * g)
    return min(dists), fill


def _concat(a: Trajectory, b: Trajectory, fill) -> Trajectory:
    gap_pts = [Point(a.end + 1 + k, float(p[0]), float(p[1]), True, 0)
               for k, p in enumerate(fill)]
    return Trajectory(min(a.id, b.id), a.points + gap_pts + b.points)


def link_pass1(trajs: Sequence[Trajectory], params: LinkParams = LinkParams()) -> Tuple[List[Trajectory], int]:
    """Join trajectories whose endpoints are 1..``max_gap`` slices apart.

    Slice difference 1: the tail estimate of one must fall within ``dr`` of
    the other's head, or the head estimate within ``dr`` of the tail.  Larger
    differences: the forward and backward estimates must meet within ``dr`` in
    a common gap slice; gap slices are filled with blended estimates.  Each
    round links greedily nearest-first (ties by trajectory ids) with every
    head and tail used at most once; rounds repeat until nothing links.
    Returns the new list and the number of links made.
    """
    cur = {t.id: t for t in trajs}
    total = 0
    while True:
        by_start: Dict[int, List[Trajectory]] = {}
        for t in cur.values():
            by_start.setdefault(t.start, []).append(t)
        cands = []
        for a in cur.values():
            for gap in range(1, params.max_gap + 1):
                for b in by_start.get(a.end + gap, ()):
                    key, fill = _pass1_candidate(a, b, params)
                    if key <= params.dr:
                        cands.append((key, a.id, b.id, fill))
        if not cands:
            break
        cands.sort(key=lambda c: (c[0], c[1], c[2]))
        tail_used, head_used = set(), set()
        succ = {}
        for key, ia, ib, fill in cands:
            if ia in tail_used or ib in head_used:
                continue
            tail_used.add(ia)
            head_used.add(ib)
            succ[ia] = (ib, fill)
        total += len(succ)
        # merge chains a -> b -> c ... starting from trajectories with no predecessor
        for start in sorted(set(succ) - head_used):
            merged = cur.pop(start)
            nid = start
            while nid in succ:
                nid, fill = succ[nid]
                merged = _concat(merged, cur.pop(nid), fill)
            cur[merged.id] = merged
    return sorted(cur.values(), key=lambda t: t.id), total


# --------------------------------------------------------------------------
# pass 2: fragment merging
# --------------------------------------------------------------------------

def _pass2_candidate(a: Trajectory, b: Trajectory, params: LinkParams):
    # a starts first, b starts inside a and ends after it
    if not (a.start < b.start <= a.end < b.end):
        return None
    common = a.end - b.start + 1
    if common > params.dr_theta:
        return None
    xa, xb = a.xy(), b.xy()
    est_tail = extrapolate(xa[-4:], "tail", params.dtheta)
    rj = b.at(a.end + 1)
    d1 = np.hypot(est_tail[0] - rj.x, est_tail[1] - rj.y)
    est_head = extrapolate(xb[:4], "head", params.dtheta)
    rj = a.at(b.start - 1)
    d2 = np.hypot(est_head[0] - rj.x, est_head[1] - rj.y)
    key = min(d1, d2)
    if key > params.dr2:
        return None
    return key, common


def merge_overlapping(a: Trajectory, b: Trajectory) -> Trajectory:
    """Union of two time-overlapping trajectories; common slices keep the
    points of the longer one (the first on equal length)."""
    keep = a if len(a) >= len(b) else b
    pts = {p.theta: p for p in (b if keep is a else a).points}
    pts.update({p.theta: p for p in keep.points})
    return Trajectory(min(a.id, b.id), [pts[t] for t in sorted(pts)])


def link_pass2(trajs: Sequence[Trajectory], params: LinkParams = LinkParams()) -> Tuple[List[Trajectory], int]:
    """Merge pairs sharing at most ``dr_theta`` common slices whose endpoint
    estimate lands within ``dr2`` of the other trajectory's point."""
    cur = {t.id: t for t in trajs}
    total = 0
    while True:
        items = sorted(cur.values(), key=lambda t: t.id)
        cands = []
        for a in items:
            for b in items:
                if a is b:
                    continue
                c = _pass2_candidate(a, b, params)
                if c is not None:
                    cands.append((c[0], a.id, b.id))
        if not cands:
            break
        cands.sort()
        used = set()
        for key, ia, ib in cands:
            if ia in used or ib in used:
                continue
            used.update((ia, ib))
            merged = merge_overlapping(cur.pop(ia), cur.pop(ib))
            cur[merged.id] = merged
            total += 1
    return sorted(cur.values(), key=lambda t: t.id), total


# --------------------------------------------------------------------------
# orchestration and I/O
# --------------------------------------------------------------------------

def track(mask_stack=None, params: LinkParams = LinkParams(), centers: Optional[CenterData] = None,
          h: float = 1.0, min_area: int = 1, report: Optional[TrackReport] = None) -> List[Trajectory]:
    """Centers, partial trajectories, then both linking passes."""
    if report is None:
        report = TrackReport()
    if centers is None:
        centers = compute_centers(mask_stack, h=h, min_area=min_area)
    partial = extract_partial(centers)
    report.n_partial = len(partial)
    after1, report.pass1_links = link_pass1(partial, params)
    report.n_after_pass1 = len(after1)
    after2, report.pass2_links = link_pass2(after1, params)
    report.n_after_pass2 = len(after2)
    report.mean_length = float(np.mean([len(t) for t in after2])) if after2 else 0.0
    return after2


def write_trajectories_csv(path, trajs: Sequence[Trajectory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "theta", "x", "y", "estimated"])
        for t in trajs:
            for p in t.points:
                w.writerow([t.id, p.theta, repr(float(p.x)), repr(float(p.y)), int(p.estimated)])


def read_trajectories_csv(path) -> List[Trajectory]:
    out: Dict[int, Trajectory] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tid = int(row["traj_id"])
            t = out.setdefault(tid, Trajectory(tid))
            t.points.append(Point(int(row["theta"]), float(row["x"]), float(row["y"]),
                                  bool(int(row["estimated"]))))
    for t in out.values():
        t.points.sort(key=lambda p: p.theta)
    return [out[k] for k in sorted(out)]


def trajectory_links(trajs: Sequence[Trajectory]) -> List[Tuple[int, Point, int, Point]]:
    """Forward links between consecutive real points of each trajectory;
    estimated points are skipped over."""
    links = []
    for t in trajs:
        real = [p for p in t.points if not p.estimated]
        for p, q in zip(real, real[1:]):
            links.append((p.theta, p, q.theta, q))
    return links
