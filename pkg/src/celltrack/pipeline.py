"""Stage functions shared by the CLI, the sweep and the demos.

The chain is: histogram crop -> rescale to [0, 1] -> space-time filter ->
rescale to [0, 255] -> local Otsu -> SUBSURF -> centers -> tracking.  Each
stage consumes exactly what the previous one would write to disk, so running
the stages one by one through files gives the same result as one in-memory run.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .centers import CenterData, compute_centers
from .config import PipelineConfig
from .local_otsu import binarize_stack
from .metrics import link_accuracy, match_points, trajectory_distance
from .stack_io import ImageStack, histogram_crop, rescale
from .stfilter import FilterReport, filter_stack
from .subsurf import subsurf_evolve
from .tracker import TrackReport, Trajectory, track, trajectory_links

log = logging.getLogger(__name__)


def crop_stage(raw: ImageStack, cfg: PipelineConfig) -> ImageStack:
    return histogram_crop(raw, cfg.crop)


def filter_stage(cropped: ImageStack, cfg: PipelineConfig, threads: int = 1,
                 report: Optional[FilterReport] = None) -> ImageStack:
    """Filtered stack on the integer ``[0, 255]`` scale expected by local Otsu."""
    unit = rescale(cropped, (0.0, 1.0))
    filtered = filter_stack(unit, cfg.filter, report, threads)
    return rescale(filtered, (0.0, 255.0))


def segment_stage(filtered255: ImageStack, cropped: ImageStack, cfg: PipelineConfig,
                  threads: int = 1) -> np.ndarray:
    """Local Otsu on the filtered stack, then SUBSURF with edges taken from the
    cropped original (or the filtered stack, per ``subsurf.edge_source``)."""
    masks = binarize_stack(filtered255, cfg.otsu, threads)
    if cfg.subsurf.edge_source == "original":
        edges = rescale(cropped, (0.0, 1.0)).data
    else:
        edges = filtered255.data / 255.0
    return subsurf_evolve(masks, edges, cfg.subsurf, threads)


def centers_stage(masks, cfg: PipelineConfig) -> CenterData:
    c = cfg.centers
    return compute_centers(masks, h=c.h, min_area=c.min_area, tol=c.tol, per_slice=c.per_slice)


def track_stage(centers: CenterData, cfg: PipelineConfig,
                report: Optional[TrackReport] = None) -> List[Trajectory]:
    return track(params=cfg.track, centers=centers, report=report)


@dataclass
class PipelineResult:
    cropped: ImageStack
    filtered: ImageStack
    masks: np.ndarray
    centers: CenterData
    trajectories: List[Trajectory]
    filter_report: FilterReport = field(default_factory=FilterReport)
    track_report: TrackReport = field(default_factory=TrackReport)


def run_pipeline(raw: ImageStack, cfg: PipelineConfig, threads: int = 1) -> PipelineResult:
    cropped = crop_stage(raw, cfg)
    frep = FilterReport()
    filtered = filter_stage(cropped, cfg, threads, frep)
    log.info("filter: %d outer steps, converged=%s", frep.outer_iterations, frep.converged)
    masks = segment_stage(filtered, cropped, cfg, threads)
    centers = centers_stage(masks, cfg)
    trep = TrackReport()
    trajs = track_stage(centers, cfg, trep)
    log.info("tracking: %d partial -> %d -> %d", trep.n_partial, trep.n_after_pass1,
             trep.n_after_pass2)
    return PipelineResult(cropped, filtered, masks, centers, trajs, frep, trep)


def segment_only(raw: ImageStack, cfg: PipelineConfig, threads: int = 1) -> np.ndarray:
    """Crop, filter and segment; used by the parameter sweep."""
    cropped = crop_stage(raw, cfg)
    return segment_stage(filter_stage(cropped, cfg, threads), cropped, cfg, threads)


def match_trajectories(trajs: List[Trajectory], gold_centers, radius: float):
    """Gold id (or ``None``) of every real point, keyed by ``(traj_id, theta)``."""
    keys, pts = [], []
    for t in trajs:
        for p in t.points:
            if not p.estimated:
                keys.append((t.id, p.theta))
                pts.append((p.theta, p.x, p.y))
    return dict(zip(keys, match_points(pts, gold_centers, radius)))


def evaluate_tracking(trajs: List[Trajectory], gold_trajs: Dict[int, Dict[int, tuple]],
                      gold_links, radius: float = 10.0) -> Dict[str, float]:
    """Link accuracy, center error and trajectory distances against ground truth."""
    gold_centers: Dict[int, Dict[int, tuple]] = {}
    for gid, traj in gold_trajs.items():
        for theta, xy in traj.items():
            gold_centers.setdefault(theta, {})[gid] = xy
    ids = match_trajectories(trajs, gold_centers, radius)

    def ident(tid, theta):
        gid = ids[(tid, theta)]
        return gid if gid is not None else ("unmatched", tid, theta)

    pred = [(a, ident(t.id, a), b, ident(t.id, b))
            for t in trajs for a, _, b, _ in trajectory_links([t])]
    acc = link_accuracy(pred, gold_links)

    errors = []
    by_gold: Dict[int, Dict[int, Counter]] = {}
    for t in trajs:
        for p in t.points:
            gid = None if p.estimated else ids[(t.id, p.theta)]
            if gid is None:
                continue
            gx, gy = gold_centers[p.theta][gid]
            errors.append(math.hypot(p.x - gx, p.y - gy))
            by_gold.setdefault(gid, Counter())[t.id] += 1
    n_gold = sum(len(c) for c in gold_centers.values())

    dists = []
    tmap = {t.id: t for t in trajs}
    for gid, counts in sorted(by_gold.items()):
        best = min(counts, key=lambda tid: (-counts[tid], tid))
        auto = {p.theta: (p.x, p.y) for p in tmap[best].points if not p.estimated}
        if set(auto) & set(gold_trajs[gid]):
            dists.append(trajectory_distance(gold_trajs[gid], auto))
    out = {
        "mean_accuracy": acc,
        "center_error": float(np.mean(errors)) if errors else float("nan"),
        "matched_fraction": len(errors) / n_gold if n_gold else 1.0,
        "n_trajectories": float(len(trajs)),
        "n_gold": float(len(gold_trajs)),
    }
    if dists:
        arr = np.array(dists)
        out.update(d_h=float(arr[:, 0].mean()), d_avg=float(arr[:, 1].mean()),
                   l_manual=float(arr[:, 2].mean()), l_auto=float(arr[:, 3].mean()))
    return out
