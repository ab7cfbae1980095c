"""Grid search over segmentation parameters scored by IoU against gold masks.

Each parameter combination segments every case; object cases score the time
average of IoU, background cases (empty gold) the time average of one minus
the segmented fraction of the image.  Combos with a long enough run of poor
slices are excluded, the rest are ranked by the mean case score, and the most
frequent value of every parameter among the best ``top_n`` combos is reported.
"""
from __future__ import annotations

import csv
import itertools
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._parallel import map_slices
from .config import PipelineConfig
from .metrics import iou
from .stack_io import ImageStack, rescale
from .synth import MoverSpec, generate

OBJECT, BACKGROUND = "object", "background"


@dataclass
class SweepCase:
    name: str
    stack: ImageStack          # raw intensities as fed to the crop stage
    gold: np.ndarray           # (frames, M, N) bool
    kind: str = OBJECT

    def __post_init__(self):
        if self.kind not in (OBJECT, BACKGROUND):
            raise ValueError(f"case kind must be {OBJECT!r} or {BACKGROUND!r}")
        if self.kind == BACKGROUND and np.any(self.gold):
            raise ValueError("background cases need all-empty gold masks")


def slice_scores(gold, segmented, kind: str) -> np.ndarray:
    """Per-slice score: IoU for objects, ``1 - |segmented| / |image|`` for
    background."""
    gold = np.asarray(gold).astype(bool)
    seg = np.asarray(segmented).astype(bool)
    if gold.shape != seg.shape:
        raise ValueError(f"shape mismatch {gold.shape} vs {seg.shape}")
    if kind == BACKGROUND:
        area = seg[0].size
        return np.array([1.0 - np.count_nonzero(s) / area for s in seg])
    return np.array([iou(g, s) for g, s in zip(gold, seg)])


def score_case(gold, segmented, kind: str = OBJECT) -> float:
    return float(np.mean(slice_scores(gold, segmented, kind)))


def mean_accuracy_combo(scores: Sequence[float]) -> float:
    """Arithmetic mean of the case scores (four cases in the usual setup)."""
    if len(scores) == 0:
        raise ValueError("no case scores")
    return float(np.mean(scores))


def exclusion_rule(series, threshold: float = 0.15, run_length: int = 3) -> bool:
    """True when ``series < threshold`` on ``run_length`` or more consecutive slices."""
    run = 0
    for v in series:
        run = run + 1 if v < threshold else 0
        if run >= run_length:
            return True
    return False


@dataclass
class ComboResult:
    index: int
    values: Dict[str, str]
    scores: List[float]
    mean: float
    excluded: bool


@dataclass
class SweepResult:
    keys: List[str]
    results: List[ComboResult]                     # every combo, index order
    ranking: List[ComboResult]                     # kept combos, best first
    frequencies: Dict[str, Dict[str, int]] = field(default_factory=dict)
    modes: Dict[str, str] = field(default_factory=dict)


def grid_combos(grid: Dict[str, Sequence[str]]) -> Tuple[List[str], List[Dict[str, str]]]:
    """All combinations in lexicographic order of the value lists."""
    keys = list(grid)
    for k in keys:
        if not grid[k]:
            raise ValueError(f"grid list for {k} is empty")
    combos = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    return keys, combos


def evaluate_combo(cfg: PipelineConfig, cases: Sequence[SweepCase], threshold: float,
                   run_length: int, segment: Callable) -> Tuple[List[float], float, bool]:
    scores, excluded = [], False
    for case in cases:
        seg = segment(case.stack, cfg)
        series = slice_scores(case.gold, seg, case.kind)
        scores.append(float(series.mean()))
        excluded |= exclusion_rule(series, threshold, run_length)
    return scores, mean_accuracy_combo(scores), excluded


def _read_checkpoint(path: str, keys: List[str], n_cases: int) -> Dict[int, ComboResult]:
    done: Dict[int, ComboResult] = {}
    if not path or not os.path.exists(path):
        return done
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            idx = int(row["combo"])
            scores = [float(row[f"S{k + 1}"]) for k in range(n_cases)]
            done[idx] = ComboResult(idx, {k: row[k] for k in keys}, scores, float(row["M"]),
                                    row["excluded"] == "1")
    return done


def _row(r: ComboResult, keys: List[str]) -> list:
    return ([r.index] + [r.values[k] for k in keys] + [repr(s) for s in r.scores]
            + [repr(r.mean), int(r.excluded)])


def _header(keys: List[str], n_cases: int) -> list:
    return ["combo"] + keys + [f"S{k + 1}" for k in range(n_cases)] + ["M", "excluded"]


def grid_search(grid: Dict[str, Sequence[str]], cases: Sequence[SweepCase],
                base: PipelineConfig = PipelineConfig(), top_n: int = 20000,
                threshold: float = 0.15, run_length: int = 3, threads: int = 1,
                checkpoint: Optional[str] = None, segment: Optional[Callable] = None) -> SweepResult:
    """Evaluate every combo of ``grid`` (``{"filter.k": ["10", "100"], ...}``).

    ``segment(stack, cfg) -> masks`` defaults to the crop/filter/segment chain.
    With ``checkpoint`` every finished combo is appended to that CSV, and
    combos already present there are not recomputed.
    """
    if segment is None:
        from .pipeline import segment_only
        segment = segment_only
    keys, combos = grid_combos(grid)
    done = _read_checkpoint(checkpoint, keys, len(cases)) if checkpoint else {}
    todo = [i for i in range(len(combos)) if i not in done]

    fh = writer = None
    if checkpoint:
        fresh = not os.path.exists(checkpoint) or os.path.getsize(checkpoint) == 0
        fh = open(checkpoint, "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(_header(keys, len(cases)))
            fh.flush()

    def run(i):
        cfg = base.with_values(combos[i])
        scores, mean, excluded = evaluate_combo(cfg, cases, threshold, run_length, segment)
        res = ComboResult(i, combos[i], scores, mean, excluded)
        if writer is not None:
            # rows land in completion order; the checkpoint is keyed by combo index
            writer.writerow(_row(res, keys))
            fh.flush()
        return res

    try:
        for res in map_slices(run, todo, threads):
            done[res.index] = res
    finally:
        if fh is not None:
            fh.close()

    results = [done[i] for i in range(len(combos))]
    ranking = sorted((r for r in results if not r.excluded), key=lambda r: (-r.mean, r.index))
    top = ranking[:top_n]
    freqs: Dict[str, Dict[str, int]] = {}
    modes: Dict[str, str] = {}
    for k in keys:
        counts = Counter(r.values[k] for r in top)
        freqs[k] = {v: counts.get(v, 0) for v in grid[k]}
        if top:
            modes[k] = max(grid[k], key=lambda v: (freqs[k][v], -list(grid[k]).index(v)))
    return SweepResult(keys, results, ranking, freqs, modes)


def write_results_csv(path: str, result: SweepResult) -> None:
    n_cases = len(result.results[0].scores) if result.results else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(result.keys, n_cases))
        for r in result.results:
            w.writerow(_row(r, result.keys))


def write_frequency_csv(path: str, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "value", "count", "mode"])
        for k in result.keys:
            for v, n in result.frequencies[k].items():
                w.writerow([k, v, n, int(result.modes.get(k) == v)])


def synthetic_cases(frames: int = 8, size: int = 96, noise: float = 0.08,
                    seed: int = 0) -> List[SweepCase]:
    """Four small cases: a bright round mover, a two-lobed mover, a faint mover
    and a background-only stack."""
    shape = (frames, size, size)
    c = size / 2
    specs = [
        [MoverSpec(c - 12, c, 2.0, 0.5, radius=size / 8, level=1.0)],
        [MoverSpec(c - 14, c, 1.5, 0.0, radius=size / 10, level=0.9),
         MoverSpec(c - 4, c + 6, 1.5, 0.0, radius=size / 10, level=0.9)],
        [MoverSpec(c, c - 10, 0.0, 2.0, radius=size / 9, level=0.5)],
        [],
    ]
    names = ["round", "lobed", "faint", "background"]
    cases = []
    for k, (name, sp) in enumerate(zip(names, specs)):
        d = generate(sp, shape, noise=noise, seed=seed + k, background=0.2)
        kind = BACKGROUND if not sp else OBJECT
        cases.append(SweepCase(name, rescale(d.stack, (0.0, 255.0)), d.masks, kind))
    return cases
