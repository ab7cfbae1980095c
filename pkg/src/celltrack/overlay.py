"""Trajectory overlays on grayscale frames."""
from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from .stack_io import write_ppm
from .tracker import Trajectory

PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
    (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
], dtype=np.uint8)


def _segment(img, x0, y0, x1, y1, color):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.rint(np.linspace(x0, x1, n + 1)).astype(int)
    ys = np.rint(np.linspace(y0, y1, n + 1)).astype(int)
    ok = (xs >= 0) & (ys >= 0) & (xs < img.shape[1]) & (ys < img.shape[0])
    img[ys[ok], xs[ok]] = color


def render_overlay(frame255: np.ndarray, trajs: Sequence[Trajectory], theta: int) -> np.ndarray:
    """RGB frame with every trajectory's path up to ``theta`` and a small
    cross at its current point."""
    g = np.clip(np.rint(frame255), 0, 255).astype(np.uint8)
    img = np.repeat(g[..., None], 3, axis=2)
    for t in trajs:
        color = PALETTE[t.id % len(PALETTE)]
        pts = [p for p in t.points if p.theta <= theta]
        for p, q in zip(pts, pts[1:]):
            _segment(img, p.x, p.y, q.x, q.y, color)
        cur = t.at(theta)
        if cur is not None:
            _segment(img, cur.x - 3, cur.y, cur.x + 3, cur.y, color)
            _segment(img, cur.x, cur.y - 3, cur.x, cur.y + 3, color)
    return img


def write_overlays(directory: str, frames255: np.ndarray, trajs: Sequence[Trajectory],
                   pattern: str = "frame_%04d.ppm") -> None:
    os.makedirs(directory, exist_ok=True)
    for k in range(frames255.shape[0]):
        write_ppm(os.path.join(directory, pattern % k), render_overlay(frames255[k], trajs, k))
