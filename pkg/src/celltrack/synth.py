"""Synthetic moving-disc stacks with exact ground truth.

Discs are rendered with a one-pixel anti-aliased rim; the gold masks use
center-in-circle rasterisation.  A mover can vanish for some slices (gaps) or
be split into two half-discs 3 px apart (fragments).  Noise is additive and
uniform, so intensity bounds are known exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .stack_io import ImageStack


@dataclass(frozen=True)
class MoverSpec:
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    radius: float = 10.0
    level: float = 1.0
    gaps: FrozenSet[int] = frozenset()
    fragments: FrozenSet[int] = frozenset()
    # optional per-slice velocities (theta -> theta+1); overrides vx, vy
    velocities: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        object.__setattr__(self, "gaps", frozenset(int(g) for g in self.gaps))
        object.__setattr__(self, "fragments", frozenset(int(f) for f in self.fragments))

    def position(self, theta: int) -> Tuple[float, float]:
        if self.velocities is None:
            return self.x + self.vx * theta, self.y + self.vy * theta
        steps = np.asarray(self.velocities[:theta], dtype=np.float64).reshape(-1, 2)
        if len(steps) < theta:
            raise ValueError("per-slice velocities do not cover every slice")
        return self.x + steps[:, 0].sum(), self.y + steps[:, 1].sum()


@dataclass
class SynthData:
    stack: ImageStack
    masks: np.ndarray                                   # (frames, M, N) bool
    trajectories: Dict[int, Dict[int, Tuple[float, float]]]   # id -> theta -> (x, y)
    links: List[Tuple[int, int, int, int]]              # (theta, id, theta_next, id)
    specs: List[MoverSpec] = field(default_factory=list)

    def centers_by_slice(self) -> Dict[int, Dict[int, Tuple[float, float]]]:
        out: Dict[int, Dict[int, Tuple[float, float]]] = {}
        for gid, traj in self.trajectories.items():
            for theta, xy in traj.items():
                out.setdefault(theta, {})[gid] = xy
        return out


def _disc(xx, yy, cx, cy, r):
    dist = np.hypot(xx - cx, yy - cy)
    return np.clip(r + 0.5 - dist, 0.0, 1.0), dist <= r


def _render(spec: MoverSpec, cx, cy, fragment, height, width):
    r = spec.radius
    pad = int(np.ceil(r)) + 4
    r0, r1 = max(0, int(cy) - pad), min(height, int(cy) + pad + 1)
    c0, c1 = max(0, int(cx) - pad), min(width, int(cx) + pad + 1)
    yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    if not fragment:
        cov, inside = _disc(xx, yy, cx, cy, r)
    else:
        # split at x = cx and push the halves 1.5 px apart each
        lc, lin = _disc(xx, yy, cx - 1.5, cy, r)
        rc, rin = _disc(xx, yy, cx + 1.5, cy, r)
        left = xx < cx - 1.5
        right = xx > cx + 1.5
        lcut = np.clip(cx - 1.5 - xx + 0.5, 0.0, 1.0)
        rcut = np.clip(xx - cx - 1.5 + 0.5, 0.0, 1.0)
        cov = np.maximum(lc * lcut, rc * rcut)
        inside = (lin & left) | (rin & right)
    return (slice(r0, r1), slice(c0, c1)), cov, inside


def generate(specs: Sequence[MoverSpec], shape: Tuple[int, int, int], noise: float = 0.0,
             seed: int = 0, background: float = 0.2, pixel_size: float = 1.0) -> SynthData:
    """Render ``specs`` into a ``(frames, height, width)`` stack.

    Returns the noisy stack, gold masks, gold centers per mover and the gold
    forward links between consecutive slices in which each mover is visible.
    A mover whose disc leaves the image on a visible slice is an error.
    """
    nf, height, width = shape
    if noise < 0:
        raise ValueError("noise amplitude must be >= 0")
    img = np.full(shape, float(background))
    masks = np.zeros(shape, dtype=bool)
    trajs: Dict[int, Dict[int, Tuple[float, float]]] = {}
    links = []
    for gid, spec in enumerate(specs):
        traj: Dict[int, Tuple[float, float]] = {}
        for theta in range(nf):
            if theta in spec.gaps:
                continue
            cx, cy = spec.position(theta)
            extra = 1.5 if theta in spec.fragments else 0.0
            if (cx - spec.radius - extra < 0 or cy - spec.radius < 0
                    or cx + spec.radius + extra > width - 1 or cy + spec.radius > height - 1):
                raise ValueError(f"mover {gid} leaves the domain at slice {theta}")
            win, cov, inside = _render(spec, cx, cy, theta in spec.fragments, height, width)
            frame = img[theta][win]
            np.maximum(frame, background + (spec.level - background) * cov, out=frame)
            masks[theta][win] |= inside
            traj[theta] = (float(cx), float(cy))
        seen = sorted(traj)
        links.extend((a, gid, b, gid) for a, b in zip(seen, seen[1:]))
        trajs[gid] = traj
    if noise > 0:
        rng = np.random.default_rng(seed)
        img += rng.uniform(-noise, noise, size=shape)
    links.sort()
    return SynthData(ImageStack(img, pixel_size=pixel_size), masks, trajs, links, list(specs))


def benchmark_movers() -> List[MoverSpec]:
    """Five movers for a 512 x 512 x 60 stack: three continuous, one hidden for
    one slice and one hidden for two consecutive slices."""
    return [
        MoverSpec(60, 60, 6.0, 0.5, radius=14, level=1.0),
        MoverSpec(70, 200, 5.0, 1.0, radius=14, level=0.9, gaps=frozenset({20})),
        MoverSpec(450, 300, -5.0, 2.0, radius=14, level=0.8, gaps=frozenset({35, 36})),
        MoverSpec(150, 480, 4.0, -1.0, radius=14, level=1.0),
        MoverSpec(380, 120, -1.0, 0.5, radius=14, level=0.7),
    ]


# --------------------------------------------------------------------------
# mover files: key=value blocks separated by blank lines
# --------------------------------------------------------------------------

def _int_set(text: str) -> FrozenSet[int]:
    return frozenset(int(v) for v in text.split(",") if v.strip())


def parse_movers(text: str) -> List[MoverSpec]:
    specs = []
    for block in text.strip().split("\n\n"):
        fields = {}
        for line in block.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"bad mover line {line!r}")
            fields[key.strip()] = value.strip()
        if not fields:
            continue
        kw = {}
        for key, value in fields.items():
            if key in ("x", "y", "vx", "vy", "radius", "level"):
                kw[key] = float(value)
            elif key in ("gaps", "fragments"):
                kw[key] = _int_set(value)
            else:
                raise ValueError(f"unknown mover key {key!r}")
        specs.append(MoverSpec(**kw))
    return specs


def format_movers(specs: Sequence[MoverSpec]) -> str:
    blocks = []
    for s in specs:
        lines = [f"x={s.x!r}", f"y={s.y!r}", f"vx={s.vx!r}", f"vy={s.vy!r}",
                 f"radius={s.radius!r}", f"level={s.level!r}",
                 "gaps=" + ",".join(str(g) for g in sorted(s.gaps)),
                 "fragments=" + ",".join(str(f) for f in sorted(s.fragments))]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
