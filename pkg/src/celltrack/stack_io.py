"""Loading, saving and preconditioning of 2D+time grayscale stacks.

Stacks are held as float64 arrays shaped ``(frames, height, width)``.  On disk a
stack is a directory of binary PGM (P5) files, one per frame, plus a small
``stack.txt`` sidecar with ``key=value`` metadata.
"""
from __future__ import annotations

import glob
import os
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

SIDECAR = "stack.txt"
DEFAULT_PATTERN = "frame_%04d.pgm"


class StackFormatError(ValueError):
    pass


@dataclass
class ImageStack:
    """A 2D+time scalar field ``u(i, j, theta)``.

    ``data`` has shape ``(frames, height, width)``; ``pixel_size`` is the finite
    volume side ``h``.  ``value_range`` optionally declares the intensity
    interval the data is supposed to live in, ``(0, 1)`` or ``(0, 255)``.
    """

    data: np.ndarray
    pixel_size: float = 1.0
    value_range: Optional[Tuple[float, float]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ValueError(f"stack must be 3D (frames, height, width), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("stack contains non-finite intensities")
        if self.value_range is not None:
            lo, hi = self.value_range
            if data.size and (data.min() < lo - 1e-9 or data.max() > hi + 1e-9):
                raise ValueError(f"data outside declared range {self.value_range}")
        self.data = data

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def with_data(self, data, value_range=None) -> "ImageStack":
        return replace(self, data=data, value_range=value_range, meta=dict(self.meta))


@dataclass(frozen=True)
class HistogramCropParams:
    p_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_noise <= 1.0:
            raise ValueError(f"p_noise must lie in [0, 1], got {self.p_noise}")


# --------------------------------------------------------------------------
# PGM
# --------------------------------------------------------------------------

def _read_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_pgm(path: str) -> Tuple[np.ndarray, int]:
    """Read a binary P5 PGM; returns ``(array, maxval)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise StackFormatError(f"{path}: not a binary PGM (magic {magic!r})")
    w, pos = _read_token(buf, pos)
    h, pos = _read_token(buf, pos)
    maxval, pos = _read_token(buf, pos)
    width, height, maxval = int(w), int(h), int(maxval)
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = width * height
    raster = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
    return raster.reshape(height, width).copy(), maxval


def write_pgm(path: str, frame: np.ndarray, maxval: int = 255) -> None:
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError("PGM frames must be 2D")
    values = np.rint(frame)
    if values.size and (values.min() < 0 or values.max() > maxval):
        raise ValueError(f"values outside [0, {maxval}] cannot be stored in PGM")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    header = f"P5\n{frame.shape[1]} {frame.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.astype(dtype).tobytes())


def write_ppm(path: str, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM frames must be (height, width, 3)")
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.clip(np.rint(rgb), 0, 255).astype(np.uint8).tobytes())


# --------------------------------------------------------------------------
# Stack files
# --------------------------------------------------------------------------

_INDEX_RE = re.compile(r"%0?(\d*)d")


def _pattern_regex(pattern: str) -> Tuple[str, re.Pattern]:
    m = _INDEX_RE.search(pattern)
    if m is None:
        raise ValueError(f"pattern {pattern!r} has no %d frame index placeholder")
    head, tail = pattern[:m.start()], pattern[m.end():]
    glob_pat = glob.escape(head) + "*" + glob.escape(tail)
    rx = re.compile(re.escape(os.path.basename(head)) + r"(\d+)" + re.escape(tail) + "$")
    return glob_pat, rx


def read_sidecar(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def write_sidecar(path: str, stack: ImageStack) -> None:
    with open(path, "w") as fh:
        fh.write(f"width={stack.width}\n")
        fh.write(f"height={stack.height}\n")
        fh.write(f"frames={stack.n_frames}\n")
        fh.write(f"pixel_size={stack.pixel_size!r}\n")


def load_stack(path_pattern: str, bit_depth: int = 8) -> ImageStack:
    """Load frames matching a printf-style pattern such as ``run/frame_%04d.pgm``.

    Frame indices must be consecutive.  A missing index raises
    :class:`StackFormatError` naming the first gap.
    """
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    glob_pat, rx = _pattern_regex(path_pattern)
    found = {}
    for p in glob.glob(glob_pat):
        m = rx.search(os.path.basename(p))
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise FileNotFoundError(f"no frames match {path_pattern!r}")
    indices = sorted(found)
    for expected, got in zip(range(indices[0], indices[-1] + 1), indices):
        if expected != got:
            raise StackFormatError(f"missing frame index {expected}")

    frames = []
    for idx in indices:
        arr, maxval = read_pgm(found[idx])
        if (maxval > 255) != (bit_depth == 16):
            raise StackFormatError(f"{found[idx]}: maxval {maxval} does not match bit depth {bit_depth}")
        if frames and arr.shape != frames[0].shape:
            raise StackFormatError(
                f"frame {idx} has shape {arr.shape}, expected {frames[0].shape}")
        frames.append(arr)

    pixel_size = 1.0
    sidecar = os.path.join(os.path.dirname(path_pattern) or ".", SIDECAR)
    if os.path.exists(sidecar):
        pixel_size = float(read_sidecar(sidecar).get("pixel_size", 1.0))
    return ImageStack(np.stack(frames).astype(np.float64), pixel_size=pixel_size)


def save_stack(stack: ImageStack, directory: str, bit_depth: int = 8,
               pattern: str = DEFAULT_PATTERN) -> str:
    """Write every frame as PGM plus the metadata sidecar; returns the path pattern."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    os.makedirs(directory, exist_ok=True)
    maxval = 255 if bit_depth == 8 else 65535
    for k in range(stack.n_frames):
        write_pgm(os.path.join(directory, pattern % k), stack.data[k], maxval)
    write_sidecar(os.path.join(directory, SIDECAR), stack)
    return os.path.join(directory, pattern)


def save_masks(masks: np.ndarray, directory: str, pattern: str = DEFAULT_PATTERN,
               pixel_size: float = 1.0) -> str:
    """Binary stacks go to disk with values {0, 255}."""
    masks = np.asarray(masks)
    stack = ImageStack(np.where(masks > 0, 255.0, 0.0), pixel_size=pixel_size)
    return save_stack(stack, directory, 8, pattern)


def load_masks(path_pattern: str) -> np.ndarray:
    return load_stack(path_pattern, 8).data > 127


# --------------------------------------------------------------------------
# Preconditioning
# --------------------------------------------------------------------------

def max_projection(volume_sequence) -> ImageStack:
    """Maximum intensity projection over z.

    ``volume_sequence`` is an array ``(frames, z, height, width)`` or a sequence
    of ``(z, height, width)`` volumes.
    """
    if isinstance(volume_sequence, np.ndarray):
        vols = volume_sequence
        if vols.ndim != 4:
            raise ValueError("expected (frames, z, height, width)")
        if vols.shape[1] == 0:
            raise ValueError("empty z-range")
        return ImageStack(vols.max(axis=1))
    frames = []
    for vol in volume_sequence:
        vol = np.asarray(vol)
        if vol.ndim == 2:
            vol = vol[None]
        if vol.shape[0] == 0:
            raise ValueError("empty z-range")
        if frames and vol.shape[1:] != frames[0].shape:
            raise ValueError("all z-planes must share dimensions")
        frames.append(vol.max(axis=0))
    if not frames:
        raise ValueError("empty volume sequence")
    return ImageStack(np.stack(frames))


def crop_threshold(frame: np.ndarray, p_noise: float) -> int:
    """Intensity ``I*`` where the descending cumulative count first reaches
    ``p_noise * N_tot``."""
    values = np.asarray(frame)
    if not np.all(values == np.rint(values)):
        raise ValueError("histogram crop needs integer-valued intensities")
    values = values.astype(np.int64)
    if values.size == 0:
        raise ValueError("empty frame")
    if not 0.0 <= p_noise <= 1.0:
        raise ValueError(f"p_noise {p_noise} would push the crop below the minimum intensity")
    lo = int(values.min())
    counts = np.bincount((values - lo).ravel())
    n_noise = values.size * p_noise
    n_des = np.cumsum(counts[::-1])
    # first crossing from the top; n_des[-1] == N_tot >= n_noise always
    k = int(np.argmax(n_des >= n_noise))
    return lo + len(counts) - 1 - k


def histogram_crop(stack: ImageStack, params: HistogramCropParams) -> ImageStack:
    """Remove the tiny top-of-histogram peak left by hot pixels, slice by slice.

    Intensities above the crossing intensity ``I*`` are clamped to ``I*``.
    """
    out = stack.data.copy()
    if params.p_noise == 0:
        return stack.with_data(out, stack.value_range)
    for k in range(stack.n_frames):
        i_star = crop_threshold(out[k], params.p_noise)
        np.minimum(out[k], i_star, out=out[k])
    return stack.with_data(out, stack.value_range)


def rescale(stack: ImageStack, target: Sequence[float] = (0.0, 1.0)) -> ImageStack:
    """Global affine min-max map of the whole stack onto ``target``.

    A constant stack maps to the interval minimum.  The ``(0, 255)`` target is
    rounded to integers.
    """
    lo_t, hi_t = float(target[0]), float(target[1])
    if (lo_t, hi_t) not in ((0.0, 1.0), (0.0, 255.0)):
        raise ValueError("target must be (0, 1) or (0, 255)")
    data = stack.data
    lo, hi = data.min(), data.max()
    if hi == lo:
        out = np.full_like(data, lo_t)
    else:
        out = lo_t + (data - lo) / (hi - lo) * (hi_t - lo_t)
    if hi_t == 255.0:
        out = np.rint(out)
    np.clip(out, lo_t, hi_t, out=out)
    return stack.with_data(out, (lo_t, hi_t))
