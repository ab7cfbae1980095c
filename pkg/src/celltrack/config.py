"""Flat ``section.key=value`` configuration for the whole pipeline."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .local_otsu import OtsuParams
from .stack_io import HistogramCropParams
from .stfilter import FilterParams
from .subsurf import SubsurfParams
from .tracker import LinkParams


class ConfigError(ValueError):
    """Bad configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class IOParams:
    input: str = ""                 # printf-style frame pattern, e.g. data/frame_%04d.pgm
    bit_depth: int = 8
    pixel_size: float = 1.0
    original: str = ""              # cropped original frames for the segment stage
    masks: str = ""                 # binary mask frames
    gold: str = ""                  # synth output directory used by eval
    trajectories: str = ""          # trajectory CSV used by eval


@dataclass(frozen=True)
class CenterParams:
    h: float = 1.0
    min_area: int = 1
    tol: float = 1e-3
    per_slice: bool = False


@dataclass(frozen=True)
class SynthParams:
    frames: int = 60
    height: int = 512
    width: int = 512
    noise: float = 0.1
    background: float = 0.2
    seed: int = 0
    movers: str = ""                # mover definition file; empty -> built-in five-mover scene


@dataclass(frozen=True)
class EvalParams:
    match_radius: float = 10.0


@dataclass(frozen=True)
class SweepParams:
    top_n: int = 20000
    threshold: float = 0.15
    run_length: int = 3
    cases_dir: str = ""             # empty -> built-in synthetic cases
    seed: int = 0


@dataclass(frozen=True)
class OutputParams:
    overlay: bool = False


SECTIONS = {
    "io": IOParams,
    "crop": HistogramCropParams,
    "filter": FilterParams,
    "otsu": OtsuParams,
    "subsurf": SubsurfParams,
    "centers": CenterParams,
    "track": LinkParams,
    "synth": SynthParams,
    "eval": EvalParams,
    "sweep": SweepParams,
    "output": OutputParams,
}


@dataclass(frozen=True)
class PipelineConfig:
    io: IOParams = IOParams()
    crop: HistogramCropParams = HistogramCropParams()
    filter: FilterParams = FilterParams()
    otsu: OtsuParams = OtsuParams()
    subsurf: SubsurfParams = SubsurfParams()
    centers: CenterParams = CenterParams()
    track: LinkParams = LinkParams()
    synth: SynthParams = SynthParams()
    eval: EvalParams = EvalParams()
    sweep: SweepParams = SweepParams()
    output: OutputParams = OutputParams()
    # sweep grid: full key -> candidate values
    grid: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()

    def items(self) -> List[Tuple[str, object]]:
        out = []
        for name in SECTIONS:
            for f in dataclasses.fields(getattr(self, name)):
                out.append((f"{name}.{f.name}", getattr(getattr(self, name), f.name)))
        return out

    def to_text(self) -> str:
        lines = [f"{k}={_format(v)}" for k, v in self.items()]
        lines += [f"grid.{k}={','.join(vals)}" for k, vals in self.grid]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def with_values(self, values: Dict[str, str]) -> "PipelineConfig":
        """Copy with ``{"section.key": text}`` overrides applied."""
        return _build(values, self)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(key: str, ftype: str, default, text: str):
    text = text.strip()
    try:
        if "Optional" in ftype and text.lower() in ("none", ""):
            return None
        if ftype == "bool" or isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if "int" in ftype:
            return int(text)
        if "float" in ftype:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _build(values: Dict[str, str], base: PipelineConfig) -> PipelineConfig:
    per_section: Dict[str, Dict[str, object]] = {}
    grid = dict(base.grid)
    for key, text in values.items():
        if key.startswith("grid."):
            target = key[len("grid."):]
            section, _, name = target.partition(".")
            cls = SECTIONS.get(section)
            if cls is None or name not in {f.name for f in dataclasses.fields(cls)}:
                raise ConfigError(key, "unknown grid parameter")
            vals = tuple(v.strip() for v in text.split(",") if v.strip())
            if not vals:
                raise ConfigError(key, "empty value list")
            ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
            default = getattr(cls(), name)
            for v in vals:
                _coerce(key, str(ftype), default, v)
            grid[target] = vals
            continue
        section, _, name = key.partition(".")
        cls = SECTIONS.get(section)
        if cls is None:
            raise ConfigError(key, "unknown section")
        ftypes = {f.name: str(f.type) for f in dataclasses.fields(cls)}
        if name not in ftypes:
            raise ConfigError(key, "unknown key")
        default = getattr(getattr(base, section), name)
        per_section.setdefault(section, {})[name] = _coerce(key, ftypes[name], default, text)
    kwargs = {}
    for section in SECTIONS:
        current = getattr(base, section)
        updates = per_section.get(section)
        if not updates:
            kwargs[section] = current
            continue
        try:
            kwargs[section] = dataclasses.replace(current, **updates)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{section}.{sorted(updates)[0]}", str(exc)) from None
    return PipelineConfig(grid=tuple(sorted(grid.items())), **kwargs)


def parse_config(text: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Parse ``section.key=value`` lines (``#`` starts a comment)."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
        values[key.strip()] = value
    return _build(values, base or PipelineConfig())


def load_config(path: Optional[str], overrides: Optional[List[str]] = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path:
        with open(path) as fh:
            cfg = parse_config(fh.read(), cfg)
    if overrides:
        cfg = parse_config("\n".join(overrides), cfg)
    return cfg
