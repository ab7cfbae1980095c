"""Command-line entry point: ``celltrack <subcommand> [options]``.

Every subcommand writes into a run directory (``--out``) together with the
resolved configuration and a manifest.  Failures print one line to stderr::

    celltrack: error code=2 key=filter.bogus message=unknown key

Exit codes: 0 ok, 1 runtime failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import platform
import sys
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .centers import write_centers_csv
from .config import ConfigError, PipelineConfig, load_config
from .metrics import boundary_extract, dice, iou, mean_hausdorff
from .overlay import write_overlays
from .pipeline import (centers_stage, crop_stage, evaluate_tracking, filter_stage,
                       run_pipeline, segment_stage, track_stage)
from .stack_io import (DEFAULT_PATTERN, ImageStack, load_masks, load_stack, rescale,
                       save_masks, save_stack)
from .stfilter import FilterReport
from .sweep import (BACKGROUND, OBJECT, SweepCase, grid_search, synthetic_cases,
                    write_frequency_csv, write_results_csv)
from .synth import benchmark_movers, format_movers, generate, parse_movers
from .tracker import TrackReport, read_trajectories_csv, write_trajectories_csv

log = logging.getLogger("celltrack")

SUBCOMMANDS = ("synth", "crop", "filter", "segment", "centers", "track", "eval", "sweep",
               "pipeline")


class UsageError(Exception):
    pass


def _pattern(directory: str) -> str:
    return os.path.join(directory, DEFAULT_PATTERN)


def _need(value: str, what: str) -> str:
    if not value:
        raise UsageError(f"missing {what}")
    return value


def _write_text(path: str, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def write_manifest(out: str, command: str, cfg: PipelineConfig, inputs: Dict[str, str],
                   threads: int) -> None:
    import numba
    import scipy
    _write_text(os.path.join(out, "config.txt"), cfg.to_text())
    lines = [f"command={command}", f"config_sha256={cfg.digest()}", f"threads={threads}",
             f"celltrack={__version__}", f"python={platform.python_version()}",
             f"numpy={np.__version__}", f"scipy={scipy.__version__}",
             f"numba={numba.__version__}"]
    lines += [f"input.{k}={v}" for k, v in sorted(inputs.items()) if v]
    _write_text(os.path.join(out, "manifest.txt"), "\n".join(lines) + "\n")


def _load_raw(cfg: PipelineConfig, pattern: str) -> ImageStack:
    stack = load_stack(pattern, cfg.io.bit_depth)
    if cfg.io.pixel_size != 1.0:
        stack.pixel_size = cfg.io.pixel_size
    return stack


def _track_outputs(out: str, result_trajs, report: TrackReport, centers, frames255,
                   cfg: PipelineConfig) -> None:
    write_centers_csv(os.path.join(out, "centers.csv"), centers.regions)
    write_trajectories_csv(os.path.join(out, "trajectories.csv"), result_trajs)
    _write_text(os.path.join(out, "track_report.txt"), report.to_text())
    if cfg.output.overlay and frames255 is not None:
        write_overlays(os.path.join(out, "overlay"), frames255, result_trajs)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> Dict[str, str]:
    s = cfg.synth
    if s.movers:
        with open(s.movers) as fh:
            specs = parse_movers(fh.read())
    else:
        specs = benchmark_movers()
    data = generate(specs, (s.frames, s.height, s.width), s.noise, s.seed, s.background,
                    cfg.io.pixel_size)
    out = args.out
    save_stack(rescale(data.stack, (0.0, 255.0)), os.path.join(out, "frames"), 8)
    save_masks(data.masks, os.path.join(out, "gold_masks"), pixel_size=cfg.io.pixel_size)
    with open(os.path.join(out, "gold_trajectories.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "theta", "x", "y", "estimated"])
        for gid, traj in sorted(data.trajectories.items()):
            for theta, (x, y) in sorted(traj.items()):
                w.writerow([gid, theta, repr(x), repr(y), 0])
    with open(os.path.join(out, "gold_links.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "source", "theta_next", "target"])
        w.writerows(data.links)
    _write_text(os.path.join(out, "movers.txt"), format_movers(specs))
    return {"movers": s.movers}


def cmd_crop(args, cfg):
    src = _need(args.input or cfg.io.input, "--input frame pattern")
    save_stack(crop_stage(_load_raw(cfg, src), cfg), os.path.join(args.out, "cropped"),
               cfg.io.bit_depth)
    return {"frames": src}


def cmd_filter(args, cfg):
    src = _need(args.input or cfg.io.input, "--input frame pattern (cropped stack)")
    report = FilterReport()
    filtered = filter_stage(_load_raw(cfg, src), cfg, args.threads, report)
    save_stack(filtered, os.path.join(args.out, "filtered"), 8)
    _write_text(os.path.join(args.out, "filter_report.txt"), report.to_text())
    return {"frames": src}


def cmd_segment(args, cfg):
    src = _need(args.input or cfg.io.input, "--input frame pattern (filtered stack)")
    orig = _need(args.original or cfg.io.original, "--original frame pattern (cropped stack)")
    filtered = load_stack(src, 8)
    masks = segment_stage(filtered, _load_raw(cfg, orig), cfg, args.threads)
    save_masks(masks, os.path.join(args.out, "masks"), pixel_size=filtered.pixel_size)
    return {"frames": src, "original": orig}


def cmd_centers(args, cfg):
    src = _need(args.input or cfg.io.masks, "--input mask pattern")
    centers = centers_stage(load_masks(src), cfg)
    write_centers_csv(os.path.join(args.out, "centers.csv"), centers.regions)
    return {"masks": src}


def cmd_track(args, cfg):
    src = _need(args.input or cfg.io.masks, "--input mask pattern")
    centers = centers_stage(load_masks(src), cfg)
    report = TrackReport()
    trajs = track_stage(centers, cfg, report)
    frames = None
    orig = args.original or cfg.io.original
    if orig:
        frames = rescale(_load_raw(cfg, orig), (0.0, 255.0)).data
    _track_outputs(args.out, trajs, report, centers, frames, cfg)
    return {"masks": src, "original": orig}


def _read_gold(gold_dir: str):
    trajs: Dict[int, Dict[int, tuple]] = {}
    with open(os.path.join(gold_dir, "gold_trajectories.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            trajs.setdefault(int(row["traj_id"]), {})[int(row["theta"])] = (
                float(row["x"]), float(row["y"]))
    links = []
    with open(os.path.join(gold_dir, "gold_links.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            links.append((int(row["theta"]), int(row["source"]), int(row["theta_next"]),
                          int(row["target"])))
    return trajs, links


def cmd_eval(args, cfg):
    gold_dir = _need(args.gold or cfg.io.gold, "--gold synth directory")
    traj_path = _need(args.input or cfg.io.trajectories, "--input trajectory CSV")
    gold_trajs, gold_links = _read_gold(gold_dir)
    result = evaluate_tracking(read_trajectories_csv(traj_path), gold_trajs, gold_links,
                               cfg.eval.match_radius)
    masks_src = args.masks or cfg.io.masks
    if masks_src:
        masks = load_masks(masks_src)
        gold_masks = load_masks(_pattern(os.path.join(gold_dir, "gold_masks")))
        rows = []
        for k, (g, m) in enumerate(zip(gold_masks, masks)):
            dh = (mean_hausdorff(boundary_extract(g), boundary_extract(m))
                  if g.any() and m.any() else float("nan"))
            rows.append((k, iou(g, m), dice(g, m), dh))
        with open(os.path.join(args.out, "eval_frames.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "iou", "dice", "d_h"])
            w.writerows(rows)
        arr = np.array([r[1:] for r in rows])
        result.update(iou=float(arr[:, 0].mean()), dice=float(arr[:, 1].mean()),
                      seg_d_h=float(np.nanmean(arr[:, 2])) if np.isfinite(arr[:, 2]).any()
                      else float("nan"))
    _write_text(os.path.join(args.out, "eval_report.txt"),
                "".join(f"{k}={v}\n" for k, v in result.items()))
    return {"gold": gold_dir, "trajectories": traj_path, "masks": masks_src}


def _load_cases(directory: str) -> List[SweepCase]:
    cases = []
    for name in sorted(os.listdir(directory)):
        path = os.path.join(directory, name)
        if not os.path.isdir(path):
            continue
        with open(os.path.join(path, "kind")) as fh:
            kind = fh.read().strip()
        if kind not in (OBJECT, BACKGROUND):
            raise UsageError(f"case {name}: kind must be {OBJECT} or {BACKGROUND}")
        stack = load_stack(_pattern(os.path.join(path, "frames")), 8)
        gold = load_masks(_pattern(os.path.join(path, "gold")))
        cases.append(SweepCase(name, stack, gold, kind))
    if not cases:
        raise UsageError(f"no sweep cases under {directory}")
    return cases


def cmd_sweep(args, cfg):
    sw = cfg.sweep
    cases = _load_cases(sw.cases_dir) if sw.cases_dir else synthetic_cases(seed=sw.seed)
    grid = {k: list(v) for k, v in cfg.grid}
    if not grid:
        grid = {"filter.tau_f": [str(cfg.filter.tau_f)]}
    result = grid_search(grid, cases, cfg, sw.top_n, sw.threshold, sw.run_length,
                         args.threads, checkpoint=os.path.join(args.out, "sweep_checkpoint.csv"))
    write_results_csv(os.path.join(args.out, "sweep_results.csv"), result)
    write_frequency_csv(os.path.join(args.out, "sweep_frequencies.csv"), result)
    _write_text(os.path.join(args.out, "sweep_modes.txt"),
                "".join(f"{k}={v}\n" for k, v in result.modes.items()))
    return {"cases": sw.cases_dir}


def cmd_pipeline(args, cfg):
    src = _need(args.input or cfg.io.input, "--input frame pattern")
    out = args.out
    res = run_pipeline(_load_raw(cfg, src), cfg, args.threads)
    save_stack(res.cropped, os.path.join(out, "cropped"), cfg.io.bit_depth)
    save_stack(res.filtered, os.path.join(out, "filtered"), 8)
    _write_text(os.path.join(out, "filter_report.txt"), res.filter_report.to_text())
    save_masks(res.masks, os.path.join(out, "masks"), pixel_size=res.cropped.pixel_size)
    frames = rescale(res.cropped, (0.0, 255.0)).data
    _track_outputs(out, res.trajectories, res.track_report, res.centers, frames, cfg)
    return {"frames": src}


COMMANDS = {
    "synth": cmd_synth, "crop": cmd_crop, "filter": cmd_filter, "segment": cmd_segment,
    "centers": cmd_centers, "track": cmd_track, "eval": cmd_eval, "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="celltrack", description=__doc__.split("\n")[0])
    p.add_argument("--print-config", action="store_true",
                   help="print the fully resolved configuration and exit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration entry (repeatable)")
    common.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    common.add_argument("--out", default="run", help="run directory")
    common.add_argument("--print-config", action="store_true", dest="print_config_sub",
                        help="print the fully resolved configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name not in ("synth", "sweep"):
            sp.add_argument("--input", help="input frame pattern, mask pattern or CSV")
        if name in ("segment", "track"):
            sp.add_argument("--original", help="cropped original frame pattern")
        if name == "eval":
            sp.add_argument("--gold", help="synth output directory with ground truth")
            sp.add_argument("--masks", help="segmented mask pattern for mask metrics")
    return p


def _fail(code: int, message: str, key: Optional[str] = None, kind: Optional[str] = None) -> int:
    parts = [f"code={code}"]
    if key:
        parts.append(f"key={key}")
    if kind:
        parts.append(f"type={kind}")
    flat = " ".join(str(message).split())
    print(f"celltrack: error {' '.join(parts)} message={flat}", file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None), getattr(args, "set", None))
    except ConfigError as exc:
        return _fail(2, str(exc).split(": ", 1)[-1], key=exc.key)
    except OSError as exc:
        return _fail(2, exc, key="--config")
    if args.print_config or getattr(args, "print_config_sub", False):
        sys.stdout.write(cfg.to_text())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return _fail(2, "no subcommand given", key="command")
    if args.threads < 1:
        return _fail(2, "--threads must be >= 1", key="--threads")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        os.makedirs(args.out, exist_ok=True)
        inputs = COMMANDS[args.command](args, cfg)
        write_manifest(args.out, args.command, cfg, inputs, args.threads)
    except UsageError as exc:
        return _fail(2, exc, key="arguments")
    except Exception as exc:   # noqa: BLE001 - reported as a single error line
        log.debug("failure", exc_info=True)
        return _fail(1, exc, kind=type(exc).__name__)
    return 0


if __name__ == "__main__":
    sys.exit(main())
