import numpy as np

from celltrack._parallel import map_slices
from celltrack.config import PipelineConfig
from celltrack.overlay import PALETTE, render_overlay
from celltrack.pipeline import (centers_stage, crop_stage, evaluate_tracking, filter_stage,
                                run_pipeline, segment_only, segment_stage, track_stage)
from celltrack.stack_io import rescale
from celltrack.synth import MoverSpec, generate
from celltrack.tracker import Point, Trajectory

FAST = {"filter.rho": "1", "filter.max_outer": "2", "filter.sor_omega": "1.2",
        "filter.sor_tol": "1e-2", "subsurf.max_steps": "5", "otsu.s": "20"}


def scene():
    specs = [MoverSpec(20, 20, 3.0, 1.0, radius=8),
             MoverSpec(45, 45, -2.0, 0.0, radius=7, level=0.8, gaps=frozenset({3}))]
    d = generate(specs, (6, 64, 64), noise=0.05, seed=3)
    return d, rescale(d.stack, (0.0, 255.0))


def test_run_pipeline_equals_stage_chain():
    d, raw = scene()
    cfg = PipelineConfig().with_values(FAST)
    res = run_pipeline(raw, cfg)
    cropped = crop_stage(raw, cfg)
    filtered = filter_stage(cropped, cfg)
    masks = segment_stage(filtered, cropped, cfg)
    trajs = track_stage(centers_stage(masks, cfg), cfg)
    np.testing.assert_array_equal(res.masks, masks)
    np.testing.assert_array_equal(segment_only(raw, cfg), masks)
    assert [t.points for t in res.trajectories] == [t.points for t in trajs]
    assert np.all(np.rint(filtered.data) == filtered.data)
    ev = evaluate_tracking(res.trajectories, d.trajectories, d.links)
    assert ev["mean_accuracy"] >= 0.9 and ev["center_error"] <= 2.0
    # both movers are followed over all six slices; short spurious tracks may remain
    assert sorted(len(t) for t in res.trajectories)[-2:] == [6, 6]


def test_evaluate_tracking_perfect_and_swapped():
    gold = {0: {t: (10.0 + t, 10.0) for t in range(4)}, 1: {t: (40.0 - t, 30.0) for t in range(4)}}
    links = [(t, g, t + 1, g) for g in (0, 1) for t in range(3)]
    perfect = [Trajectory(g, [Point(t, *gold[g][t]) for t in range(4)]) for g in (0, 1)]
    ev = evaluate_tracking(perfect, gold, links)
    assert ev["mean_accuracy"] == 1.0 and ev["center_error"] == 0.0
    assert ev["matched_fraction"] == 1.0 and ev["d_h"] == 0.0
    # swap identities half way
    swapped = [Trajectory(0, perfect[0].points[:2] + perfect[1].points[2:]),
               Trajectory(1, perfect[1].points[:2] + perfect[0].points[2:])]
    ev = evaluate_tracking(swapped, gold, links)
    assert ev["mean_accuracy"] == 2 / 3


def test_overlay_draws_paths():
    frame = np.full((20, 20), 100.0)
    t = Trajectory(0, [Point(0, 2.0, 2.0), Point(1, 10.0, 2.0)])
    img = render_overlay(frame, [t], 1)
    assert img.shape == (20, 20, 3)
    assert tuple(img[2, 6]) == tuple(PALETTE[0])
    assert tuple(img[15, 15]) == (100, 100, 100)
    assert tuple(render_overlay(frame, [t], 0)[2, 6]) == (100, 100, 100)


def test_map_slices_keeps_order():
    assert map_slices(lambda x: x * x, range(7), threads=3) == [x * x for x in range(7)]
    assert map_slices(str, [], threads=4) == []
