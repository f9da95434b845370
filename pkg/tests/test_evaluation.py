import json
import math
from dataclasses import asdict

import numpy as np
import pytest
from scipy.ndimage import binary_dilation

from maskmatch import evaluation, training
from maskmatch.errors import EmptyMaskError, ParameterError
from maskmatch.evaluation import contour_accuracy, evaluate, iou, location_error, match
from maskmatch.packio import MaskBitmap, read_manifest, read_pack_file
from maskmatch.synthetic import DatasetConfig, generate_dataset

TINY = DatasetConfig(objects=3, dim=8, source_grid=(12, 12), dest_grid=(12, 12), distractor_parts=1)


def _mask(grid):
    return MaskBitmap.from_grid(np.asarray(grid, dtype=bool))


def _rect(h, w, y0, y1, x0, x1):
    g = np.zeros((h, w), dtype=bool)
    g[y0:y1, x0:x1] = True
    return _mask(g)


# --- iou ------------------------------------------------------------------------


def test_iou_identical():
    a = _rect(8, 8, 2, 5, 2, 5)
    assert iou(a, a) == 1.0


def test_iou_disjoint():
    assert iou(_rect(8, 8, 0, 2, 0, 2), _rect(8, 8, 4, 6, 4, 6)) == 0.0


def test_iou_half_overlap_is_one_third():
    # equal-area rectangles overlapping exactly half of each
    a = _rect(8, 8, 0, 4, 0, 2)
    b = _rect(8, 8, 2, 6, 0, 2)
    assert iou(a, b) == pytest.approx(1 / 3)


def test_iou_both_empty_is_one():
    e = _rect(4, 4, 0, 0, 0, 0)
    assert iou(e, e) == 1.0


def test_iou_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = _mask(rng.random((6, 7)) < 0.5)
        b = _mask(rng.random((6, 7)) < 0.5)
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0


def test_iou_grid_mismatch():
    with pytest.raises(ParameterError):
        iou(_rect(4, 4, 0, 1, 0, 1), _rect(4, 5, 0, 1, 0, 1))


# --- location error ----------------------------------------------------------------


def test_location_error_identical_masks():
    m = _rect(10, 10, 3, 6, 3, 6)
    assert location_error(m, m) == 0.0


def test_location_error_opposite_corners():
    h = w = 9
    a = _rect(h, w, 0, 1, 0, 1)
    b = _rect(h, w, h - 1, h, w - 1, w)
    assert location_error(a, b) == pytest.approx(1.0)


def test_location_error_matches_centroid_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        ga = rng.random((9, 11)) < 0.4
        gb = rng.random((9, 11)) < 0.4
        if not ga.any() or not gb.any():
            continue
        ya, xa = np.nonzero(ga)
        yb, xb = np.nonzero(gb)
        expected = math.hypot(xa.mean() - xb.mean(), ya.mean() - yb.mean()) / math.hypot(10, 8)
        assert abs(location_error(_mask(ga), _mask(gb)) - expected) < 1e-12


def test_location_error_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        location_error(_rect(4, 4, 0, 0, 0, 0), _rect(4, 4, 1, 2, 1, 2))


# --- contour accuracy -----------------------------------------------------------------


def test_contour_identical():
    m = _rect(12, 12, 3, 8, 2, 9)
    assert contour_accuracy(m, m) == 1.0


def test_contour_far_apart_tight_tolerance():
    a = _rect(32, 32, 1, 4, 1, 4)
    b = _rect(32, 32, 25, 30, 25, 30)
    assert contour_accuracy(a, b, tol_frac=0.0075) == 0.0


def test_contour_one_pixel_dilation_within_tolerance():
    g = np.zeros((10, 10), dtype=bool)
    g[3:7, 3:7] = True
    dilated = binary_dilation(g)  # cross-shaped structuring element
    tol_frac = 1.0 / math.hypot(9, 9) + 1e-9  # tolerance of exactly one pixel
    assert contour_accuracy(_mask(dilated), _mask(g), tol_frac=tol_frac) == 1.0


def test_contour_both_empty():
    e = _rect(6, 6, 0, 0, 0, 0)
    assert contour_accuracy(e, e) == 1.0


def test_contour_monotone_in_tolerance():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = _mask(rng.random((16, 16)) < 0.4)
        b = _mask(rng.random((16, 16)) < 0.4)
        values = [contour_accuracy(a, b, t) for t in (0.3, 0.05, 0.0075)]
        assert values[0] >= values[1] >= values[2]


# --- match ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    manifest, _ = generate_dataset(root / "train", 30, TINY, seed=21, split=0)
    eval_manifest, _ = generate_dataset(root / "eval", 12, TINY, seed=21, split=1)
    cfg = training.TrainConfig(steps=60, batch=4, seed=0)
    res = training.train(manifest, cfg, root / "run")
    return eval_manifest, res.checkpoint_path


def test_match_result_structure(tiny_run):
    eval_manifest, ckpt = tiny_run
    pack = read_pack_file(read_manifest(eval_manifest)[0])
    res = match(pack, ckpt, vis_threshold=-1.0)  # always visible
    assert res.visible_pred
    assert res.chosen_index == res.ranked[0][0]
    sims = [s for _, s in res.ranked]
    assert sims == sorted(sims, reverse=True)
    indices = sorted(i for i, _ in res.ranked)
    assert indices == list(range(len(pack.candidates)))


def test_match_threshold_rule(tiny_run):
    eval_manifest, ckpt = tiny_run
    pack = read_pack_file(read_manifest(eval_manifest)[0])
    res = match(pack, ckpt, vis_threshold=2.0)  # impossible threshold
    assert not res.visible_pred
    assert res.chosen_index is None
    assert res.similarity is not None


def test_match_tie_breaks_toward_lower_index(tiny_run):
    eval_manifest, ckpt = tiny_run
    pack = read_pack_file(read_manifest(eval_manifest)[0])
    # duplicate the first candidate at the end: identical descriptors, tie
    pack.candidates.append(pack.candidates[0])
    res = match(pack, ckpt, vis_threshold=-1.0)
    dup = len(pack.candidates) - 1
    sims = dict((i, s) for i, s in res.ranked)
    assert sims[0] == sims[dup]
    first = [i for i, _ in res.ranked if i in (0, dup)][0]
    assert first == 0


def test_match_zero_usable_candidates(tiny_run):
    _, ckpt = tiny_run
    manifest, _ = tiny_run
    pack = read_pack_file(read_manifest(manifest)[0])
    empty = MaskBitmap.from_grid(np.zeros((48, 48), dtype=bool))
    pack.candidates = [empty]
    pack.gt_index = None
    pack.gt_mask = None
    res = match(pack, ckpt)
    assert not res.visible_pred and res.chosen_index is None and res.ranked == []


def test_match_invariant_to_positive_latent_rescaling(tiny_run):
    eval_manifest, ckpt = tiny_run
    ck = training.load_checkpoint(ckpt)
    scaled = training.load_checkpoint(ckpt)
    scaled.params.mlp.w2.data *= 3.7
    scaled.params.mlp.b2.data *= 3.7
    for path in read_manifest(eval_manifest)[:4]:
        pack = read_pack_file(path)
        a = match(pack, ck, vis_threshold=-1.0)
        b = match(pack, scaled, vis_threshold=-1.0)
        assert [i for i, _ in a.ranked] == [i for i, _ in b.ranked]


# --- evaluate ---------------------------------------------------------------------


def _oracle_ranker(sim_good=0.9, sim_bad=0.1):
    def ranker(pack, model, margin):
        order = []
        for i in range(len(pack.candidates)):
            sim = sim_good if i == pack.gt_index else sim_bad
            order.append((i, sim))
        return sorted(order, key=lambda t: (-t[1], t[0]))

    return ranker


def test_evaluate_perfect_predictor(tiny_run, monkeypatch):
    eval_manifest, ckpt = tiny_run
    monkeypatch.setattr(evaluation, "rank_candidates", _oracle_ranker())
    report = evaluate(eval_manifest, ckpt, vis_threshold=0.5)
    assert report.aggregates["iou"] == 1.0
    assert report.aggregates["vis_a"] == 1.0
    assert report.aggregates["loc_e"] == 0.0
    assert report.aggregates["cont_a"] == 1.0
    assert report.aggregates["top1"] == 1.0


def test_evaluate_always_invisible_predictor(tiny_run, monkeypatch):
    eval_manifest, ckpt = tiny_run
    monkeypatch.setattr(evaluation, "rank_candidates", _oracle_ranker(0.2, 0.1))
    report = evaluate(eval_manifest, ckpt, vis_threshold=0.5)
    assert report.aggregates["vis_a"] == 0.0  # every sample is visible
    assert report.aggregates["top1"] == 1.0  # argmax-based, threshold-free


def test_evaluate_random_choice_predictor_is_at_chance(tmp_path, monkeypatch):
    manifest, _ = generate_dataset(tmp_path / "d", 500, TINY, seed=33)
    chooser = np.random.default_rng(0)

    def random_ranker(pack, model, margin):
        n = len(pack.candidates)
        picks = list(chooser.permutation(n))
        return [(int(i), 0.9 - 0.01 * k) for k, i in enumerate(picks)]

    monkeypatch.setattr(evaluation, "rank_candidates", random_ranker)
    cfg = training.TrainConfig(steps=1, batch=4)
    model = training.init_model(TINY.dim, cfg, np.random.default_rng(0))
    ck = training.Checkpoint(
        step=0, adam_t=0, skipped=0, cursor=0, config=asdict(cfg),
        params=model, moments=training.init_moments(model.tensors()),
    )
    report = evaluate(manifest, ck, vis_threshold=0.5)
    paths = read_manifest(manifest)
    n_cands = np.mean([len(read_pack_file(p).candidates) for p in paths[:50]])
    chance = 1.0 / n_cands
    spread = 3.0 * math.sqrt(chance * (1 - chance) / 500)
    assert abs(report.aggregates["top1"] - chance) <= spread


def test_evaluate_false_positive_contributes_zero_iou(tmp_path, monkeypatch):
    # gt-invisible samples where a mask is still predicted drag IoU down
    mixed = DatasetConfig(
        objects=3, dim=8, source_grid=(12, 12), dest_grid=(12, 12),
        distractor_parts=1, invisible_frac=0.5,
    )
    manifest, records = generate_dataset(tmp_path / "mix", 40, mixed, seed=9)
    n_invisible = sum(1 for r in records if not r.visible)
    assert 0 < n_invisible < 40

    def confident_ranker(pack, model, margin):
        return [(i, 0.9 - 0.01 * i) for i in range(len(pack.candidates))]

    monkeypatch.setattr(evaluation, "rank_candidates", confident_ranker)
    cfg = training.TrainConfig(steps=1, batch=4)
    model = training.init_model(8, cfg, np.random.default_rng(0))
    ck = training.Checkpoint(
        step=0, adam_t=0, skipped=0, cursor=0, config=asdict(cfg),
        params=model, moments=training.init_moments(model.tensors()),
    )
    report = evaluate(manifest, ck, vis_threshold=0.5)
    fp_records = [s for s in report.samples if not s["visible_gt"] and s["visible_pred"]]
    # invisible-gt packs that still offer candidates become false positives
    expected_fp = sum(1 for r in records if not r.visible and len(r.candidates) > 0)
    assert len(fp_records) == expected_fp > 0
    assert all(s["iou"] == 0.0 for s in fp_records)
    visible_count = 40 - n_invisible
    assert report.counts["iou_samples"] == visible_count + expected_fp
    assert report.aggregates["vis_a"] == pytest.approx(1 - expected_fp / 40)


def test_evaluate_threshold_sweep(tiny_run):
    eval_manifest, ckpt = tiny_run
    sweep = [0.0, 0.5, 0.9, 1.01]
    report = evaluate(eval_manifest, ckpt, sweep=sweep)
    assert [row["threshold"] for row in report.threshold_sweep] == sweep
    assert report.threshold_sweep[-1]["vis_a"] == 0.0  # nothing clears sim > 1
    assert report.threshold_sweep[0]["vis_a"] == 1.0  # everything visible at 0


def test_evaluate_report_serializes(tiny_run, tmp_path):
    eval_manifest, ckpt = tiny_run
    report = evaluate(eval_manifest, ckpt)
    blob = json.dumps(report.to_dict(), sort_keys=True)
    again = json.loads(blob)
    assert set(again["aggregates"]) == {"iou", "vis_a", "loc_e", "cont_a", "top1"}
    assert again["counts"]["samples"] == 12


# --- overlay ----------------------------------------------------------------------


def test_overlay_and_pgm(tmp_path, tiny_run):
    eval_manifest, ckpt = tiny_run
    pack = read_pack_file(read_manifest(eval_manifest)[0])
    res = match(pack, ckpt, vis_threshold=-1.0)
    img = evaluation.render_overlay(pack, res)
    assert img.dtype == np.uint8
    assert img.shape[1] == pack.source_mask.width + 1 + pack.candidates[0].width
    out = tmp_path / "overlay.pgm"
    evaluation.write_pgm(out, img)
    data = out.read_bytes()
    assert data.startswith(b"P5\n")
    header, rest = data.split(b"\n255\n", 1)
    assert len(rest) == img.size
