"""Acceptance suite: one test per release criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see the criterion
lines as they complete.
"""

import io
import json
import math
import time
from dataclasses import asdict

import numpy as np
import pytest

from maskmatch import encoder, evaluation, numeric, packio, synthetic, training
from maskmatch.attention import AttentionParams, cross_attend
from maskmatch.encoder import MaskDescriptor, extended_bbox, tight_bbox
from maskmatch.errors import (
    MaskCorruptionError,
    PackFormatError,
    PackTruncatedError,
    PackValidationError,
)
from maskmatch.head import LossConfig, MlpParams, assemble_rho, embed, info_nce
from maskmatch.mining import delaunay_adjacency
from maskmatch.packio import FeaturePack, MaskBitmap, read_manifest, read_pack_file
from maskmatch.synthetic import DatasetConfig, generate_dataset
from maskmatch.training import Checkpoint, TrainConfig, init_model, init_moments, train

from gradcheck import finite_difference, rel_err
from test_mining import (
    assert_graph_well_formed,
    graph_edges,
    oracle_delaunay_edges,
    random_general_position_points,
)
from test_numeric import reference_upsample


def _report(name: str, ok: bool, detail: str = ""):
    state = "PASS" if ok else "FAIL"
    print(f"[ACCEPT] {name}: {state}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# --- 1. gradient suite ---------------------------------------------------------


def _grad_case_layer_norm(rng):
    x = numeric.tensor(rng.uniform(-1, 1, (3, 6)), requires_grad=True)
    gamma = numeric.tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
    beta = numeric.tensor(rng.uniform(-0.5, 0.5, 6), requires_grad=True)
    w = rng.uniform(-1, 1, (3, 6))

    def forward(tape=None):
        return numeric.layer_norm(x, gamma, beta, 1e-5, tape)

    return forward, w, {"x": x, "gamma": gamma, "beta": beta}


def _grad_case_softmax(rng):
    x = numeric.tensor(rng.uniform(-1, 1, (4, 5)), requires_grad=True)
    w = rng.uniform(-1, 1, (4, 5))
    return (lambda tape=None: numeric.softmax_rows(x, tape)), w, {"x": x}


def _grad_case_matmul(rng):
    a = numeric.tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    b = numeric.tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True)
    w = rng.uniform(-1, 1, (3, 2))
    return (lambda tape=None: numeric.matmul(a, b, tape)), w, {"a": a, "b": b}


def _attention_fixture(rng):
    d = d_k = 4
    lim = 1.0 / np.sqrt(d)
    params = AttentionParams(
        w_q=numeric.tensor(rng.uniform(-lim, lim, (d, d_k)), requires_grad=True),
        w_k=numeric.tensor(rng.uniform(-lim, lim, (d, d_k)), requires_grad=True),
        w_v=numeric.tensor(rng.uniform(-lim, lim, (d, d_k)), requires_grad=True),
        pos_embed=numeric.tensor(0.02 * rng.standard_normal((8, d)), requires_grad=True),
        ln_gamma=numeric.tensor(np.ones(d), requires_grad=True),
        ln_beta=numeric.tensor(np.zeros(d), requires_grad=True),
    )
    context = rng.uniform(-1, 1, (2, 3, d))
    queries = [numeric.tensor(rng.uniform(-1, 1, d), requires_grad=True) for _ in range(3)]
    return params, context, queries


def _grad_case_cross_attend(rng):
    params, context, queries = _attention_fixture(rng)
    w = rng.uniform(-1, 1, (3, 4))

    def forward(tape=None):
        return numeric.stack_rows(cross_attend(queries, context, params, tape), tape)

    tensors = dict(params.tensors())
    tensors.update({f"q{i}": q for i, q in enumerate(queries)})
    return forward, w, tensors


def _mlp_fixture(rng, d_in=6, hidden=5, d_f=4):
    lim1, lim2 = 1.0 / np.sqrt(d_in), 1.0 / np.sqrt(hidden)
    return MlpParams(
        w1=numeric.tensor(rng.uniform(-lim1, lim1, (d_in, hidden)), requires_grad=True),
        b1=numeric.tensor(rng.uniform(-0.1, 0.1, hidden), requires_grad=True),
        w2=numeric.tensor(rng.uniform(-lim2, lim2, (hidden, d_f)), requires_grad=True),
        b2=numeric.tensor(rng.uniform(-0.1, 0.1, d_f), requires_grad=True),
    )


def _grad_case_embed(rng):
    params = _mlp_fixture(rng)
    rho = numeric.tensor(rng.uniform(-1, 1, 6), requires_grad=True)
    w = rng.uniform(-1, 1, 4)

    def forward(tape=None):
        return embed(rho, params, tape)

    return forward, w, {**params.tensors(), "rho": rho}


def _grad_case_info_nce(rng):
    sims = numeric.tensor(rng.uniform(-1, 1, 6), requires_grad=True)
    cfg = LossConfig(temperature=0.2, batch=6)

    def forward(tape=None):
        return info_nce(sims, 2, cfg, tape)

    return forward, np.asarray(1.0), {"sims": sims}


def _grad_case_full_loss(rng):
    """Composed loss: attention refinement, assembly, MLP, cosine, contrastive."""
    params, context, _ = _attention_fixture(rng)
    d, d_k = 4, 4
    mlp = _mlp_fixture(rng, d_in=d_k + 2 * d, hidden=6, d_f=4)
    descs = [
        MaskDescriptor(object=rng.uniform(-1, 1, d), context=rng.uniform(-1, 1, d))
        for _ in range(3)
    ]
    source = MaskDescriptor(object=rng.uniform(-1, 1, d), context=rng.uniform(-1, 1, d))
    dst_map = rng.uniform(-1, 1, (2, 2, d))
    cfg = LossConfig(temperature=0.2, batch=3)

    def forward(tape=None):
        refined = cross_attend([c.object for c in descs], context, params, tape)
        for c, vec in zip(descs, refined):
            c.cross_view = vec
        source.cross_view = cross_attend([source.object], dst_map, params, tape)[0]
        src_emb = embed(assemble_rho(source, tape), mlp, tape)
        sims = numeric.stack_scalars(
            [
                numeric.cosine_sim(embed(assemble_rho(c, tape), mlp, tape), src_emb, tape)
                for c in descs
            ],
            tape,
        )
        return info_nce(sims, 0, cfg, tape)

    return forward, np.asarray(1.0), {**params.tensors(), **mlp.tensors()}


GRAD_CASES = {
    "layer_norm": _grad_case_layer_norm,
    "softmax_rows": _grad_case_softmax,
    "matmul": _grad_case_matmul,
    "cross_attend": _grad_case_cross_attend,
    "embed": _grad_case_embed,
    "info_nce": _grad_case_info_nce,
    "composed_loss": _grad_case_full_loss,
}


def test_gradient_suite():
    started = time.monotonic()
    worst = {}
    for name, case in GRAD_CASES.items():
        worst[name] = 0.0
        for seed in range(10):
            rng = np.random.default_rng(1000 * hash(name) % 100000 + seed)
            forward, w, tensors = case(rng)
            tape = numeric.Tape()
            out = forward(tape)
            numeric.zero_grads(tensors.values())
            tape.backward(out, seed=w)

            def scalar():
                return float((forward().data * w).sum())

            for tname, t in tensors.items():
                fd = finite_difference(scalar, t.data, step=1e-5)
                err = rel_err(t.grad, fd)
                worst[name] = max(worst[name], err)
    elapsed = time.monotonic() - started
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    _report("gradient-suite", not bad and elapsed < 30.0, detail)


# --- 2. loss sanity ---------------------------------------------------------------


def test_loss_sanity():
    cfg = LossConfig(temperature=1.0, batch=4)
    equal = float(info_nce(np.full(4, 0.25), 1, cfg).data)
    ok = abs(equal - math.log(4)) < 1e-9
    rng = np.random.default_rng(0)
    for _ in range(50):
        sims = rng.uniform(-1, 1, 4)
        pos = int(rng.integers(0, 4))
        c = float(rng.uniform(-5, 5))
        cfg2 = LossConfig(temperature=0.2, batch=4)
        a = float(info_nce(sims, pos, cfg2).data)
        b = float(info_nce(sims + c, pos, cfg2).data)
        ok = ok and abs(a - b) < 1e-9
    _report("loss-sanity", ok, f"ln4 err {abs(equal - math.log(4)):.1e}")


# --- 3. pooling oracle --------------------------------------------------------------


def test_pooling_oracle():
    rng = np.random.default_rng(7)
    exact = True
    for _ in range(100):
        h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        d = int(rng.integers(1, 5))
        features = rng.standard_normal((h, w, d))
        gh, gw = 4 * h, 4 * w
        grid = rng.random((gh, gw)) < 0.35
        if not grid.any():
            grid[0, 0] = True
        mask = MaskBitmap.from_grid(grid)
        up = reference_upsample(features, 4)

        acc = np.zeros(d)
        count = 0
        for y in range(gh):
            for x in range(gw):
                if grid[y, x]:
                    acc = acc + up[y, x]
                    count += 1
        expected_obj = acc / count
        exact = exact and np.array_equal(
            encoder.object_descriptor(mask, features), expected_obj
        )

        margin = float(rng.uniform(0.0, 1.0))
        box = extended_bbox(tight_bbox(grid), margin, gh, gw)
        acc = np.zeros(d)
        count = 0
        for y in range(box.y0, box.y1 + 1):
            for x in range(box.x0, box.x1 + 1):
                acc = acc + up[y, x]
                count += 1
        expected_ctx = acc / count
        exact = exact and np.array_equal(
            encoder.context_descriptor(mask, features, margin), expected_ctx
        )
    _report("pooling-oracle", exact, "100 instances, exact equality")


# --- 4. Delaunay oracle ---------------------------------------------------------------


def test_delaunay_oracle():
    rng = np.random.default_rng(31)
    ok = True
    for trial in range(50):
        n = int(rng.integers(3, 21))
        pts = random_general_position_points(rng, n)
        g = delaunay_adjacency(pts)
        assert_graph_well_formed(g)
        if graph_edges(g) != oracle_delaunay_edges(pts):
            ok = False
            break
    degenerate = [
        [(0.0, 0.0)],
        [(0.0, 0.0), (1.0, 1.0)],
        [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)],
        [(1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (2.0, 5.0)],
    ]
    for pts in degenerate:
        g = delaunay_adjacency(pts)
        sym = np.array_equal(g.adjacency, g.adjacency.T) and not g.adjacency.diagonal().any()
        ok = ok and sym
    _report("delaunay-oracle", ok, "50 random sets + degenerate fixtures")


# --- 5. pack format -------------------------------------------------------------------


def test_pack_format():
    from test_packio import random_pack

    rng = np.random.default_rng(17)
    ok = True
    for _ in range(100):
        pack = random_pack(rng, with_gt=bool(rng.random() < 0.7))
        first = io.BytesIO()
        packio.write_pack(pack, first)
        again = io.BytesIO()
        packio.write_pack(packio.read_pack(io.BytesIO(first.getvalue())), again)
        ok = ok and first.getvalue() == again.getvalue()

    base = io.BytesIO()
    packio.write_pack(random_pack(np.random.default_rng(3)), base)
    data = base.getvalue()

    with pytest.raises(PackFormatError):
        packio.read_pack(io.BytesIO(b"XXXX" + data[4:]))
    with pytest.raises(PackTruncatedError):
        packio.read_pack(io.BytesIO(data[:-2]))
    corrupted = bytearray(data)
    import struct

    _, _, d, hs, ws, hd, wd, _, _ = struct.unpack("<HBHHHHHHB", data[4:20])
    off = 20 + 4 * d * (hs * ws + hd * wd)
    w, h, count = struct.unpack("<HHI", data[off : off + 8])
    corrupted[off + 8 : off + 12] = struct.pack("<I", w + 1)
    with pytest.raises(MaskCorruptionError):
        packio.read_pack(io.BytesIO(bytes(corrupted)))
    bad = FeaturePack(
        direction="ego2exo",
        source_features=np.ones((1, 1, 1)),
        dest_features=np.ones((1, 1, 1)),
        source_mask=MaskBitmap(1, 1, (1,)),
        candidates=[MaskBitmap(1, 1, (1,))],
        gt_index=0,
        gt_mask=MaskBitmap(1, 1, (1,)),
        visible=False,
    )
    with pytest.raises(PackValidationError):
        packio.write_pack(bad, io.BytesIO())
    _report("pack-format", ok, "100 round trips byte-identical, corruption fixtures rejected")


# --- 6 + 7 + 8. synthetic end-to-end, ablation, determinism ------------------------------


ACCEPT_WORLD_SEED = 1000
ACCEPT_DATA = DatasetConfig()  # K=8, d=16, sigma=0.5, 2 distractor parts


@pytest.fixture(scope="module")
def accept_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    train_manifest, _ = generate_dataset(root / "train", 400, ACCEPT_DATA, ACCEPT_WORLD_SEED, split=0)
    eval_manifest, _ = generate_dataset(root / "eval", 100, ACCEPT_DATA, ACCEPT_WORLD_SEED, split=1)
    return root, train_manifest, eval_manifest


def _untrained_checkpoint(manifest, cfg: TrainConfig, seed: int) -> Checkpoint:
    probe = read_pack_file(read_manifest(manifest)[0])
    model = init_model(probe.source_features.shape[2], cfg, np.random.default_rng(seed))
    return Checkpoint(
        step=0,
        adam_t=0,
        skipped=0,
        cursor=0,
        config=asdict(cfg),
        params=model,
        moments=init_moments(model.tensors()),
    )


def test_synthetic_end_to_end(accept_dataset):
    root, train_manifest, eval_manifest = accept_dataset
    started = time.monotonic()
    cfg = TrainConfig(steps=200, batch=8, seed=0)
    result = train(train_manifest, cfg, root / "run")
    report = evaluation.evaluate(eval_manifest, result.checkpoint_path)
    top1 = report.aggregates["top1"]
    iou = report.aggregates["iou"]

    untrained = _untrained_checkpoint(train_manifest, cfg, seed=123)
    base_report = evaluation.evaluate(eval_manifest, untrained)
    base_top1 = base_report.aggregates["top1"]
    n_cands = np.mean(
        [len(read_pack_file(p).candidates) for p in read_manifest(eval_manifest)[:25]]
    )
    chance = 1.0 / n_cands
    elapsed = time.monotonic() - started

    ok = (
        top1 >= 0.90
        and iou >= 0.85
        and abs(base_top1 - chance) <= 0.1
        and elapsed < 300.0
    )
    _report(
        "synthetic-end-to-end",
        ok,
        f"top1={top1:.3f} iou={iou:.3f} untrained={base_top1:.3f} chance={chance:.3f} {elapsed:.0f}s",
    )


ABLATION_DATA = DatasetConfig(distractor_parts=5, noise=1.5)
ABLATION_WORLD_SEED = 503


def test_ablation_trend(tmp_path_factory):
    # constrained training budget: mining quality shows before saturation
    root = tmp_path_factory.mktemp("ablation")
    train_manifest, _ = generate_dataset(root / "train", 120, ABLATION_DATA, ABLATION_WORLD_SEED, split=0)
    eval_manifest, _ = generate_dataset(root / "eval", 60, ABLATION_DATA, ABLATION_WORLD_SEED, split=1)
    accs = {"adjacent": [], "random": []}
    for seed in range(5):
        for strategy in accs:
            cfg = TrainConfig(steps=50, batch=8, seed=seed, mining_strategy=strategy)
            result = train(train_manifest, cfg, root / f"run_{strategy}_{seed}")
            report = evaluation.evaluate(eval_manifest, result.checkpoint_path)
            accs[strategy].append(report.aggregates["top1"])
    mean_adj = float(np.mean(accs["adjacent"]))
    mean_rand = float(np.mean(accs["random"]))
    _report(
        "ablation-trend",
        mean_adj >= mean_rand - 0.02,
        f"adjacent={mean_adj:.3f} random={mean_rand:.3f} (per-seed adj {accs['adjacent']}, rand {accs['random']})",
    )


def test_determinism(accept_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("determinism")
    _, train_manifest, eval_manifest = accept_dataset
    cfg = TrainConfig(steps=24, batch=8, seed=11, checkpoint_interval=12)
    r1 = train(train_manifest, cfg, root / "r1")
    r2 = train(train_manifest, cfg, root / "r2")
    same_ckpt = r1.checkpoint_path.read_bytes() == r2.checkpoint_path.read_bytes()

    rep1 = evaluation.evaluate(eval_manifest, r1.checkpoint_path)
    rep2 = evaluation.evaluate(eval_manifest, r2.checkpoint_path)
    same_report = json.dumps(rep1.to_dict(), sort_keys=True) == json.dumps(
        rep2.to_dict(), sort_keys=True
    )

    resumed = train(train_manifest, cfg, root / "r3", resume_from=root / "r1" / "ckpt_12.ommc")
    same_resume = resumed.checkpoint_path.read_bytes() == r1.checkpoint_path.read_bytes()
    _report(
        "determinism",
        same_ckpt and same_report and same_resume,
        f"ckpt={same_ckpt} report={same_report} resume={same_resume}",
    )


# --- 9. metric fixtures ------------------------------------------------------------------


def test_metric_fixtures():
    def rect(h, w, y0, y1, x0, x1):
        g = np.zeros((h, w), dtype=bool)
        g[y0:y1, x0:x1] = True
        return MaskBitmap.from_grid(g)

    a = rect(8, 8, 2, 5, 2, 5)
    ok = evaluation.iou(a, a) == 1.0
    ok = ok and evaluation.iou(rect(8, 8, 0, 2, 0, 2), rect(8, 8, 4, 6, 4, 6)) == 0.0
    ok = ok and abs(evaluation.iou(rect(8, 8, 0, 4, 0, 2), rect(8, 8, 2, 6, 0, 2)) - 1 / 3) < 1e-15
    empty = rect(4, 4, 0, 0, 0, 0)
    ok = ok and evaluation.iou(empty, empty) == 1.0

    m = rect(10, 10, 3, 6, 3, 6)
    ok = ok and evaluation.location_error(m, m) == 0.0
    corner_a = rect(9, 9, 0, 1, 0, 1)
    corner_b = rect(9, 9, 8, 9, 8, 9)
    ok = ok and abs(evaluation.location_error(corner_a, corner_b) - 1.0) < 1e-12

    sq = rect(12, 12, 3, 8, 3, 8)
    ok = ok and evaluation.contour_accuracy(sq, sq) == 1.0
    far_a = rect(32, 32, 1, 4, 1, 4)
    far_b = rect(32, 32, 25, 30, 25, 30)
    ok = ok and evaluation.contour_accuracy(far_a, far_b, 0.0075) == 0.0
    ok = ok and evaluation.contour_accuracy(empty, empty) == 1.0
    _report("metric-fixtures", ok)
