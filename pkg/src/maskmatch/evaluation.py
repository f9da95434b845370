"""Mask selection at inference time and the matching quality metrics.

Selection embeds the source and every usable candidate, ranks the
candidates by cosine similarity in the latent space (ties broken toward
the lower candidate index), and declares the object visible when the
top similarity clears a threshold.

Metrics: mask IoU, visibility accuracy, centroid location error
normalized by the image diagonal, and a boundary F-measure with a
distance tolerance expressed as a fraction of the diagonal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from .encoder import encode_all
from .errors import EmptyMaskError, ParameterError
from .attention import refine_descriptors
from .head import assemble_rho, embed
from . import numeric
from .mining import mask_centroid
from .packio import FeaturePack, MaskBitmap, read_manifest, read_pack_file
from .training import Checkpoint, ModelParams, load_checkpoint

log = logging.getLogger(__name__)

DEFAULT_VIS_THRESHOLD = 0.5
DEFAULT_CONTOUR_TOL = 0.0075


@dataclass
class MatchResult:
    chosen_index: int | None
    similarity: float | None
    visible_pred: bool
    ranked: list[tuple[int, float]]


@dataclass
class EvalReport:
    samples: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    threshold_sweep: list[dict] | None = None

    def to_dict(self) -> dict:
        out = {"aggregates": self.aggregates, "counts": self.counts, "samples": self.samples}
        if self.threshold_sweep is not None:
            out["threshold_sweep"] = self.threshold_sweep
        return out


def _resolve(checkpoint) -> tuple[ModelParams, dict]:
    if isinstance(checkpoint, Checkpoint):
        return checkpoint.params, checkpoint.config
    ck = load_checkpoint(checkpoint)
    return ck.params, ck.config


def rank_candidates(pack: FeaturePack, model: ModelParams, margin: float) -> list[tuple[int, float]]:
    """Latent-space similarities of every usable candidate, best first."""
    source, cands, kept = encode_all(pack, margin)
    if not kept:
        return []
    refine_descriptors(source, cands, pack.source_features, pack.dest_features, model.attn)
    src_emb = embed(assemble_rho(source), model.mlp)
    sims = [
        float(numeric.cosine_sim(embed(assemble_rho(c), model.mlp), src_emb).data) for c in cands
    ]
    order = sorted(zip(kept, sims), key=lambda t: (-t[1], t[0]))
    return order


def match(pack: FeaturePack, checkpoint, vis_threshold: float = DEFAULT_VIS_THRESHOLD) -> MatchResult:
    """Pick the best-matching candidate and decide visibility."""
    model, config = _resolve(checkpoint)
    try:
        ranked = rank_candidates(pack, model, float(config.get("context_margin", 0.5)))
    except EmptyMaskError as e:
        log.warning("match failed: %s", e)
        return MatchResult(chosen_index=None, similarity=None, visible_pred=False, ranked=[])
    if not ranked:
        log.warning("match: no usable candidates in pack")
        return MatchResult(chosen_index=None, similarity=None, visible_pred=False, ranked=[])
    best_index, best_sim = ranked[0]
    visible = best_sim >= vis_threshold
    return MatchResult(
        chosen_index=best_index if visible else None,
        similarity=best_sim,
        visible_pred=visible,
        ranked=ranked,
    )


# --- metrics ------------------------------------------------------------------


def _check_same_grid(a: MaskBitmap, b: MaskBitmap) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ParameterError(
            f"mask grids differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )


def iou(a: MaskBitmap, b: MaskBitmap) -> float:
    """Intersection over union; two empty masks count as a perfect 1.0."""
    _check_same_grid(a, b)
    ga, gb = a.decode(), b.decode()
    union = int(np.logical_or(ga, gb).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(ga, gb).sum()) / union


def location_error(pred: MaskBitmap, gt: MaskBitmap) -> float:
    """Centroid distance divided by the image diagonal."""
    _check_same_grid(pred, gt)
    px, py = mask_centroid(pred)
    gx, gy = mask_centroid(gt)
    diagonal = math.hypot(pred.width - 1, pred.height - 1)
    if diagonal == 0:
        return 0.0
    return math.hypot(px - gx, py - gy) / diagonal


def _boundary(grid: np.ndarray) -> np.ndarray:
    padded = np.pad(grid, 1, constant_values=False)
    neighbor_bg = (
        ~padded[:-2, 1:-1] | ~padded[2:, 1:-1] | ~padded[1:-1, :-2] | ~padded[1:-1, 2:]
    )
    return grid & neighbor_bg


def contour_accuracy(pred: MaskBitmap, gt: MaskBitmap, tol_frac: float = DEFAULT_CONTOUR_TOL) -> float:
    """Boundary F-measure with a match tolerance of tol_frac * diagonal."""
    _check_same_grid(pred, gt)
    gp = _boundary(pred.decode())
    gg = _boundary(gt.decode())
    np_pts, ng_pts = int(gp.sum()), int(gg.sum())
    if np_pts == 0 and ng_pts == 0:
        return 1.0
    if np_pts == 0 or ng_pts == 0:
        return 0.0
    tol = tol_frac * math.hypot(pred.width - 1, pred.height - 1)
    dist_to_gt = distance_transform_edt(~gg)
    dist_to_pred = distance_transform_edt(~gp)
    precision = float((dist_to_gt[gp] <= tol).sum()) / np_pts
    recall = float((dist_to_pred[gg] <= tol).sum()) / ng_pts
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# --- dataset evaluation -----------------------------------------------------------


def _gt_reference(pack: FeaturePack) -> MaskBitmap:
    if pack.gt_mask is not None:
        return pack.gt_mask
    return pack.candidates[pack.gt_index]


def evaluate(
    manifest_path,
    checkpoint,
    vis_threshold: float = DEFAULT_VIS_THRESHOLD,
    contour_tol: float = DEFAULT_CONTOUR_TOL,
    sweep: list[float] | None = None,
) -> EvalReport:
    """Aggregate matching metrics over a manifest of annotated packs.

    Visibility accuracy covers every sample.  IoU runs over true
    positives plus false positives (a predicted mask when the object is
    absent scores 0); location and contour metrics run over true
    positives, excluding pairs where the location error is undefined.
    Top-1 accuracy is argmax-based and ignores the threshold.
    """
    model, config = _resolve(checkpoint)
    margin = float(config.get("context_margin", 0.5))
    report = EvalReport()
    vis_hits: list[float] = []
    top1_hits: list[float] = []
    ious: list[float] = []
    loc_errors: list[float] = []
    contours: list[float] = []
    errors = 0
    loc_excluded = 0
    max_sims: list[tuple[float | None, bool]] = []

    for path in read_manifest(manifest_path):
        try:
            pack = read_pack_file(path)
            ranked = rank_candidates(pack, model, margin)
        except (EmptyMaskError, OSError) as e:
            log.warning("evaluation skips %s: %s", path, e)
            errors += 1
            continue
        best_sim = ranked[0][1] if ranked else None
        visible_pred = bool(ranked) and best_sim >= vis_threshold
        chosen = ranked[0][0] if visible_pred else None
        visible_gt = pack.visible
        max_sims.append((best_sim, visible_gt))

        record: dict = {
            "pack": str(path.name),
            "visible_gt": visible_gt,
            "visible_pred": visible_pred,
            "chosen": chosen,
            "similarity": best_sim,
        }
        vis_hits.append(1.0 if visible_pred == visible_gt else 0.0)
        record["vis_hit"] = bool(visible_pred == visible_gt)

        if visible_gt and pack.gt_index is not None:
            hit = 1.0 if ranked and ranked[0][0] == pack.gt_index else 0.0
            top1_hits.append(hit)
            record["top1_hit"] = bool(hit)

        if visible_gt and visible_pred and pack.gt_index is not None:
            gt_ref = _gt_reference(pack)
            pred_mask = pack.candidates[chosen]
            sample_iou = iou(pred_mask, gt_ref)
            ious.append(sample_iou)
            record["iou"] = sample_iou
            try:
                le = location_error(pred_mask, gt_ref)
                loc_errors.append(le)
                record["loc_e"] = le
            except EmptyMaskError:
                loc_excluded += 1
            ca = contour_accuracy(pred_mask, gt_ref, contour_tol)
            contours.append(ca)
            record["cont_a"] = ca
        elif not visible_gt and visible_pred:
            ious.append(0.0)
            record["iou"] = 0.0

        report.samples.append(record)

    def mean(values):
        return float(np.mean(values)) if values else None

    report.aggregates = {
        "iou": mean(ious),
        "vis_a": mean(vis_hits),
        "loc_e": mean(loc_errors),
        "cont_a": mean(contours),
        "top1": mean(top1_hits),
    }
    report.counts = {
        "samples": len(report.samples),
        "errors": errors,
        "loc_e_excluded": loc_excluded,
        "iou_samples": len(ious),
        "top1_samples": len(top1_hits),
    }
    if sweep is not None:
        report.threshold_sweep = []
        for threshold in sweep:
            hits = [
                1.0 if ((s is not None and s >= threshold) == vg) else 0.0
                for s, vg in max_sims
            ]
            report.threshold_sweep.append(
                {"threshold": threshold, "vis_a": mean(hits)}
            )
    return report


# --- overlay rendering --------------------------------------------------------------


def render_overlay(pack: FeaturePack, result: MatchResult) -> np.ndarray:
    """Side-by-side grayscale overlay: source mask | chosen vs gt masks."""
    src = pack.source_mask.decode().astype(np.uint8) * 255
    c0 = pack.candidates[0] if pack.candidates else pack.source_mask
    right = np.zeros((c0.height, c0.width), dtype=np.uint8)
    if pack.gt_mask is not None:
        right[pack.gt_mask.decode()] += 96
    if result.chosen_index is not None:
        right[pack.candidates[result.chosen_index].decode()] += 159
    h = max(src.shape[0], right.shape[0])
    canvas = np.zeros((h, src.shape[1] + 1 + right.shape[1]), dtype=np.uint8)
    canvas[: src.shape[0], : src.shape[1]] = src
    canvas[:, src.shape[1]] = 64
    canvas[: right.shape[0], src.shape[1] + 1 :] = right
    return canvas


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) grayscale image writer."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        f.write(image.tobytes())
