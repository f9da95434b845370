"""Synthetic cross-view scenes with known correspondence ground truth.

Each scene places K non-overlapping shapes (rectangles or ellipses) in
two views.  Every object carries a latent identity vector; a view
renders the identity through its own fixed linear transform plus
Gaussian noise, so appearance differs across views while identity stays
recoverable.  Destination candidates are the visible true shapes plus
random sub-rectangle parts of them, which mimics over-segmented
proposals and gives adjacent hard negatives real bite.

A generated dataset is a directory of packs, a manifest, and a
`spec.json` sidecar recording the construction (per-pack query, the
candidate identity of every proposal, and the ground-truth slot) for
oracle-style tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import UPSAMPLE_FACTOR
from .errors import GenerationError, ParameterError
from .packio import FeaturePack, MaskBitmap, write_manifest, write_pack_file

PLACEMENT_TRIES = 1000
SPEC_SIDECAR = "spec.json"


@dataclass(frozen=True)
class Shape:
    """Axis-aligned rectangle or ellipse in feature-grid cells."""

    kind: str  # "rect" | "ellipse"
    y0: int
    x0: int
    h: int
    w: int

    def feature_mask(self, grid_h: int, grid_w: int) -> np.ndarray:
        return self._raster(grid_h, grid_w, scale=1)

    def image_mask(self, grid_h: int, grid_w: int) -> np.ndarray:
        return self._raster(
            grid_h * UPSAMPLE_FACTOR, grid_w * UPSAMPLE_FACTOR, scale=UPSAMPLE_FACTOR
        )

    def _raster(self, out_h: int, out_w: int, scale: int) -> np.ndarray:
        mask = np.zeros((out_h, out_w), dtype=bool)
        y0, x0 = self.y0 * scale, self.x0 * scale
        h, w = self.h * scale, self.w * scale
        if self.kind == "rect":
            mask[y0 : y0 + h, x0 : x0 + w] = True
            return mask
        cy, cx = y0 + (h - 1) / 2.0, x0 + (w - 1) / 2.0
        ry, rx = h / 2.0, w / 2.0
        yy, xx = np.mgrid[0:out_h, 0:out_w]
        mask[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = True
        return mask


@dataclass
class SceneSpec:
    """Complete description of one generated sample."""

    object_count: int
    feature_dim: int
    source_grid: tuple[int, int]
    dest_grid: tuple[int, int]
    latents: np.ndarray  # K x d identity vectors
    source_transform: np.ndarray  # d x d
    dest_transform: np.ndarray
    source_bias: np.ndarray  # d
    dest_bias: np.ndarray
    noise: float
    distractor_parts: int
    source_shapes: list[Shape] = field(default_factory=list)
    dest_shapes: list[Shape] = field(default_factory=list)
    source_visible: list[bool] = field(default_factory=list)
    dest_visible: list[bool] = field(default_factory=list)
    query_index: int = 0

    def validate(self) -> None:
        if self.object_count < 2:
            raise ParameterError("need at least two objects per scene")
        if self.noise < 0:
            raise ParameterError("noise sigma must be >= 0")
        if self.latents.shape != (self.object_count, self.feature_dim):
            raise ParameterError("latent matrix shape does not match object count and dim")


@dataclass
class CandidateId:
    """Provenance of one destination candidate."""

    object_index: int
    is_part: bool


@dataclass
class PackRecord:
    """Construction bookkeeping for one pack, used as the match oracle."""

    path: str
    query_index: int
    visible: bool
    gt_index: int | None
    candidates: list[CandidateId]


def _sample_geometries(
    grid: tuple[int, int], count: int, rng: np.random.Generator
) -> list[tuple[str, int, int]]:
    """(kind, h, w) per object; an object keeps its geometry in both views."""
    gh, gw = grid
    hi_h = max(4, min(6, gh // 4 + 1))
    hi_w = max(4, min(6, gw // 4 + 1))
    out = []
    for _ in range(count):
        h = int(rng.integers(3, hi_h))
        w = int(rng.integers(3, hi_w))
        if gh - h - 2 <= 1 or gw - w - 2 <= 1:
            raise GenerationError(
                f"grid {gh}x{gw} too small for a {h}x{w} shape; use a larger grid"
            )
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        out.append((kind, h, w))
    return out


def _place_shapes(
    grid: tuple[int, int],
    geometries: list[tuple[str, int, int]],
    rng: np.random.Generator,
) -> list[Shape]:
    """Non-overlapping placement with a one-cell gap.

    Early shapes can box later ones out, so a failed arrangement is
    discarded and placement restarts, within a global try budget.
    """
    gh, gw = grid
    count = len(geometries)
    tries_left = PLACEMENT_TRIES
    while tries_left > 0:
        placed: list[Shape] = []
        boxes: list[tuple[int, int, int, int]] = []
        while len(placed) < count and tries_left > 0:
            tries_left -= 1
            kind, h, w = geometries[len(placed)]
            y0 = int(rng.integers(1, gh - h - 1))
            x0 = int(rng.integers(1, gw - w - 1))
            clear = all(
                y0 + h + 1 <= by or by + bh + 1 <= y0 or x0 + w + 1 <= bx or bx + bw + 1 <= x0
                for by, bx, bh, bw in boxes
            )
            if clear:
                placed.append(Shape(kind, y0, x0, h, w))
                boxes.append((y0, x0, h, w))
            elif len(placed) >= 1 and tries_left % 25 == 0:
                break  # arrangement may be deadlocked; restart
        if len(placed) == count:
            return placed
    raise GenerationError(
        f"could not place {count} non-overlapping shapes on a {gh}x{gw} grid "
        f"after {PLACEMENT_TRIES} tries; use fewer or smaller objects"
    )


def make_scene_spec(
    objects: int,
    dim: int,
    rng: np.random.Generator,
    source_grid: tuple[int, int] = (24, 24),
    dest_grid: tuple[int, int] = (24, 24),
    noise: float = 0.5,
    distractor_parts: int = 2,
    latents: np.ndarray | None = None,
    source_transform: np.ndarray | None = None,
    dest_transform: np.ndarray | None = None,
    source_bias: np.ndarray | None = None,
    dest_bias: np.ndarray | None = None,
    invisible_prob: float = 0.0,
) -> SceneSpec:
    """Randomly place one scene; identity vectors and view transforms may be shared."""
    if latents is None:
        latents = rng.standard_normal((objects, dim))
    eye = np.eye(dim)
    spec = SceneSpec(
        object_count=objects,
        feature_dim=dim,
        source_grid=source_grid,
        dest_grid=dest_grid,
        latents=latents,
        source_transform=eye if source_transform is None else source_transform,
        dest_transform=eye if dest_transform is None else dest_transform,
        source_bias=np.zeros(dim) if source_bias is None else source_bias,
        dest_bias=np.zeros(dim) if dest_bias is None else dest_bias,
        noise=noise,
        distractor_parts=distractor_parts,
    )
    spec.validate()
    tight_grid = (min(source_grid[0], dest_grid[0]), min(source_grid[1], dest_grid[1]))
    geometries = _sample_geometries(tight_grid, objects, rng)
    spec.source_shapes = _place_shapes(source_grid, geometries, rng)
    spec.dest_shapes = _place_shapes(dest_grid, geometries, rng)
    spec.source_visible = [True] * objects
    spec.dest_visible = [bool(rng.random() >= invisible_prob) for _ in range(objects)]
    source_options = [k for k in range(objects) if spec.source_visible[k]]
    spec.query_index = int(source_options[rng.integers(0, len(source_options))])
    return spec


def _render_view(
    grid: tuple[int, int],
    shapes: list[Shape],
    visible: list[bool],
    latents: np.ndarray,
    transform: np.ndarray,
    bias: np.ndarray,
    noise: float,
    rng: np.random.Generator,
) -> np.ndarray:
    gh, gw = grid
    d = latents.shape[1]
    features = rng.normal(0.0, noise, (gh, gw, d)) if noise > 0 else np.zeros((gh, gw, d))
    for k, shape in enumerate(shapes):
        if not visible[k]:
            continue
        signal = transform @ latents[k] + bias
        features[shape.feature_mask(gh, gw)] += signal
    return features


def _part_mask(full: np.ndarray, rng: np.random.Generator) -> np.ndarray | None:
    """Random sub-rectangle of the object's bbox intersected with the object."""
    ys, xs = np.nonzero(full)
    y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
    bh, bw = y1 - y0 + 1, x1 - x0 + 1
    min_pixels = UPSAMPLE_FACTOR * UPSAMPLE_FACTOR
    for _ in range(50):
        ph = max(UPSAMPLE_FACTOR, int(round(bh * rng.uniform(0.3, 0.7))))
        pw = max(UPSAMPLE_FACTOR, int(round(bw * rng.uniform(0.3, 0.7))))
        py = int(y0 + rng.integers(0, max(1, bh - ph + 1)))
        px = int(x0 + rng.integers(0, max(1, bw - pw + 1)))
        part = np.zeros_like(full)
        part[py : py + ph, px : px + pw] = True
        part &= full
        if part.sum() >= min_pixels and part.sum() < full.sum():
            return part
    return None


def generate_pack(
    spec: SceneSpec, rng: np.random.Generator
) -> tuple[FeaturePack, PackRecord]:
    """Render both views, build candidate proposals, and annotate ground truth."""
    spec.validate()
    src_features = _render_view(
        spec.source_grid,
        spec.source_shapes,
        spec.source_visible,
        spec.latents,
        spec.source_transform,
        spec.source_bias,
        spec.noise,
        rng,
    )
    dst_features = _render_view(
        spec.dest_grid,
        spec.dest_shapes,
        spec.dest_visible,
        spec.latents,
        spec.dest_transform,
        spec.dest_bias,
        spec.noise,
        rng,
    )

    gh, gw = spec.dest_grid
    masks: list[np.ndarray] = []
    ids: list[CandidateId] = []
    for k, shape in enumerate(spec.dest_shapes):
        if not spec.dest_visible[k]:
            continue
        full = shape.image_mask(gh, gw)
        masks.append(full)
        ids.append(CandidateId(object_index=k, is_part=False))
        for _ in range(spec.distractor_parts):
            part = _part_mask(full, rng)
            if part is not None:
                masks.append(part)
                ids.append(CandidateId(object_index=k, is_part=True))

    order = rng.permutation(len(masks))
    masks = [masks[i] for i in order]
    ids = [ids[i] for i in order]

    visible = bool(spec.dest_visible[spec.query_index])
    gt_index = None
    if visible:
        gt_index = next(
            i for i, cid in enumerate(ids)
            if cid.object_index == spec.query_index and not cid.is_part
        )

    sh, sw = spec.source_grid
    source_mask = MaskBitmap.from_grid(spec.source_shapes[spec.query_index].image_mask(sh, sw))
    pack = FeaturePack(
        direction="ego2exo",
        source_features=src_features,
        dest_features=dst_features,
        source_mask=source_mask,
        candidates=[MaskBitmap.from_grid(m) for m in masks],
        gt_index=gt_index,
        gt_mask=MaskBitmap.from_grid(masks[gt_index]) if gt_index is not None else None,
        visible=visible,
    )
    pack.validate()
    record = PackRecord(
        path="", query_index=spec.query_index, visible=visible, gt_index=gt_index, candidates=ids
    )
    return pack, record


def oracle_match(record: PackRecord) -> int | None:
    """Ground-truth candidate slot from construction; None when not visible."""
    if not record.visible:
        return None
    for i, cid in enumerate(record.candidates):
        if cid.object_index == record.query_index and not cid.is_part:
            return i
    return None


@dataclass
class DatasetConfig:
    objects: int = 8
    dim: int = 16
    noise: float = 0.5
    distractor_parts: int = 2
    source_grid: tuple[int, int] = (24, 24)
    dest_grid: tuple[int, int] = (24, 24)
    view_transform: str = "random"  # "random" (orthogonal) or "identity"
    invisible_frac: float = 0.0
    bias_scale: float = 0.25


def _random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def generate_dataset(
    out_dir, packs: int, cfg: DatasetConfig, seed: int, split: int = 0
) -> tuple[Path, list[PackRecord]]:
    """Write packs plus manifest and spec sidecar; returns the manifest path.

    The seed fixes the scene vocabulary (identity vectors, view
    transforms); the split only varies placements and noise, so separate
    train/eval splits describe the same world.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    latents = dataset_rng.standard_normal((cfg.objects, cfg.dim))
    if cfg.view_transform == "identity":
        a_src = a_dst = np.eye(cfg.dim)
        b_src = b_dst = np.zeros(cfg.dim)
    elif cfg.view_transform == "random":
        a_src = _random_orthogonal(cfg.dim, dataset_rng)
        a_dst = _random_orthogonal(cfg.dim, dataset_rng)
        b_src = cfg.bias_scale * dataset_rng.standard_normal(cfg.dim)
        b_dst = cfg.bias_scale * dataset_rng.standard_normal(cfg.dim)
    else:
        raise ParameterError(f"unknown view_transform {cfg.view_transform!r}")

    names = []
    records = []
    for i in range(packs):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1 + split, i)))
        spec = make_scene_spec(
            cfg.objects,
            cfg.dim,
            rng,
            source_grid=cfg.source_grid,
            dest_grid=cfg.dest_grid,
            noise=cfg.noise,
            distractor_parts=cfg.distractor_parts,
            latents=latents,
            source_transform=a_src,
            dest_transform=a_dst,
            source_bias=b_src,
            dest_bias=b_dst,
            invisible_prob=cfg.invisible_frac,
        )
        pack, record = generate_pack(spec, rng)
        name = f"pack_{i:05d}.ommp"
        write_pack_file(pack, out / name)
        record.path = name
        names.append(name)
        records.append(record)

    manifest = write_manifest(out, names)
    sidecar = {
        "objects": cfg.objects,
        "dim": cfg.dim,
        "noise": cfg.noise,
        "distractor_parts": cfg.distractor_parts,
        "source_grid": list(cfg.source_grid),
        "dest_grid": list(cfg.dest_grid),
        "view_transform": cfg.view_transform,
        "invisible_frac": cfg.invisible_frac,
        "seed": seed,
        "split": split,
        "packs": [
            {
                "path": r.path,
                "query": r.query_index,
                "visible": r.visible,
                "gt_index": r.gt_index,
                "candidates": [
                    {"object": c.object_index, "part": c.is_part} for c in r.candidates
                ],
            }
            for r in records
        ],
    }
    (out / SPEC_SIDECAR).write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return manifest, records
