"""Mask and context descriptors pooled from upsampled feature maps.

Feature maps are bilinearly upsampled x4 before pooling so that small
masks keep fine-grained support.  Masks live on the image grid and are
nearest-neighbor resampled onto the upsampled grid (binary masks, so no
fractional membership).  Pooled sums accumulate in float64 in row-major
pixel order, which makes descriptors bit-reproducible regardless of how
the work is split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric
from .errors import EmptyMaskError, ParameterError
from .packio import FeaturePack, MaskBitmap

UPSAMPLE_FACTOR = 4
DEFAULT_CONTEXT_MARGIN = 0.5


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel bounds on the upsampled grid."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 <= self.x1 and 0 <= self.y0 <= self.y1):
            raise ParameterError(f"degenerate bbox {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1


@dataclass
class MaskDescriptor:
    """Object and context pooled vectors plus the attention-refined vector."""

    object: np.ndarray
    context: np.ndarray
    cross_view: "numeric.Tensor | None" = None


def upsample_features(features: np.ndarray) -> np.ndarray:
    """The shared x4 bilinear upsampling applied before any pooling."""
    return numeric.bilinear_upsample(features, UPSAMPLE_FACTOR).data


def resample_mask(mask: MaskBitmap, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resampling of a binary mask to the given grid."""
    grid = mask.decode()
    h, w = grid.shape
    if (h, w) == (out_h, out_w):
        return grid
    # integer-exact nearest pixel: floor((i + 0.5) * h / out_h)
    ys = np.minimum((2 * np.arange(out_h) + 1) * h // (2 * out_h), h - 1)
    xs = np.minimum((2 * np.arange(out_w) + 1) * w // (2 * out_w), w - 1)
    return grid[np.ix_(ys, xs)]


def _sequential_mean(rows: np.ndarray) -> np.ndarray:
    # cumsum is a running left-to-right reduction, so this matches a scalar
    # row-major accumulation loop bit for bit
    return np.cumsum(rows, axis=0)[-1] / rows.shape[0]


def _pool_mask(up: np.ndarray, mask_up: np.ndarray) -> np.ndarray:
    if not mask_up.any():
        raise EmptyMaskError("mask has no foreground on the upsampled grid")
    return _sequential_mean(up[mask_up])


def tight_bbox(mask_up: np.ndarray) -> BBox:
    ys, xs = np.nonzero(mask_up)
    if ys.size == 0:
        raise EmptyMaskError("mask has no foreground on the upsampled grid")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def extended_bbox(box: BBox, margin: float, grid_h: int, grid_w: int) -> BBox:
    """Pad the box by margin * max(side) on every side, clamped to the grid."""
    pad = int(np.floor(margin * max(box.width, box.height) + 0.5))
    return BBox(
        max(0, box.x0 - pad),
        max(0, box.y0 - pad),
        min(grid_w - 1, box.x1 + pad),
        min(grid_h - 1, box.y1 + pad),
    )


def _pool_box(up: np.ndarray, box: BBox) -> np.ndarray:
    region = up[box.y0 : box.y1 + 1, box.x0 : box.x1 + 1]
    return _sequential_mean(region.reshape(-1, up.shape[2]))


def object_descriptor(mask: MaskBitmap, features: np.ndarray) -> np.ndarray:
    """Mean upsampled feature vector over the mask's foreground pixels."""
    up = upsample_features(features)
    mask_up = resample_mask(mask, up.shape[0], up.shape[1])
    return _pool_mask(up, mask_up)


def context_descriptor(
    mask: MaskBitmap, features: np.ndarray, margin: float = DEFAULT_CONTEXT_MARGIN
) -> np.ndarray:
    """Mean feature vector over the mask's extended bounding box."""
    if margin < 0:
        raise ParameterError(f"context margin must be >= 0, got {margin}")
    up = upsample_features(features)
    mask_up = resample_mask(mask, up.shape[0], up.shape[1])
    box = extended_bbox(tight_bbox(mask_up), margin, up.shape[0], up.shape[1])
    return _pool_box(up, box)


def _describe(up: np.ndarray, mask: MaskBitmap, margin: float) -> MaskDescriptor:
    mask_up = resample_mask(mask, up.shape[0], up.shape[1])
    obj = _pool_mask(up, mask_up)
    box = extended_bbox(tight_bbox(mask_up), margin, up.shape[0], up.shape[1])
    return MaskDescriptor(object=obj, context=_pool_box(up, box))


def encode_all(
    pack: FeaturePack, margin: float = DEFAULT_CONTEXT_MARGIN
) -> tuple[MaskDescriptor, list[MaskDescriptor], list[int]]:
    """Descriptors for the source mask and every usable candidate.

    Candidates that are empty after resampling to the upsampled grid are
    dropped; ``kept_indices`` maps the returned descriptors back to the
    pack's candidate indices.  An empty source mask raises
    :class:`EmptyMaskError`, which callers treat as a skipped sample.

    The ``cross_view`` fields are left unset.
    """
    if margin < 0:
        raise ParameterError(f"context margin must be >= 0, got {margin}")
    up_src = upsample_features(pack.source_features)
    up_dst = upsample_features(pack.dest_features)
    source = _describe(up_src, pack.source_mask, margin)
    candidates = []
    kept = []
    for i, mask in enumerate(pack.candidates):
        try:
            candidates.append(_describe(up_dst, mask, margin))
        except EmptyMaskError:
            continue
        kept.append(i)
    return source, candidates, kept
