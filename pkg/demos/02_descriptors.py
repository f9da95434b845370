"""Mask descriptors: object pooling and margin-extended context pooling.

Generates one synthetic scene and walks a candidate through the
encoder: x4 upsampling, object mean, context box, and the drop rule
for masks that vanish on the upsampled grid.
"""

import numpy as np

from maskmatch import encoder
from maskmatch.packio import MaskBitmap
from maskmatch.synthetic import generate_pack, make_scene_spec

rng = np.random.default_rng(3)
spec = make_scene_spec(4, 8, rng, source_grid=(16, 16), dest_grid=(16, 16), noise=0.2)
pack, record = generate_pack(spec, rng)

print(f"scene has {len(pack.candidates)} destination candidates, gt at {pack.gt_index}")

source, candidates, kept = encoder.encode_all(pack, margin=0.5)
print(f"encoded {len(candidates)} candidates (kept indices {kept})")
print("source object descriptor  :", np.round(source.object[:4], 3), "...")
print("source context descriptor :", np.round(source.context[:4], 3), "...")

# the context box extends the tight bbox by margin * max(side) per side
up = encoder.upsample_features(pack.dest_features)
mask_up = encoder.resample_mask(pack.candidates[pack.gt_index], up.shape[0], up.shape[1])
tight = encoder.tight_bbox(mask_up)
extended = encoder.extended_bbox(tight, 0.5, up.shape[0], up.shape[1])
print(f"gt tight box {tight} -> extended {extended}")

# pooling is an exact mean: a constant feature map pools to the constant
flat = encoder.object_descriptor(
    pack.candidates[pack.gt_index], np.full((16, 16, 8), 1.25)
)
print("constant map pools to:", flat[:3], "(exactly 1.25)")

# an empty-after-resample candidate would be dropped rather than zero-filled
empty = MaskBitmap.from_grid(np.zeros((64, 64), dtype=bool))
try:
    encoder.object_descriptor(empty, pack.dest_features)
except Exception as e:
    print("empty mask rejected:", type(e).__name__)
