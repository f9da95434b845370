"""Hard-negative mining: Delaunay adjacency over candidate centroids.

Triangulates the candidates of a synthetic scene, prints the graph,
and builds a contrastive negative batch around the ground truth with
its provenance (adjacent / random fill / duplicate).
"""

import numpy as np

from maskmatch.mining import (
    build_negative_batch,
    delaunay_adjacency,
    hard_negative_set,
    mask_centroid,
)
from maskmatch.synthetic import generate_pack, make_scene_spec

rng = np.random.default_rng(11)
spec = make_scene_spec(5, 8, rng, source_grid=(20, 20), dest_grid=(20, 20), distractor_parts=1)
pack, record = generate_pack(spec, rng)

centroids = [mask_centroid(m) for m in pack.candidates]
graph = delaunay_adjacency(centroids)
print(f"{graph.n} candidates, centroids (x, y):")
for i, (x, y) in enumerate(centroids):
    mark = " <- ground truth" if i == pack.gt_index else ""
    print(f"  {i}: ({x:5.1f}, {y:5.1f}) neighbors {graph.neighbors(i)}{mark}")

hard = hard_negative_set(graph, pack.gt_index)
print(f"\nhard negatives of gt (distance <= 2): {sorted(hard)}")

batch = build_negative_batch(
    candidates=graph.n,
    gt=pack.gt_index,
    hard=hard,
    batch=6,
    rng=np.random.default_rng(0),
)
print("negative batch:", batch.negative_indices)
print("provenance:    ", batch.provenance)

# two-point and collinear inputs fall back to the complete graph
tiny = delaunay_adjacency([(0.0, 0.0), (5.0, 5.0)])
print("\n2-point fallback edge count:", int(tiny.adjacency.sum()) // 2)
line = delaunay_adjacency([(0, 0), (1, 1), (2, 2), (3, 3)])
print("collinear fallback is complete:", bool(line.adjacency.sum() == 4 * 3))
