"""Hard-negative mining over a Delaunay graph of candidate mask centroids.

Candidates that are spatial neighbors share surrounding context, which
makes them the informative negatives for contrastive training.  The
graph connects centroids by Delaunay triangulation; the hard set for a
node is its first and second graph neighborhood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError, NoNegativesError, ParameterError
from .packio import MaskBitmap

COINCIDENT_EPS = 1e-6

ADJACENT = "adjacent"
RANDOM_FILL = "random_fill"
DUPLICATE = "duplicate"


@dataclass
class AdjacencyGraph:
    n: int
    adjacency: np.ndarray  # symmetric bool n x n, zero diagonal
    centroids: list[tuple[float, float]]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]


@dataclass
class NegativeBatch:
    positive_index: int
    negative_indices: list[int]
    provenance: list[str]


def mask_centroid(mask: MaskBitmap) -> tuple[float, float]:
    """Mean (x, y) of foreground pixel centers, at integer pixel coordinates."""
    grid = mask.decode()
    ys, xs = np.nonzero(grid)
    if ys.size == 0:
        raise EmptyMaskError("cannot take the centroid of an empty mask")
    return float(xs.mean()), float(ys.mean())


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _in_circumcircle(a, b, c, p) -> bool:
    """True when p lies strictly inside the circumcircle of triangle abc."""
    ax, ay = a[0] - p[0], a[1] - p[1]
    bx, by = b[0] - p[0], b[1] - p[1]
    cx, cy = c[0] - p[0], c[1] - p[1]
    det = (
        (ax * ax + ay * ay) * (bx * cy - cx * by)
        - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay)
    )
    if _orient(a, b, c) < 0:
        det = -det
    return det > 0.0


def _bowyer_watson(points: list[tuple[float, float]]) -> set[tuple[int, int]]:
    """Delaunay edge set for >= 3 non-collinear points.

    Points are inserted in lexicographic order, which also settles
    cocircular ties deterministically.
    """
    n = len(points)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    cx, cy = (min(xs) + max(xs)) / 2.0, (min(ys) + max(ys)) / 2.0
    span = max(max(xs) - min(xs), max(ys) - min(ys), 1.0)
    m = 1e6 * span
    verts = list(points) + [(cx - 2.0 * m, cy - m), (cx + 2.0 * m, cy - m), (cx, cy + 2.0 * m)]
    s0, s1, s2 = n, n + 1, n + 2

    triangles = {(s0, s1, s2)}
    order = sorted(range(n), key=lambda i: points[i])
    for p in order:
        pt = verts[p]
        bad = [t for t in triangles if _in_circumcircle(verts[t[0]], verts[t[1]], verts[t[2]], pt)]
        edge_count: dict[tuple[int, int], int] = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
                key = (min(e), max(e))
                edge_count[key] = edge_count.get(key, 0) + 1
        triangles.difference_update(bad)
        for (u, v), count in edge_count.items():
            if count == 1:
                triangles.add(tuple(sorted((p, u, v))))

    edges = set()
    for t in triangles:
        if any(v >= n for v in t):
            continue
        for e in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
            edges.add((min(e), max(e)))
    return edges


def _all_collinear(points) -> bool:
    if len(points) < 3:
        return True
    a = points[0]
    b = next((p for p in points[1:] if p != a), None)
    if b is None:
        return True
    span = max(abs(b[0] - a[0]), abs(b[1] - a[1]), 1.0)
    return all(abs(_orient(a, b, c)) <= 1e-12 * span * span for c in points)


def delaunay_adjacency(centroids) -> AdjacencyGraph:
    """Adjacency graph of centroid Delaunay edges.

    Fewer than 3 points, or all-collinear points, fall back to the
    complete graph.  Coincident centroids are nudged apart by
    index * COINCIDENT_EPS before triangulating.
    """
    points = [(float(x), float(y)) for x, y in centroids]
    n = len(points)
    if n < 1:
        raise ParameterError("delaunay_adjacency: need at least one centroid")
    adjacency = np.zeros((n, n), dtype=bool)

    seen: set[tuple[float, float]] = set()
    for i, p in enumerate(points):
        if p in seen:
            points[i] = (p[0] + i * COINCIDENT_EPS, p[1] + i * COINCIDENT_EPS)
        seen.add(points[i])

    if n <= 2 or _all_collinear(points):
        adjacency[:] = True
        np.fill_diagonal(adjacency, False)
    else:
        for u, v in _bowyer_watson(points):
            adjacency[u, v] = True
            adjacency[v, u] = True
    return AdjacencyGraph(n=n, adjacency=adjacency, centroids=[(x, y) for x, y in centroids])


def hard_negative_set(graph: AdjacencyGraph, n: int) -> set[int]:
    """Nodes at graph distance 1 or 2 from node n, excluding n."""
    if not 0 <= n < graph.n:
        raise ParameterError(f"node {n} out of range for graph of {graph.n}")
    first = set(graph.neighbors(n))
    second = set()
    for j in first:
        second.update(graph.neighbors(j))
    result = first | second
    result.discard(n)
    return result


def build_negative_batch(
    candidates: int,
    gt: int,
    hard: set[int],
    batch: int,
    rng: np.random.Generator,
) -> NegativeBatch:
    """Pick batch-1 negative candidate indices for one positive.

    Hard negatives are used first (random subset if oversupplied), then
    uniform random non-hard candidates, then duplicates of the already
    selected negatives cycled in selection order.
    """
    if candidates < 1:
        raise ParameterError("need at least one candidate")
    if not 0 <= gt < candidates:
        raise ParameterError(f"gt index {gt} out of range for {candidates} candidates")
    if batch < 2:
        raise ParameterError(f"batch size must be >= 2, got {batch}")
    if candidates == 1:
        raise NoNegativesError("single-candidate sample has no usable negatives")

    need = batch - 1
    hard_pool = sorted(set(hard) - {gt})
    selected: list[int]
    if len(hard_pool) > need:
        picks = rng.choice(len(hard_pool), size=need, replace=False)
        selected = [hard_pool[int(i)] for i in picks]
        provenance = [ADJACENT] * need
    else:
        selected = list(hard_pool)
        provenance = [ADJACENT] * len(selected)
        rest = [i for i in range(candidates) if i != gt and i not in set(hard_pool)]
        fill = min(need - len(selected), len(rest))
        if fill > 0:
            picks = rng.choice(len(rest), size=fill, replace=False)
            selected.extend(rest[int(i)] for i in picks)
            provenance.extend([RANDOM_FILL] * fill)
        base = len(selected)
        k = 0
        while len(selected) < need:
            selected.append(selected[k % base])
            provenance.append(DUPLICATE)
            k += 1
    return NegativeBatch(positive_index=gt, negative_indices=selected, provenance=provenance)
