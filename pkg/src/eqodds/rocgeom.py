"""Convex regions on the ROC plane: group hulls, their intersection, distances."""

from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

from .probcore import RocPoint

SNAP = 1e-12
BOUNDARY_SAMPLES = 256


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) <= SNAP else float(v)


def convex_hull(points: Iterable[Sequence[float]]) -> list[tuple[float, float]]:
    """Monotone-chain hull, counterclockwise, collinear points dropped.

    Returns one point for a single location and two for a segment.
    """
    pts = sorted({(_snap(float(p[0])), _snap(float(p[1]))) for p in points})
    pts = _dedupe(pts)
    if len(pts) <= 2:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= SNAP:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= SNAP:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        # all collinear: keep the two extreme points
        return [pts[0], pts[-1]]
    return hull


def _dedupe(pts, tol: float = 1e-12):
    out = []
    for p in pts:
        if not any(abs(p[0] - q[0]) <= tol and abs(p[1] - q[1]) <= tol for q in out):
            out.append(p)
    return out


class ConvexRegion:
    """Convex polygon (or degenerate segment/point) inside the unit square.

    Vertices are stored counterclockwise without repeats.
    """

    def __init__(self, vertices: Iterable[Sequence[float]]):
        verts = convex_hull(vertices)
        for v in verts:
            if not (-1e-9 <= v[0] <= 1 + 1e-9 and -1e-9 <= v[1] <= 1 + 1e-9):
                raise ValueError(f"vertex {v} lies outside the unit square")
        self.vertices: tuple[tuple[float, float], ...] = tuple(verts)

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    @property
    def is_degenerate(self) -> bool:
        return len(self.vertices) < 3

    def area(self) -> float:
        v = self.vertices
        if len(v) < 3:
            return 0.0
        return 0.5 * sum(v[i][0] * v[(i + 1) % len(v)][1] - v[(i + 1) % len(v)][0] * v[i][1]
                         for i in range(len(v)))

    def edges(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        v = self.vertices
        if len(v) == 0:
            return []
        if len(v) == 1:
            return [(v[0], v[0])]
        if len(v) == 2:
            return [(v[0], v[1])]
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def boundary_samples(self, count: int = BOUNDARY_SAMPLES) -> np.ndarray:
        """Points spaced evenly by arc length along the boundary, vertices included."""
        edges = self.edges()
        if not edges:
            return np.zeros((0, 2))
        lengths = np.array([math.dist(p, q) for p, q in edges])
        total = lengths.sum()
        pts = [np.array(p) for p, _ in edges]
        if total == 0:
            return np.array(pts[:1])
        ts = np.linspace(0.0, total, count, endpoint=False)
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        for t in ts:
            k = min(np.searchsorted(cum, t, side="right") - 1, len(edges) - 1)
            p, q = edges[k]
            frac = 0.0 if lengths[k] == 0 else (t - cum[k]) / lengths[k]
            pts.append(np.array(p) + frac * (np.array(q) - np.array(p)))
        return np.array(pts)

    def to_text(self) -> str:
        return "\n".join(f"{x:.12g} {y:.12g}" for x, y in self.vertices) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConvexRegion":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        return cls([(float(r[0]), float(r[1])) for r in rows])

    def __eq__(self, other) -> bool:
        return isinstance(other, ConvexRegion) and self.vertices == other.vertices

    def __repr__(self) -> str:
        return f"ConvexRegion({list(self.vertices)})"


UNIT_SQUARE = ConvexRegion([(0, 0), (1, 0), (1, 1), (0, 1)])


def group_hull(gamma: RocPoint) -> ConvexRegion:
    """Hull of ``(0,0)``, ``gamma``, its flip and ``(1,1)``."""
    g = (float(gamma[0]), float(gamma[1]))
    if not (-SNAP <= g[0] <= 1 + SNAP and -SNAP <= g[1] <= 1 + SNAP):
        raise ValueError(f"rate point {g} outside the unit square")
    # rates summed in floating point can overshoot the square by an ulp
    g = (min(max(g[0], 0.0), 1.0), min(max(g[1], 0.0), 1.0))
    return ConvexRegion([(0.0, 0.0), g, (1 - g[0], 1 - g[1]), (1.0, 1.0)])


def clip_halfplane(poly: list, a: float, b: float, c: float) -> list:
    """Keep the part of a convex polygon where ``a*x + b*y <= c``.

    Polygons with fewer than three vertices (segments, points) are handled
    by the same edge walk.
    """
    if not poly:
        return []
    if len(poly) == 1:
        p = poly[0]
        return [p] if a * p[0] + b * p[1] - c <= SNAP else []
    closed = poly if len(poly) > 2 else [poly[0], poly[1]]
    out = []
    m = len(closed)
    for i in range(m):
        p = closed[i]
        q = closed[(i + 1) % m]
        fp = a * p[0] + b * p[1] - c
        fq = a * q[0] + b * q[1] - c
        if fp <= SNAP:
            out.append(p)
        if (fp < -SNAP and fq > SNAP) or (fp > SNAP and fq < -SNAP):
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def intersect(r1: ConvexRegion, r2: ConvexRegion) -> ConvexRegion:
    """Intersection of two convex regions by clipping against r2's edge half-planes."""
    poly = list(r1.vertices)
    v = r2.vertices
    if len(v) >= 3:
        for i in range(len(v)):
            p, q = v[i], v[(i + 1) % len(v)]
            # left side of p->q (counterclockwise interior): cross >= 0
            a, b = q[1] - p[1], -(q[0] - p[0])
            poly = clip_halfplane(poly, a, b, a * p[0] + b * p[1])
    elif len(v) == 2:
        p, q = v
        a, b = q[1] - p[1], -(q[0] - p[0])
        c = a * p[0] + b * p[1]
        poly = clip_halfplane(poly, a, b, c)
        poly = clip_halfplane(poly, -a, -b, -c)
        # bound along the segment direction
        dx, dy = q[0] - p[0], q[1] - p[1]
        poly = clip_halfplane(poly, -dx, -dy, -(dx * p[0] + dy * p[1]))
        poly = clip_halfplane(poly, dx, dy, dx * q[0] + dy * q[1])
    elif len(v) == 1:
        poly = [v[0]] if region_contains(r1, RocPoint(*v[0]), 1e-9) else []
    else:
        poly = []
    return ConvexRegion(poly)


def feasible_area_post(rates: Mapping[int, RocPoint]) -> ConvexRegion:
    """Intersection of all group hulls: rate points reachable by post-processing under EO."""
    if not rates:
        raise ValueError("need at least one group")
    region = None
    for gamma in rates.values():
        hull = group_hull(gamma)
        region = hull if region is None else intersect(region, hull)
    return region


def nontriviality_margin(rates: Mapping[int, RocPoint]) -> float:
    """Smallest distance ``|tpr - fpr|`` of any group from the diagonal."""
    if not rates:
        raise ValueError("need at least one group")
    return min(abs(r.tpr - r.fpr) for r in rates.values())


def _point_segment_distance(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0:
        return math.dist(p, a)
    t = max(0.0, min(1.0, ((p[0] - ax) * dx + (p[1] - ay) * dy) / denom))
    return math.dist(p, (ax + t * dx, ay + t * dy))


def region_contains(r: ConvexRegion, p, tol: float = 1e-9) -> bool:
    """Point-in-convex-region test; points within ``tol`` of the region count as inside."""
    return distance_to_region(r, p) <= tol


def distance_to_region(r: ConvexRegion, p) -> float:
    v = r.vertices
    if not v:
        return math.inf
    if len(v) >= 3:
        inside = all(_cross(v[i], v[(i + 1) % len(v)], p) >= 0 for i in range(len(v)))
        if inside:
            return 0.0
    return min(_point_segment_distance(p, a, b) for a, b in r.edges())


def region_hausdorff(r1: ConvexRegion, r2: ConvexRegion,
                     samples: int = BOUNDARY_SAMPLES) -> float:
    """Symmetric Hausdorff distance between two convex regions.

    For convex sets the farthest point of one set from the other lies on its
    boundary, so each boundary is sampled and measured against the other set
    exactly.
    """
    if r1.is_empty or r2.is_empty:
        return 0.0 if r1.is_empty and r2.is_empty else math.inf
    d12 = max(distance_to_region(r2, p) for p in r1.boundary_samples(samples))
    d21 = max(distance_to_region(r1, p) for p in r2.boundary_samples(samples))
    return max(d12, d21)


def contains_region(outer: ConvexRegion, inner: ConvexRegion, tol: float = 1e-6) -> bool:
    """Vertex containment of ``inner`` in ``outer`` (sufficient for convex sets)."""
    return all(region_contains(outer, v, tol) for v in inner.vertices)


def contains_diagonal(r: ConvexRegion, tol: float = 1e-9) -> bool:
    return region_contains(r, (0.0, 0.0), tol) and region_contains(r, (1.0, 1.0), tol)


def region_from_chains(fprs: Sequence[float], lower: Sequence[float],
                       upper: Sequence[float]) -> ConvexRegion:
    """Polygon from lower and upper tpr envelopes sampled at common fpr values."""
    pts = [(f, lo) for f, lo in zip(fprs, lower)] + [(f, hi) for f, hi in zip(fprs, upper)]
    return ConvexRegion(pts)


def svg_path(r: ConvexRegion, scale: float = 1.0, x0: float = 0.0, y0: float = 0.0) -> str:
    """SVG path data with the ROC y axis pointing up (origin at ``(x0, y0)``)."""
    if r.is_empty:
        return ""
    cmds = []
    for i, (fx, ty) in enumerate(r.vertices):
        cmds.append(f"{'M' if i == 0 else 'L'}{x0 + fx * scale:.3f},{y0 - ty * scale:.3f}")
    if len(r.vertices) >= 3:
        cmds.append("Z")
    return " ".join(cmds)
