"""Planar polygon utilities: validation, triangulation, quadrature, star metrics.

Everything downstream (element matrices, error norms) reduces to integrals
over simple polygons, so this module owns the geometric predicates and the
fixed-degree triangle quadrature rules used to evaluate them.  Polygons are
oriented counter-clockwise; edges may be arbitrarily short relative to the
diameter, and consecutive collinear vertices (hanging nodes) are legal.
"""

from __future__ import annotations

from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "Point2",
    "Polygon",
    "TriQuadRule",
    "QUAD_RULES",
    "area_centroid",
    "triangulate",
    "polygon_quadrature",
    "integrate",
    "StarMetric",
    "star_metric",
]

# Relative tolerance for "zero" cross products / areas, scaled by diam^2.
_AREA_EPS = 1e-14


class Point2(NamedTuple):
    """A point in the plane."""

    x: float
    y: float


class TriQuadRule(NamedTuple):
    """Symmetric quadrature rule on the reference triangle.

    Attributes
    ----------
    degree : int
        Highest polynomial degree integrated exactly.
    bary : ndarray, shape (npts, 3)
        Barycentric coordinates of the nodes.
    weights : ndarray, shape (npts,)
        Weights normalized to sum to 1 (i.e. relative to the triangle area).
    """

    degree: int
    bary: np.ndarray
    weights: np.ndarray


def _orbit3(a: float, b: float) -> list[tuple[float, float, float]]:
    # orbit of (a, b, b) under coordinate permutations
    return [(a, b, b), (b, a, b), (b, b, a)]


def _orbit6(a: float, b: float, c: float) -> list[tuple[float, float, float]]:
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _make_rule(degree: int, groups) -> TriQuadRule:
    bary = []
    weights = []
    for pts, w in groups:
        bary.extend(pts)
        weights.extend([w] * len(pts))
    return TriQuadRule(degree, np.array(bary, dtype=float), np.array(weights, dtype=float))


# Classical symmetric Gauss rules on the triangle (Strang-Fix degree 2,
# Dunavant degrees 4 and 6).  Weights sum to 1.
QUAD_RULES: dict[int, TriQuadRule] = {
    2: _make_rule(2, [(_orbit3(2.0 / 3.0, 1.0 / 6.0), 1.0 / 3.0)]),
    4: _make_rule(
        4,
        [
            (_orbit3(0.108103018168070, 0.445948490915965), 0.223381589678011),
            (_orbit3(0.816847572980459, 0.091576213509771), 0.109951743655322),
        ],
    ),
    6: _make_rule(
        6,
        [
            (_orbit3(0.501426509658179, 0.249286745170910), 0.116786275726379),
            (_orbit3(0.873821971016996, 0.063089014491502), 0.050844906370207),
            (
                _orbit6(0.053145049844816, 0.310352451033785, 0.636502499121399),
                0.082851075618374,
            ),
        ],
    ),
}


def _shoelace(v: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed area and centroid of the polygon with vertex array v."""
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area2 = cross.sum()
    if area2 == 0.0:
        return 0.0, v.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (3.0 * area2)
    cy = ((y + yn) * cross).sum() / (3.0 * area2)
    return 0.5 * area2, np.array([cx, cy])


def _segments_cross(p1, p2, p3, p4, eps: float) -> bool:
    """True if segments (p1,p2) and (p3,p4) intersect (touching counts)."""
    d21 = p2 - p1
    d43 = p4 - p3
    d1 = d43[0] * (p1[1] - p3[1]) - d43[1] * (p1[0] - p3[0])
    d2 = d43[0] * (p2[1] - p3[1]) - d43[1] * (p2[0] - p3[0])
    d3 = d21[0] * (p3[1] - p1[1]) - d21[1] * (p3[0] - p1[0])
    d4 = d21[0] * (p4[1] - p1[1]) - d21[1] * (p4[0] - p1[0])
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and (
        (d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)
    ):
        return True
    # collinear / touching configurations: fall back to bounding-box overlap
    for d, a, b, p in ((d1, p3, p4, p1), (d2, p3, p4, p2), (d3, p1, p2, p3), (d4, p1, p2, p4)):
        if abs(d) <= eps:
            lo = np.minimum(a, b)
            hi = np.maximum(a, b)
            if np.all(p >= lo - eps) and np.all(p <= hi + eps):
                return True
    return False


class Polygon:
    """A simple, counter-clockwise oriented polygon.

    Parameters
    ----------
    vertices : array_like, shape (n, 2)
        Vertex coordinates in order.  n >= 3.  Consecutive vertices must be
        distinct; edges may otherwise be arbitrarily short.  Consecutive
        collinear vertices are allowed (hanging nodes).
    validate : bool
        Run the simplicity and orientation checks (default).  Skipping is
        only safe for polygons that already passed validation once.

    Raises
    ------
    ValueError
        If the polygon has fewer than 3 vertices, non-finite or duplicate
        consecutive vertices, self-intersections, zero area, or clockwise
        orientation.
    """

    def __init__(self, vertices, validate: bool = True):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError(f"vertex array must have shape (n, 2), got {v.shape}")
        if v.shape[0] < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon has non-finite vertex coordinates")
        self.vertices = v
        if validate:
            self._validate()

    def _validate(self) -> None:
        v = self.vertices
        n = len(v)
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        if np.any(lengths == 0.0):
            k = int(np.argmin(lengths))
            raise ValueError(f"duplicate consecutive vertices at position {k}")
        diam = self.diameter
        eps = _AREA_EPS * diam * diam
        # simplicity: no two non-adjacent edges may intersect
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n], eps):
                    raise ValueError(f"polygon is not simple: edges {i} and {j} intersect")
        area, _ = _shoelace(v)
        if abs(area) <= eps:
            raise ValueError("polygon is degenerate (zero area)")
        if area < 0.0:
            raise ValueError("polygon is clockwise; vertices must be counter-clockwise")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def diameter(self) -> float:
        """Largest pairwise vertex distance."""
        v = self.vertices
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d * d).sum(axis=2)).max())

    @cached_property
    def _area_centroid(self) -> tuple[float, np.ndarray]:
        return _shoelace(self.vertices)

    @property
    def area(self) -> float:
        return self._area_centroid[0]

    @property
    def centroid(self) -> Point2:
        c = self._area_centroid[1]
        return Point2(float(c[0]), float(c[1]))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = np.roll(self.vertices, -1, axis=0) - self.vertices
        return np.hypot(e[:, 0], e[:, 1])

    @property
    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())

    def __repr__(self) -> str:
        return f"Polygon(n={self.n_vertices}, area={self.area:.6g})"


def area_centroid(poly) -> tuple[float, Point2]:
    """Signed area and area centroid of a polygon.

    Parameters
    ----------
    poly : Polygon or array_like
        Polygon or raw (n, 2) vertex array (taken as-is, no validation).

    Returns
    -------
    area : float
        Signed area (positive for counter-clockwise input).
    centroid : Point2
    """
    if isinstance(poly, Polygon):
        return poly.area, poly.centroid
    a, c = _shoelace(np.asarray(poly, dtype=float))
    return a, Point2(float(c[0]), float(c[1]))


def _as_polygon(poly) -> Polygon:
    return poly if isinstance(poly, Polygon) else Polygon(poly)


def triangulate(poly) -> list[np.ndarray]:
    """Split a polygon into triangles.

    Uses a centroid fan when the polygon is star-shaped with respect to its
    centroid (the common case for mesh cells, including cells with hanging
    nodes), and falls back to ear clipping otherwise.

    Returns
    -------
    list of ndarray, shape (3, 2)
        Triangles whose signed areas sum to the polygon area.
    """
    p = _as_polygon(poly)
    v = p.vertices
    n = len(v)
    c = np.asarray(p.centroid)
    tol = _AREA_EPS * p.diameter ** 2
    e = np.roll(v, -1, axis=0) - v
    r = c[None, :] - v
    cross = e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]
    if np.all(cross >= -tol):
        return [np.array([v[i], v[(i + 1) % n], c]) for i in range(n)]
    return _ear_clip(v, tol)


def _point_in_triangle_strict(q, a, b, c, eps: float) -> bool:
    d1 = (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])
    d2 = (c[0] - b[0]) * (q[1] - b[1]) - (c[1] - b[1]) * (q[0] - b[0])
    d3 = (a[0] - c[0]) * (q[1] - c[1]) - (a[1] - c[1]) * (q[0] - c[0])
    return d1 > eps and d2 > eps and d3 > eps


def _ear_clip(v: np.ndarray, tol: float) -> list[np.ndarray]:
    idx = list(range(len(v)))
    tris: list[np.ndarray] = []
    while len(idx) > 3:
        n = len(idx)
        for k in range(n):
            ip, ic, inx = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            a, b, c = v[ip], v[ic], v[inx]
            a2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if a2 < -tol:
                continue  # reflex corner
            if abs(a2) <= tol:
                # collinear corner: zero-area sliver, drop the vertex
                idx.pop(k)
                break
            if any(
                _point_in_triangle_strict(v[j], a, b, c, -tol)
                for j in idx
                if j not in (ip, ic, inx)
            ):
                continue
            tris.append(np.array([a, b, c]))
            idx.pop(k)
            break
        else:
            raise ValueError("ear clipping failed; polygon is not simple")
    tris.append(np.array([v[idx[0]], v[idx[1]], v[idx[2]]]))
    return tris


def polygon_quadrature(poly, degree: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature nodes and weights for a polygon.

    The polygon is triangulated and the degree-matched triangle rule is
    mapped to each piece.  Weights carry the (signed) triangle areas, so
    ``w @ g(x, y)`` integrates g over the polygon.

    Parameters
    ----------
    poly : Polygon or array_like
    degree : int
        One of the supported rule degrees (2, 4, 6).

    Returns
    -------
    x, y, w : ndarray
    """
    try:
        rule = QUAD_RULES[degree]
    except KeyError:
        raise ValueError(
            f"unsupported quadrature degree {degree}; available: {sorted(QUAD_RULES)}"
        ) from None
    xs, ys, ws = [], [], []
    for tri in triangulate(poly):
        pts = rule.bary @ tri
        a2 = (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (
            tri[1, 1] - tri[0, 1]
        ) * (tri[2, 0] - tri[0, 0])
        xs.append(pts[:, 0])
        ys.append(pts[:, 1])
        ws.append(rule.weights * (0.5 * a2))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(ws)


def integrate(poly, g: Callable, degree: int) -> float:
    """Integrate a scalar field over a polygon.

    Parameters
    ----------
    poly : Polygon or array_like
    g : callable
        Field g(x, y) accepting ndarray arguments; scalar returns broadcast.
    degree : int
        Polynomial degree integrated exactly (2, 4 or 6).
    """
    x, y, w = polygon_quadrature(poly, degree)
    vals = np.broadcast_to(np.asarray(g(x, y), dtype=float), x.shape)
    return float(w @ vals)


class StarMetric(NamedTuple):
    """Star-shapedness report for a polygon.

    ``rho`` is the radius of the largest ball the polygon is star-shaped
    with respect to, divided by the polygon diameter.
    """

    is_star: bool
    center: Point2 | None
    rho: float


def star_metric(poly) -> StarMetric:
    """Kernel-based star-shapedness metric.

    The kernel is the intersection of the half-planes to the left of each
    (counter-clockwise) edge.  Its Chebyshev center, the center of the
    largest inscribed ball, is found by linear programming over exactly
    those half-plane constraints; an infeasible program means an empty
    kernel.

    Returns
    -------
    StarMetric
        ``is_star`` is False (with center None, rho 0) when the kernel is
        empty.  A degenerate kernel yields is_star True with rho ~ 0.
    """
    p = _as_polygon(poly)
    v = p.vertices
    e = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(e[:, 0], e[:, 1])
    # inward unit normal of edge i is (-e_y, e_x)/|e|; the ball (c, r) fits
    # iff m.c - r >= m.v_i for each edge, i.e. -m.c + r <= -m.v_i
    m = np.column_stack([-e[:, 1], e[:, 0]]) / lengths[:, None]
    a_ub = np.column_stack([-m, np.ones(len(v))])
    b_ub = -(m * v).sum(axis=1)
    diam = p.diameter
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=[(lo[0], hi[0]), (lo[1], hi[1]), (0.0, diam)],
        method="highs",
    )
    if not res.success:
        return StarMetric(False, None, 0.0)
    cx, cy, r = res.x
    return StarMetric(True, Point2(float(cx), float(cy)), float(r) / diam)
