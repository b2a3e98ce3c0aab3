"""Convex polygons, power diagrams restricted to a convex domain, and exact quadrature.

Power cells are built by clipping the domain with the half-planes

    <x, y_i - y_j> >= h_j - h_i,   j != i,

which is the region where the affine piece ``<x, y_i> + h_i`` of the
potential ``u_h(x) = max_i <x, y_i> + h_i`` is the largest.  Clipping runs in a
normalized frame (domain translated to its vertex mean and scaled to unit
diameter) so that the absolute tolerance ``EPS_GEOM`` is meaningful for any
input scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError

EPS_GEOM = 1e-12

# Edge-midpoint rule on a triangle: exact for polynomials of degree <= 2.
_MIDPOINT_WEIGHT = 1.0 / 3.0


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Counterclockwise convex polygon with positive area.

    Parameters
    ----------
    vertices : array_like, shape (m, 2)
        Vertices in counterclockwise order, m >= 3, no repeats.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise InvalidInputError("polygon needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("polygon vertices must be finite")
        diam = _diameter(v)
        if diam <= 0:
            raise InvalidInputError("polygon is degenerate")
        edges = np.roll(v, -1, axis=0) - v
        if np.any(np.linalg.norm(edges, axis=1) <= EPS_GEOM * diam):
            raise InvalidInputError("polygon has repeated vertices")
        area = _signed_area(v)
        if area <= EPS_GEOM * diam * diam:
            raise InvalidInputError("polygon must be counterclockwise with positive area")
        turns = _cross2(edges, np.roll(edges, -1, axis=0))
        if np.any(turns < -EPS_GEOM * diam * diam):
            raise InvalidInputError("polygon is not convex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def square(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> "ConvexPolygon":
        """Axis-aligned rectangle ``[xmin, xmax] x [ymin, ymax]``."""
        return cls([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])

    @classmethod
    def disk(cls, center=(0.0, 0.0), radius: float = 1.0, segments: int = 256) -> "ConvexPolygon":
        """Regular ``segments``-gon inscribed in the given circle."""
        if segments < 3:
            raise InvalidInputError("a disk needs at least 3 segments")
        if not radius > 0:
            raise InvalidInputError("disk radius must be positive")
        t = 2.0 * np.pi * np.arange(segments) / segments
        pts = np.column_stack([np.cos(t), np.sin(t)]) * radius + np.asarray(center, float)
        return cls(pts)

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        area, first, _ = _fan_moments(self.vertices)
        return first / area

    @property
    def diameter(self) -> float:
        return _diameter(self.vertices)

    def contains(self, points, tol: float = EPS_GEOM) -> np.ndarray:
        """Boolean mask of points inside the polygon, boundary included.

        ``tol`` is relative to the polygon diameter.
        """
        p = np.atleast_2d(np.asarray(points, float))
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        length = np.linalg.norm(e, axis=1)
        # signed distance to each edge line, positive inside
        d = (e[:, 0] * (p[:, None, 1] - v[:, 1]) - e[:, 1] * (p[:, None, 0] - v[:, 0])) / length
        return np.all(d >= -tol * self.diameter, axis=1)


def _diameter(v: np.ndarray) -> float:
    d = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((d * d).sum(-1).max()))


# ---------------------------------------------------------------------------
# clipping


def _clip_labeled(V, labels, normal, offset, new_label, tol):
    """Clip a CCW polygon to ``{x : <normal, x> >= offset}`` keeping edge labels.

    ``labels[t]`` tags the edge from ``V[t]`` to ``V[t+1]``.  Edges created on the
    clip line get ``new_label``.  Returns ``(None, None)`` when the result is empty.
    """
    s = V @ normal - offset
    inside = s >= -tol
    if inside.all():
        return V, labels
    if not inside.any():
        return None, None
    m = len(V)
    out_v = []
    out_l = []
    for t in range(m):
        u = t + 1 if t + 1 < m else 0
        if inside[t]:
            out_v.append(V[t])
            out_l.append(labels[t])
            if not inside[u]:
                a = min(max(s[t] / (s[t] - s[u]), 0.0), 1.0)
                out_v.append(V[t] + a * (V[u] - V[t]))
                out_l.append(new_label)
        elif inside[u]:
            a = min(max(s[t] / (s[t] - s[u]), 0.0), 1.0)
            out_v.append(V[t] + a * (V[u] - V[t]))
            out_l.append(labels[t])
    return _dedupe(out_v, out_l, tol)


def _dedupe(vs, ls, tol):
    keep_v = [vs[0]]
    keep_l = [ls[0]]
    for v, l in zip(vs[1:], ls[1:]):
        d = v - keep_v[-1]
        if d[0] * d[0] + d[1] * d[1] <= tol * tol:
            # drop the repeated vertex, the surviving edge continues its successor
            keep_l[-1] = l
        else:
            keep_v.append(v)
            keep_l.append(l)
    while len(keep_v) > 1:
        d = keep_v[-1] - keep_v[0]
        if d[0] * d[0] + d[1] * d[1] > tol * tol:
            break
        keep_v.pop()
        keep_l.pop()
    if len(keep_v) < 3:
        return None, None
    V = np.array(keep_v)
    if _signed_area(V) <= tol * tol:
        return None, None
    return V, keep_l


def half_plane_clip(poly: ConvexPolygon, normal, offset: float) -> Optional[ConvexPolygon]:
    """Intersect ``poly`` with the half-plane ``{x : <normal, x> >= offset}``.

    Returns ``None`` when the intersection is empty or has no area.
    """
    n = np.asarray(normal, dtype=float)
    norm = float(np.linalg.norm(n))
    if not norm >= EPS_GEOM:
        raise InvalidInputError("clip normal is degenerate")
    diam = poly.diameter
    c = poly.vertices.mean(axis=0)
    V = (poly.vertices - c) / diam
    n_hat = n / norm
    off = (offset / norm - float(n_hat @ c)) / diam
    W, _ = _clip_labeled(V, [0] * len(V), n_hat, off, 0, EPS_GEOM)
    if W is None:
        return None
    try:
        return ConvexPolygon(W * diam + c)
    except InvalidInputError:
        return None


# ---------------------------------------------------------------------------
# quadrature


def _fan_moments(V: np.ndarray):
    """Area, first moment and ``int |x|^2`` of a convex polygon (unit density)."""
    o = V.mean(axis=0)
    W = V - o
    a = W[0]
    b = W[1:-1]
    c = W[2:]
    A = 0.5 * _cross2(b - a, c - a)
    area = float(A.sum())
    first_loc = (A[:, None] * (a + b + c)).sum(axis=0) / 3.0
    mab = 0.5 * (a + b)
    mbc = 0.5 * (b + c)
    mca = 0.5 * (c + a)
    sq = (mab * mab).sum(-1) + (mbc * mbc).sum(-1) + (mca * mca).sum(-1)
    second_loc = float((A * sq).sum()) * _MIDPOINT_WEIGHT
    first = area * o + first_loc
    second = area * float(o @ o) + 2.0 * float(o @ first_loc) + second_loc
    return area, first, second


def _fan_quadrature(V: np.ndarray, f: Callable[[np.ndarray], np.ndarray]) -> float:
    a = V[0]
    b = V[1:-1]
    c = V[2:]
    A = 0.5 * _cross2(b - a, c - a)
    mids = np.concatenate([0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)])
    vals = np.asarray(f(mids), dtype=float).reshape(3, -1)
    return float((A * vals.sum(axis=0)).sum()) * _MIDPOINT_WEIGHT


def _triangle_halfplanes(tri: np.ndarray):
    """Inward unit normals and offsets of a triangle's edges (any orientation)."""
    if _signed_area(tri) < 0:
        tri = tri[::-1]
    e = np.roll(tri, -1, axis=0) - tri
    n = np.column_stack([-e[:, 1], e[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    off = (n * tri).sum(axis=1)
    return n, off


def _clip_to_triangle(V, tri_planes, tol):
    labels = [0] * len(V)
    normals, offsets = tri_planes
    for n, off in zip(normals, offsets):
        V, labels = _clip_labeled(V, labels, n, off, 0, tol)
        if V is None:
            return None
    return V


def _pieces_in_frame(density, center, scale):
    """Density pieces as (local triangle half-planes or None, bbox, rho)."""
    out = []
    for tri, rho in density.pieces():
        if tri is None:
            out.append((None, None, rho))
        else:
            t = (np.asarray(tri, float) - center) / scale
            out.append((_triangle_halfplanes(t), (t.min(axis=0), t.max(axis=0)), rho))
    return out


def _local_moments(V, pieces, tol):
    """Measure-weighted area, first and second moments of a local polygon."""
    w = 0.0
    m1 = np.zeros(2)
    m2 = 0.0
    lo = V.min(axis=0)
    hi = V.max(axis=0)
    for planes, bbox, rho in pieces:
        if rho == 0.0:
            continue
        if planes is None:
            P = V
        else:
            if np.any(bbox[0] > hi + tol) or np.any(bbox[1] < lo - tol):
                continue
            P = _clip_to_triangle(V, planes, tol)
            if P is None:
                continue
        a, f1, f2 = _fan_moments(P)
        w += rho * a
        m1 += rho * f1
        m2 += rho * f2
    return w, m1, m2


def _segment_density(p, q, pieces, tol):
    """Integral of the density along the local segment ``p -> q``."""
    length = float(np.hypot(*(q - p)))
    if pieces[0][0] is None:
        return pieces[0][2] * length
    d = q - p
    breaks = [0.0, 1.0]
    spans = []
    for planes, _, rho in pieces:
        lo, hi = 0.0, 1.0
        normals, offsets = planes
        for n, off in zip(normals, offsets):
            sp = float(n @ p) - off
            sd = float(n @ d)
            if abs(sd) <= tol:
                if sp < -tol:
                    lo, hi = 1.0, 0.0
                continue
            t = -sp / sd
            if sd > 0:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
        if hi > lo:
            breaks += [lo, hi]
            spans.append((lo, hi, rho))
    breaks = np.unique(np.clip(breaks, 0.0, 1.0))
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        mid = 0.5 * (a + b)
        for lo, hi, rho in spans:
            if lo <= mid <= hi:
                total += rho * (b - a) * length
                break
    return total


def polygon_moment(poly: ConvexPolygon, integrand=None, density=None) -> float:
    """Integrate ``integrand * rho`` over ``poly``.

    Fan triangulation with the edge-midpoint rule, exact for integrands that
    are polynomials of degree at most 2 on each constant-density piece.

    Parameters
    ----------
    poly : ConvexPolygon
        Integration region, assumed to lie in the density's domain.
    integrand : callable, optional
        Maps an (n, 2) array of points to n values.  Defaults to 1.
    density : SourceDensity, optional
        Defaults to unit density (plain Lebesgue measure).
    """
    f = integrand if integrand is not None else (lambda x: np.ones(len(x)))
    V = poly.vertices
    if density is None:
        return _fan_quadrature(V, f)
    tol = EPS_GEOM * poly.diameter
    total = 0.0
    for tri, rho in density.pieces():
        if rho == 0.0:
            continue
        if tri is None:
            P = V
        else:
            P = _clip_to_triangle(V, _triangle_halfplanes(np.asarray(tri, float)), tol)
            if P is None:
                continue
        total += rho * _fan_quadrature(P, f)
    return total


# ---------------------------------------------------------------------------
# power diagram


@dataclass(frozen=True)
class PowerCell:
    site_index: int
    polygon: Optional[ConvexPolygon]
    measure: float

    @property
    def empty(self) -> bool:
        return self.polygon is None


@dataclass(frozen=True)
class DualEdge:
    """Adjacency of cells ``i < j`` across a boundary segment of positive length."""

    i: int
    j: int
    face_measure: float
    site_distance: float
    segment: tuple = field(compare=False, repr=False, default=())


@dataclass(frozen=True, eq=False)
class PowerDiagram:
    """Power diagram of weighted sites restricted to a convex domain.

    ``measures[i]`` is ``mu(W_i)``, ``first_moments[i]`` is ``int_{W_i} x dmu`` and
    ``costs[i]`` is ``int_{W_i} |x - y_i|^2 / 2 dmu``.  ``local_first_moments`` hold
    the first moments in the normalized frame ``x' = (x - frame_center) / frame_scale``;
    the solver uses them to evaluate energies without cancellation.
    """

    points: np.ndarray
    heights: np.ndarray
    cells: tuple
    dual_edges: tuple
    measures: np.ndarray
    first_moments: np.ndarray
    costs: np.ndarray
    frame_center: np.ndarray
    frame_scale: float
    local_first_moments: np.ndarray

    @property
    def k(self) -> int:
        return len(self.cells)

    @property
    def nonempty(self) -> np.ndarray:
        return np.array([not c.empty for c in self.cells])

    def vertices(self) -> np.ndarray:
        """All vertices of all nonempty cells, stacked."""
        vs = [c.polygon.vertices for c in self.cells if not c.empty]
        return np.concatenate(vs) if vs else np.zeros((0, 2))


def check_distinct(points: np.ndarray) -> None:
    """Raise if two sites coincide within the geometric tolerance."""
    from scipy.spatial import cKDTree

    if len(points) < 2:
        return
    spread = float(np.ptp(points, axis=0).max())
    dist, _ = cKDTree(points).query(points, k=2)
    if dist[:, 1].min() <= EPS_GEOM * max(1.0, spread):
        raise InvalidInputError("sites must be pairwise distinct")


def _frame(domain: ConvexPolygon):
    center = domain.vertices.mean(axis=0)
    scale = domain.diameter
    return center, scale


def build_power_diagram(points, heights, domain: ConvexPolygon, density=None,
                        check_sites: bool = True) -> PowerDiagram:
    """Restrict the power diagram of ``(points, heights)`` to ``domain``.

    Parameters
    ----------
    points : array_like, shape (k, 2)
        Site positions ``y_i``.
    heights : array_like, shape (k,)
        Heights ``h_i`` of the affine pieces ``<x, y_i> + h_i``.
    domain : ConvexPolygon
    density : SourceDensity, optional
        Source measure on ``domain``; uniform probability when omitted.
    check_sites : bool
        Validate distinctness of the sites (the solver does it once up front).

    Returns
    -------
    PowerDiagram
        Cells in site order (empty cells kept, with measure 0) and dual edges
        sorted by ``(i, j)``.
    """
    if not isinstance(domain, ConvexPolygon):
        raise InvalidInputError("domain must be a ConvexPolygon")
    Y = np.asarray(points, dtype=float)
    h = np.asarray(heights, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != 2 or len(Y) < 1:
        raise InvalidInputError("power diagrams need a (k, 2) array of sites, k >= 1")
    if h.shape != (len(Y),):
        raise InvalidInputError("heights must have one entry per site")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(h))):
        raise InvalidInputError("sites and heights must be finite")
    if check_sites:
        check_distinct(Y)
    if density is None:
        from .measure import SourceDensity

        density = SourceDensity.uniform(domain)
    elif density.domain is not domain and not np.array_equal(density.domain.vertices, domain.vertices):
        raise InvalidInputError("density is defined on a different domain")

    k = len(Y)
    tol = EPS_GEOM
    center, scale = _frame(domain)
    V0 = (domain.vertices - center) / scale
    labels0 = [-(t + 1) for t in range(len(V0))]
    hc = h + Y @ center
    pieces = _pieces_in_frame(density, center, scale)

    cells = []
    measures = np.zeros(k)
    local_m1 = np.zeros((k, 2))
    local_m2 = np.zeros(k)
    polys_local = []
    for i in range(k):
        V, labels = V0, labels0
        if k > 1:
            diff = Y[i] - Y
            dist = np.hypot(diff[:, 0], diff[:, 1])
            dist[i] = 1.0
            normals = diff / dist[:, None]
            offsets = (hc - hc[i]) / (scale * dist)
            active = np.ones(k, dtype=bool)
            active[i] = False
            while True:
                idx = np.flatnonzero(active)
                if len(idx) == 0:
                    break
                vals = V @ normals[idx].T - offsets[idx]
                if vals.max(axis=0).min() < -tol:
                    V = None
                    break
                mins = vals.min(axis=0)
                worst = int(np.argmin(mins))
                if mins[worst] >= -tol:
                    break
                j = int(idx[worst])
                V, labels = _clip_labeled(V, labels, normals[j], offsets[j], j, tol)
                active[j] = False
                if V is None:
                    break
        polys_local.append((V, labels))
        if V is None:
            cells.append(PowerCell(i, None, 0.0))
            continue
        w, m1, m2 = _local_moments(V, pieces, tol)
        w *= scale * scale
        m1 *= scale * scale
        m2 *= scale * scale
        measures[i] = w
        local_m1[i] = m1
        local_m2[i] = m2
        try:
            poly = ConvexPolygon(V * scale + center)
        except InvalidInputError:
            poly = None
            measures[i] = 0.0
            local_m1[i] = 0.0
            local_m2[i] = 0.0
            polys_local[-1] = (None, None)
        cells.append(PowerCell(i, poly, float(measures[i])))

    edges = []
    for i, (V, labels) in enumerate(polys_local):
        if V is None:
            continue
        m = len(V)
        for t, j in enumerate(labels):
            if j <= i:
                continue
            p, q = V[t], V[(t + 1) % m]
            if np.hypot(*(q - p)) <= tol:
                continue
            if polys_local[j][0] is None:
                continue
            fm = _segment_density(p, q, pieces, tol) * scale
            if fm <= 0.0:
                continue
            edges.append(DualEdge(i, j, float(fm), float(np.linalg.norm(Y[i] - Y[j])),
                                  (tuple(p * scale + center), tuple(q * scale + center))))
    edges.sort(key=lambda e: (e.i, e.j))

    first = measures[:, None] * center + scale * local_m1
    dc = center - Y
    costs = 0.5 * ((dc * dc).sum(1) * measures + 2.0 * scale * (dc * local_m1).sum(1)
                   + scale * scale * local_m2)
    Y.setflags(write=False)
    return PowerDiagram(
        points=Y,
        heights=h.copy(),
        cells=tuple(cells),
        dual_edges=tuple(edges),
        measures=measures,
        first_moments=first,
        costs=costs,
        frame_center=center,
        frame_scale=scale,
        local_first_moments=local_m1,
    )


def upper_envelope(points, heights, x):
    """Values and argmax indices of ``max_i <x, y_i> + h_i`` (ties -> lowest index)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y = np.asarray(points, dtype=float)
    vals = X @ Y.T + np.asarray(heights, dtype=float)
    idx = np.argmax(vals, axis=1)
    return vals[np.arange(len(X)), idx], idx


def legendre_dual_values(points, heights, domain: ConvexPolygon,
                         diagram: Optional[PowerDiagram] = None) -> np.ndarray:
    """Legendre transform of ``u_h`` restricted to ``domain``, evaluated at the sites.

    ``u*(y_i) = sup_{x in domain} <x, y_i> - u_h(x)``.  The supremum of this concave
    piecewise-linear function is attained at a vertex of the restricted diagram,
    and equals ``-h_i`` whenever cell ``i`` is nonempty.
    """
    h = np.asarray(heights, dtype=float)
    Y = np.asarray(points, dtype=float)
    if diagram is None:
        diagram = build_power_diagram(Y, h, domain)
    verts = np.concatenate([diagram.vertices(), domain.vertices])
    u, _ = upper_envelope(Y, h, verts)
    out = (verts @ Y.T - u[:, None]).max(axis=0)
    nonempty = diagram.nonempty
    out[nonempty] = -h[nonempty]
    return np.minimum(out, -h)


def dual_adjacency(diagram: PowerDiagram) -> Sequence[tuple]:
    """Dual (weighted Delaunay) edges as index pairs."""
    return [(e.i, e.j) for e in diagram.dual_edges]
