"""Source densities on a convex domain, discrete target measures and seeded samplers.

Random numbers come from the Philox4x64 counter-based generator as implemented
by ``numpy.random.Philox``.  A ``RandomStream`` with seed
``s`` and stream index ``j`` uses Philox key ``s`` and starts its 256-bit counter
at ``(0, 0, 0, j)``, so substreams are disjoint and addressable by index.
Uniform doubles are ``(x >> 11) * 2**-53`` of successive 64-bit outputs; normal
variates use the Box-Muller transform of two such uniforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .geometry import EPS_GEOM, ConvexPolygon, _signed_area


class RandomStream:
    """Reproducible stream of uniform and normal variates.

    Parameters
    ----------
    seed : int
        64-bit unsigned seed (Philox key).
    stream : int
        Substream index, placed in the high word of the counter.
    """

    def __init__(self, seed: int, stream: int = 0):
        seed = int(seed)
        stream = int(stream)
        if not 0 <= seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        if not 0 <= stream < 2**64:
            raise InvalidInputError("stream index must be a 64-bit unsigned integer")
        self.seed = seed
        self.stream = stream
        counter = np.array([0, 0, 0, stream], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=seed, counter=counter)

    def uniform(self, size) -> np.ndarray:
        """Doubles in ``[0, 1)`` with 53 random bits each."""
        n = int(np.prod(size))
        raw = self._bitgen.random_raw(n).astype(np.uint64)
        return ((raw >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(size)

    def normal(self, size) -> np.ndarray:
        """Standard normal variates by Box-Muller."""
        n = int(np.prod(size))
        m = (n + 1) // 2
        u = self.uniform((2, m))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(size)

    def substream(self, index: int) -> "RandomStream":
        """Independent stream sharing the seed; ``index`` replaces the stream id."""
        return RandomStream(self.seed, index)


def _as_stream(seed) -> RandomStream:
    return seed if isinstance(seed, RandomStream) else RandomStream(seed)


@dataclass(frozen=True, eq=False)
class SourceDensity:
    """Absolutely continuous measure on a convex polygon.

    Either uniform, or piecewise constant on a triangulation of the domain.
    ``values`` are densities per unit area; ``total_mass`` is their integral.
    """

    domain: ConvexPolygon
    total_mass: float
    triangles: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    @classmethod
    def uniform(cls, domain: ConvexPolygon, total_mass: float = 1.0) -> "SourceDensity":
        if not total_mass > 0:
            raise InvalidInputError("total mass must be positive")
        return cls(domain, float(total_mass))

    @classmethod
    def piecewise(cls, domain: ConvexPolygon, triangles, values) -> "SourceDensity":
        """Piecewise-constant density; ``triangles`` must tile ``domain`` exactly."""
        tris = np.array(triangles, dtype=float)
        vals = np.array(values, dtype=float)
        if tris.ndim != 3 or tris.shape[1:] != (3, 2) or vals.shape != (len(tris),):
            raise InvalidInputError("piecewise density needs (T, 3, 2) triangles and T values")
        if not (np.all(np.isfinite(tris)) and np.all(np.isfinite(vals))):
            raise InvalidInputError("triangles and densities must be finite")
        if np.any(vals < 0):
            raise InvalidInputError("density must be nonnegative")
        areas = np.abs([_signed_area(t) for t in tris])
        diam = domain.diameter
        if np.any(areas <= EPS_GEOM * diam * diam):
            raise InvalidInputError("degenerate triangle in density triangulation")
        if abs(areas.sum() - domain.area) > 1e-9 * domain.area:
            raise InvalidInputError("triangulation does not cover the domain exactly")
        if not np.all(domain.contains(tris.reshape(-1, 2), tol=1e-9)):
            raise InvalidInputError("triangulation leaves the domain")
        total = float((areas * vals).sum())
        if not total > 0:
            raise InvalidInputError("total mass must be positive")
        tris.setflags(write=False)
        vals.setflags(write=False)
        return cls(domain, total, tris, vals)

    @property
    def is_uniform(self) -> bool:
        return self.triangles is None

    def pieces(self):
        """``(triangle or None, rho)`` pairs; ``None`` stands for the whole domain."""
        if self.is_uniform:
            return [(None, self.total_mass / self.domain.area)]
        return [(t, float(v)) for t, v in zip(self.triangles, self.values)]

    def density_at(self, points) -> np.ndarray:
        """Pointwise density; zero outside the domain."""
        p = np.atleast_2d(np.asarray(points, float))
        inside = self.domain.contains(p, tol=1e-12)
        if self.is_uniform:
            return np.where(inside, self.total_mass / self.domain.area, 0.0)
        out = np.zeros(len(p))
        done = np.zeros(len(p), dtype=bool)
        for t, v in zip(self.triangles, self.values):
            hit = _in_triangle(p, t) & ~done
            out[hit] = v
            done |= hit
        return np.where(inside, out, 0.0)

    def translated(self, shift) -> "SourceDensity":
        shift = np.asarray(shift, float)
        dom = ConvexPolygon(self.domain.vertices + shift)
        if self.is_uniform:
            return SourceDensity(dom, self.total_mass)
        return SourceDensity(dom, self.total_mass, self.triangles + shift, self.values)


def _in_triangle(p, t, tol=1e-12):
    a, b, c = t
    if _signed_area(t) < 0:
        b, c = c, b
    scale = max(np.ptp(t[:, 0]), np.ptp(t[:, 1]))
    out = np.ones(len(p), dtype=bool)
    for u, v in ((a, b), (b, c), (c, a)):
        e = v - u
        out &= e[0] * (p[:, 1] - u[1]) - e[1] * (p[:, 0] - u[0]) >= -tol * scale * scale
    return out


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Finite atomic measure ``sum_i m_i delta_{x_i}``."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.array(self.points, dtype=float))
        m = np.array(self.masses, dtype=float).reshape(-1)
        if len(p) != len(m) or len(p) == 0:
            raise InvalidInputError("need one positive mass per atom")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(m))):
            raise InvalidInputError("atoms must be finite")
        if np.any(m <= 0):
            raise InvalidInputError("atom masses must be positive")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "masses", m)

    @classmethod
    def uniform_weights(cls, points) -> "EmpiricalMeasure":
        p = np.atleast_2d(np.asarray(points, float))
        return cls(p, np.full(len(p), 1.0 / len(p)))

    def __len__(self):
        return len(self.masses)


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Isotropic Gaussian mixture; ``components`` are ``(center, sigma, weight)``."""

    components: tuple

    def __post_init__(self):
        comps = tuple((np.asarray(c, float), float(s), float(w)) for c, s, w in self.components)
        if not comps:
            raise InvalidInputError("mixture needs at least one component")
        dims = {len(c) for c, _, _ in comps}
        if len(dims) != 1:
            raise InvalidInputError("mixture centers must share a dimension")
        if any(s <= 0 for _, s, _ in comps) or any(w < 0 for _, _, w in comps):
            raise InvalidInputError("sigmas must be positive and weights nonnegative")
        if abs(sum(w for _, _, w in comps) - 1.0) > 1e-12:
            raise InvalidInputError("mixture weights must sum to 1")
        object.__setattr__(self, "components", comps)

    @property
    def centers(self) -> np.ndarray:
        return np.array([c for c, _, _ in self.components])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, _, w in self.components])


def two_cluster_spec() -> GaussianMixtureSpec:
    """Equal-weight mixture of N((0,0), 3^2) and N((40,40), 3^2)."""
    return GaussianMixtureSpec((((0.0, 0.0), 3.0, 0.5), ((40.0, 40.0), 3.0, 0.5)))


def sample_gaussian_mixture(spec: GaussianMixtureSpec, n: int, seed,
                            return_labels: bool = False):
    """Draw ``n`` atoms of mass ``1/n`` from a Gaussian mixture.

    The component of each draw is picked by inverting the cumulative weights at a
    uniform variate, then an isotropic normal draw is added to its center.
    """
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    rs = _as_stream(seed)
    cum = np.cumsum(spec.weights)
    cum[-1] = 1.0
    u = rs.uniform(n)
    labels = np.searchsorted(cum, u, side="right")
    d = len(spec.centers[0])
    z = rs.normal((n, d))
    sig = np.array([s for _, s, _ in spec.components])
    pts = spec.centers[labels] + sig[labels, None] * z
    emp = EmpiricalMeasure(pts, np.full(n, 1.0 / n))
    return (emp, labels) if return_labels else emp


def _triangulate_fan(v: np.ndarray) -> np.ndarray:
    return np.stack([np.repeat(v[:1], len(v) - 2, axis=0), v[1:-1], v[2:]], axis=1)


def sample_source(density: SourceDensity, n: int, seed) -> np.ndarray:
    """I.i.d. points distributed as ``density / total_mass``.

    A triangle is chosen by inverting cumulative triangle masses, then a uniform
    point in it by reflecting ``(u1, u2)`` into the unit simplex.
    """
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    rs = _as_stream(seed)
    if density.is_uniform:
        tris = _triangulate_fan(density.domain.vertices)
        mass = np.abs([_signed_area(t) for t in tris])
    else:
        tris = density.triangles
        mass = np.abs([_signed_area(t) for t in tris]) * density.values
    cum = np.cumsum(mass / mass.sum())
    cum[-1] = 1.0
    u = rs.uniform((3, n))
    which = np.minimum(np.searchsorted(cum, u[0], side="right"), len(tris) - 1)
    a, b = u[1], u[2]
    flip = a + b > 1.0
    a = np.where(flip, 1.0 - a, a)
    b = np.where(flip, 1.0 - b, b)
    t = tris[which]
    return t[:, 0] + a[:, None] * (t[:, 1] - t[:, 0]) + b[:, None] * (t[:, 2] - t[:, 0])


def measure_total(measure) -> float:
    """Total mass of a ``SourceDensity`` or ``EmpiricalMeasure``."""
    if isinstance(measure, SourceDensity):
        return measure.total_mass
    if isinstance(measure, EmpiricalMeasure):
        return float(np.sum(measure.masses))
    raise InvalidInputError("expected a SourceDensity or EmpiricalMeasure")


def grid_discretize(density: SourceDensity, n: int) -> EmpiricalMeasure:
    """Quantize ``density`` on an ``n x n`` grid over the domain's bounding box.

    Each grid square intersected with the domain becomes one atom at the
    square's mu-barycenter carrying its exact mu-mass.
    """
    from .geometry import _clip_labeled, _local_moments, _pieces_in_frame

    if n < 1:
        raise InvalidInputError("grid resolution must be positive")
    dom = density.domain
    lo = dom.vertices.min(axis=0)
    hi = dom.vertices.max(axis=0)
    center = dom.vertices.mean(axis=0)
    scale = dom.diameter
    V0 = (dom.vertices - center) / scale
    pieces = _pieces_in_frame(density, center, scale)
    xs = np.linspace(lo[0], hi[0], n + 1)
    ys = np.linspace(lo[1], hi[1], n + 1)
    gx, gy = np.meshgrid(xs, ys)
    corner_in = dom.contains(np.column_stack([gx.ravel(), gy.ravel()]), tol=0.0).reshape(n + 1, n + 1)
    interior = corner_in[:-1, :-1] & corner_in[1:, :-1] & corner_in[:-1, 1:] & corner_in[1:, 1:]
    rho = density.total_mass / dom.area if density.is_uniform else None
    pts, masses = [], []
    for iy in range(n):
        for ix in range(n):
            if rho is not None and interior[iy, ix]:
                # square inside a uniform domain: exact mass and center directly
                pts.append(np.array([0.5 * (xs[ix] + xs[ix + 1]), 0.5 * (ys[iy] + ys[iy + 1])]))
                masses.append(rho * (xs[ix + 1] - xs[ix]) * (ys[iy + 1] - ys[iy]))
                continue
            V = V0
            labels = [0] * len(V)
            for nrm, off in (((1.0, 0.0), xs[ix]), ((-1.0, 0.0), -xs[ix + 1]),
                             ((0.0, 1.0), ys[iy]), ((0.0, -1.0), -ys[iy + 1])):
                nrm = np.array(nrm)
                local_off = (off - nrm @ center) / scale
                V, labels = _clip_labeled(V, labels, nrm, local_off, 0, EPS_GEOM)
                if V is None:
                    break
            if V is None:
                continue
            w, m1, _ = _local_moments(V, pieces, EPS_GEOM)
            if w <= 0:
                continue
            pts.append(center + scale * m1 / w)
            masses.append(w * scale * scale)
    return EmpiricalMeasure(np.array(pts), np.array(masses))


def grid_cell_diameter(domain: ConvexPolygon, n: int) -> float:
    """Diagonal of one square of the ``n x n`` grid used by ``grid_discretize``."""
    ext = np.ptp(domain.vertices, axis=0) / n
    return float(np.hypot(*ext))


__all__ = [
    "RandomStream",
    "SourceDensity",
    "EmpiricalMeasure",
    "GaussianMixtureSpec",
    "two_cluster_spec",
    "sample_gaussian_mixture",
    "sample_source",
    "measure_total",
    "grid_discretize",
    "grid_cell_diameter",
]
