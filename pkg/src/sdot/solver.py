"""Concave energy of semi-discrete transport and its maximization.

For sites ``y_i`` with target masses ``nu_i`` and heights ``h`` the energy is

    E(h) = sum_i h_i nu_i - int_Omega u_h dmu,    u_h(x) = max_i <x, y_i> + h_i,

whose gradient is ``nu - w(h)`` (``w_i`` the mu-measure of power cell ``i``) and
whose Hessian is the negated weighted graph Laplacian of the dual edges with
weights ``face_measure / |y_i - y_j|``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, NotAdmissibleError
from .geometry import ConvexPolygon, PowerDiagram, build_power_diagram, check_distinct
from .measure import EmpiricalMeasure, SourceDensity

log = logging.getLogger(__name__)

MASS_RTOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    tol_gradient_inf: float = 1e-7
    max_iterations: int = 100
    line_search_shrink: float = 0.5
    min_cell_fraction: float = 0.1
    regularization_eps: float = 1e-12

    def __post_init__(self):
        if not (self.tol_gradient_inf > 0 and self.max_iterations > 0
                and self.min_cell_fraction > 0 and self.regularization_eps >= 0):
            raise InvalidInputError("solver settings must be positive")
        if not 0 < self.line_search_shrink < 1:
            raise InvalidInputError("line_search_shrink must lie in (0, 1)")


@dataclass
class SolverReport:
    """Per-iterate history of a solve.

    ``gradient_norms``, ``energies`` and ``heights_trace`` have one entry per
    accepted iterate (the initial point included); ``step_sizes`` one per step.
    """

    iterations: int = 0
    gradient_norms: List[float] = field(default_factory=list)
    energies: List[float] = field(default_factory=list)
    step_sizes: List[float] = field(default_factory=list)
    heights_trace: List[np.ndarray] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    message: str = ""


@dataclass(frozen=True)
class DiscreteTransportPlan:
    matrix: np.ndarray
    cost: float


def gauge(h) -> np.ndarray:
    """Shift ``h`` so its entries sum to zero."""
    h = np.asarray(h, dtype=float)
    return h - h.mean()


def _check_problem(points, masses, density: SourceDensity):
    Y = np.asarray(points, dtype=float)
    nu = np.asarray(masses, dtype=float)
    if Y.ndim != 2 or len(Y) < 1:
        raise InvalidInputError("sites must be a (k, d) array with k >= 1")
    if nu.shape != (len(Y),):
        raise InvalidInputError("need one target mass per site")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(nu))):
        raise InvalidInputError("sites and masses must be finite")
    if np.any(nu <= 0):
        raise InvalidInputError("target masses must be positive")
    if density is not None:
        total = density.total_mass
        if abs(nu.sum() - total) > MASS_RTOL * total:
            raise InvalidInputError(
                f"target masses sum to {nu.sum()!r}, source mass is {total!r}")
    return Y, nu


def _diagram(points, h, density, check=False) -> PowerDiagram:
    return build_power_diagram(points, h, density.domain, density, check_sites=check)


def _centered_energy(diagram: PowerDiagram, masses):
    """Energy shifted by the constant ``<c, sum nu_i y_i>``, plus a roundoff scale.

    Working with heights relative to the frame center keeps the terms small.
    """
    Y = diagram.points
    hc = diagram.heights + Y @ diagram.frame_center
    a = hc * (masses - diagram.measures)
    b = diagram.frame_scale * (diagram.local_first_moments * Y).sum(axis=1)
    value = math.fsum(a) - math.fsum(b)
    scale = float(np.abs(hc).dot(masses + diagram.measures) + np.abs(b).sum())
    return value, scale


def _energy_offset(diagram: PowerDiagram, masses) -> float:
    return float(diagram.frame_center @ (masses @ diagram.points))


def energy(points, masses, heights, density: SourceDensity,
           diagram: Optional[PowerDiagram] = None) -> float:
    """``sum_i h_i nu_i - int u_h dmu`` (integration constant fixed to zero)."""
    Y, nu = _check_problem(points, masses, None)
    if diagram is None:
        diagram = _diagram(Y, heights, density, check=True)
    value, _ = _centered_energy(diagram, nu)
    return value - _energy_offset(diagram, nu)


def alexandrov_potential(points, heights, density: SourceDensity,
                         diagram: Optional[PowerDiagram] = None) -> float:
    """``int_Omega u_h dmu``; convex in ``h``."""
    if diagram is None:
        diagram = _diagram(points, heights, density, check=True)
    Y = diagram.points
    hc = diagram.heights + Y @ diagram.frame_center
    return math.fsum(hc * diagram.measures) + diagram.frame_scale * math.fsum(
        (diagram.local_first_moments * Y).sum(axis=1))


def gradient(points, masses, heights, density: SourceDensity,
             diagram: Optional[PowerDiagram] = None) -> np.ndarray:
    """``nu - w(h)``."""
    if diagram is None:
        diagram = _diagram(points, heights, density, check=True)
    return np.asarray(masses, dtype=float) - diagram.measures


def hessian(points, heights, density: SourceDensity,
            diagram: Optional[PowerDiagram] = None) -> sp.csr_matrix:
    """Sparse symmetric Hessian of the energy.

    Off-diagonal ``(i, j)`` is ``face_measure / |y_i - y_j|`` for dual edges and the
    diagonal is the negated off-diagonal row sum, so the matrix is negative
    semidefinite with the constants in its kernel.

    Raises
    ------
    NotAdmissibleError
        If some cell has zero measure.
    """
    if diagram is None:
        diagram = _diagram(points, heights, density, check=True)
    if np.any(diagram.measures <= 0):
        raise NotAdmissibleError("Hessian needs every cell to have positive measure")
    return _assemble_hessian(diagram)


def _assemble_hessian(diagram: PowerDiagram) -> sp.csr_matrix:
    k = diagram.k
    rows, cols, vals = [], [], []
    per_row = [[] for _ in range(k)]
    for e in diagram.dual_edges:
        v = e.face_measure / e.site_distance
        rows += [e.i, e.j]
        cols += [e.j, e.i]
        vals += [v, v]
        per_row[e.i].append(v)
        per_row[e.j].append(v)
    diag = [-math.fsum(r) for r in per_row]
    rows += list(range(k))
    cols += list(range(k))
    vals += diag
    return sp.csr_matrix((vals, (rows, cols)), shape=(k, k))


def _newton_direction(H: sp.csr_matrix, g: np.ndarray, eps: float) -> np.ndarray:
    """Solve ``H d = -g`` on the gauge complement by pinning the last coordinate."""
    k = len(g)
    if k == 1:
        return np.zeros(1)
    L = (-H).tocsc()[:-1, :-1]
    L = L + eps * sp.identity(k - 1, format="csc")
    d = np.zeros(k)
    d[:-1] = spla.spsolve(L, g[:-1])
    return d - d.mean()


def voronoi_heights(points) -> np.ndarray:
    """``h_i = -|y_i|^2 / 2``: the power diagram becomes the Voronoi diagram."""
    Y = np.asarray(points, dtype=float)
    return -0.5 * (Y * Y).sum(axis=1)


def shrunk_voronoi_heights(points, domain: ConvexPolygon) -> np.ndarray:
    """Heights whose cells are the Voronoi cells of the sites mapped into ``domain``.

    The sites are moved by ``z_i = t y_i + b`` into a disk inside the domain; the
    cell of each ``z_i`` contains ``z_i`` itself, so no cell is empty.
    """
    Y = np.asarray(points, dtype=float)
    c = domain.vertices.mean(axis=0)
    v = domain.vertices
    e = np.roll(v, -1, axis=0) - v
    dist = np.abs(e[:, 0] * (c[1] - v[:, 1]) - e[:, 1] * (c[0] - v[:, 0])) / np.linalg.norm(e, axis=1)
    r_in = float(dist.min())
    mid = 0.5 * (Y.min(axis=0) + Y.max(axis=0))
    spread = float(np.linalg.norm(Y - mid, axis=1).max())
    t = 0.5 * r_in / spread if spread > 0 else 1.0
    b = c - t * mid
    return -(Y @ b) - 0.5 * t * (Y * Y).sum(axis=1)


def _initial_heights(Y, nu, density, h0, cfg, report):
    if h0 is not None:
        return gauge(h0)
    h = gauge(voronoi_heights(Y))
    D = _diagram(Y, h, density)
    if np.all(D.measures > 0):
        return h
    h = gauge(shrunk_voronoi_heights(Y, density.domain))
    D = _diagram(Y, h, density)
    steps = 0
    while np.any(D.measures <= 0) and steps < cfg.max_iterations:
        # gradient ascent until every cell carries mass
        H = _assemble_hessian(D)
        rate = 1.0 / max(float(-H.diagonal().min()), 1e-300)
        h = gauge(h + rate * (nu - D.measures))
        D = _diagram(Y, h, density)
        steps += 1
    if steps:
        report.message = f"{steps} gradient steps before Newton"
    return h


def newton_solve(points, masses, density: SourceDensity, config: Optional[SolverConfig] = None,
                 h0=None):
    """Damped Newton maximization of the energy.

    Parameters
    ----------
    points : array_like, shape (k, 2)
    masses : array_like, shape (k,)
        Target masses; must sum to ``density.total_mass``.
    density : SourceDensity
    config : SolverConfig, optional
    h0 : array_like, optional
        Starting heights; by default the Voronoi heights, or heights of a
        shrunken copy of the sites when some Voronoi cell misses the support.

    Returns
    -------
    h : ndarray
        Heights with ``sum(h) == 0``.
    diagram : PowerDiagram
    report : SolverReport
        ``converged`` is False when ``max_iterations`` ran out or the line search
        stalled; ``h`` is then the last accepted iterate.
    """
    t0 = time.perf_counter()
    cfg = config or SolverConfig()
    Y, nu = _check_problem(points, masses, density)
    if Y.shape[1] != 2:
        raise InvalidInputError("newton_solve works with planar sites")
    check_distinct(Y)
    report = SolverReport()

    h = _initial_heights(Y, nu, density, h0, cfg, report)
    D = _diagram(Y, h, density)
    if np.any(D.measures <= 0):
        report.message = "could not reach an admissible starting point"
        report.heights_trace.append(h.copy())
        report.gradient_norms.append(float(np.abs(nu - D.measures).max()))
        report.energies.append(energy(Y, nu, h, density, D))
        report.wall_time = time.perf_counter() - t0
        return h, D, report
    floor = np.minimum(cfg.min_cell_fraction * nu, 0.5 * D.measures)
    offset = _energy_offset(D, nu)
    E, E_scale = _centered_energy(D, nu)

    def record(h, D, E):
        report.heights_trace.append(h.copy())
        report.gradient_norms.append(float(np.abs(nu - D.measures).max()))
        report.energies.append(E - offset)

    record(h, D, E)
    while True:
        g = nu - D.measures
        if report.gradient_norms[-1] <= cfg.tol_gradient_inf:
            report.converged = True
            break
        if report.iterations >= cfg.max_iterations:
            report.message = "maximum number of iterations reached"
            break
        d = _newton_direction(_assemble_hessian(D), g, cfg.regularization_eps)
        alpha = 1.0
        accepted = False
        while alpha > 1e-14:
            h_new = gauge(h + alpha * d)
            D_new = _diagram(Y, h_new, density)
            if np.all(D_new.measures >= floor):
                E_new, s_new = _centered_energy(D_new, nu)
                if E_new >= E - 1e-13 * max(E_scale, s_new):
                    accepted = True
                    break
            alpha *= cfg.line_search_shrink
        if not accepted:
            report.message = "line search failed"
            break
        h, D, E, E_scale = h_new, D_new, E_new, s_new
        report.iterations += 1
        report.step_sizes.append(alpha)
        record(h, D, E)
        log.debug("newton %d: |g|=%.3e step=%g", report.iterations, report.gradient_norms[-1], alpha)
    report.wall_time = time.perf_counter() - t0
    return h, D, report


def _mc_step_stats(X, Y, h, band):
    """Monte Carlo cell masses and Hessian diagonal at ``h``.

    A face of cells ``a, b`` carries ``mu``-measure about ``(#points within band of
    it) / (2 band N)``; each point near a face adds ``1 / |y_a - y_b|`` of that to
    both diagonal entries.
    """
    k = len(Y)
    V = X @ Y.T + h
    part = np.argpartition(-V, 1, axis=1)[:, :2]
    rows = np.arange(len(X))
    v0 = V[rows, part[:, 0]]
    v1 = V[rows, part[:, 1]]
    swap = v1 > v0
    a = np.where(swap, part[:, 1], part[:, 0])
    b = np.where(swap, part[:, 0], part[:, 1])
    sep = np.linalg.norm(Y[a] - Y[b], axis=1)
    dist = np.abs(v0 - v1) / sep
    near = dist < band
    wgt = 1.0 / (sep[near] * 2.0 * band * len(X))
    curv = np.bincount(a[near], wgt, minlength=k) + np.bincount(b[near], wgt, minlength=k)
    masses = np.bincount(a, minlength=k) / len(X)
    return masses, curv


def sgd_solve(points, masses, sampler: Callable[[int, int], np.ndarray],
              config: Optional[SolverConfig] = None, samples_per_iteration: int = 100_000,
              iterations: int = 200, learning_rate: float = 0.5, h0=None):
    """Stochastic gradient ascent on the energy in any dimension.

    Each iteration draws ``samples_per_iteration`` source points with
    ``sampler(n, iteration)``, estimates cell masses by assigning each point to
    ``argmax_i <x, y_i> + h_i`` and steps along ``nu - w_hat``, scaled per
    coordinate by a Monte Carlo estimate of the Hessian diagonal (Jacobi
    preconditioning keeps the step stable when sites crowd together).  The
    returned heights average the second half of the iterates.  The default start
    is the Voronoi heights.

    ``report.converged`` is set when a fresh batch at the averaged heights gives
    ``|nu - w_hat|_inf <= 5 max_i sqrt(nu_i (1 - nu_i) / N)`` (target masses
    normalized to sum 1), the Monte Carlo resolution at batch size N.
    """
    t0 = time.perf_counter()
    cfg = config or SolverConfig()
    Y, nu = _check_problem(points, masses, None)
    check_distinct(Y)
    nu = nu / nu.sum()
    k, dim = Y.shape
    N = int(samples_per_iteration)
    report = SolverReport()
    h = gauge(voronoi_heights(Y) if h0 is None else h0)
    mc_tol = 5.0 * float(np.sqrt(nu * (1 - nu) / N).max())
    if k == 1:
        report.converged = True
        report.heights_trace.append(h.copy())
        report.gradient_norms.append(0.0)
        report.wall_time = time.perf_counter() - t0
        return h, report
    X = np.asarray(sampler(N, 0), dtype=float)
    band = 0.05 * float(np.linalg.norm(np.ptp(X, axis=0))) / k ** (1.0 / dim)
    curv_avg = None
    avg = np.zeros(k)
    n_avg = 0
    for it in range(iterations):
        if it:
            X = np.asarray(sampler(N, it), dtype=float)
        w_hat, curv = _mc_step_stats(X, Y, h, band)
        curv_avg = curv if curv_avg is None else 0.8 * curv_avg + 0.2 * curv
        g = nu - w_hat
        report.gradient_norms.append(float(np.abs(g).max()))
        report.heights_trace.append(h.copy())
        positive = curv_avg[curv_avg > 0]
        fill = float(np.median(positive)) if len(positive) else 1.0
        step = learning_rate / np.where(curv_avg > 0, curv_avg, fill)
        h = gauge(h + step * g)
        report.step_sizes.append(float(step.max()))
        report.iterations += 1
        if it >= iterations // 2:
            avg += h
            n_avg += 1
    h = gauge(avg / max(n_avg, 1))
    X = np.asarray(sampler(N, iterations), dtype=float)
    final = float(np.abs(nu - _mc_step_stats(X, Y, h, band)[0]).max())
    report.gradient_norms.append(final)
    report.heights_trace.append(h.copy())
    report.converged = final <= max(mc_tol, cfg.tol_gradient_inf)
    report.wall_time = time.perf_counter() - t0
    return h, report


def _import_pot():
    import os

    # numpy-only backend; skips importing deep-learning frameworks
    for name in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot

    return ot


def lp_oracle(source: EmpiricalMeasure, target: EmpiricalMeasure,
              cost_exponent: float = 2.0) -> DiscreteTransportPlan:
    """Exact discrete transport between two atomic measures.

    The cost is ``|x - y|^p / p`` (``p = 2`` gives ``|x - y|^2 / 2``).  The
    transportation problem is solved by the network simplex of POT (``ot.emd``).
    """
    a = source.masses
    b = target.masses
    if abs(a.sum() - b.sum()) > MASS_RTOL * max(a.sum(), b.sum()):
        raise InvalidInputError("source and target total masses differ")
    p = float(cost_exponent)
    if not p >= 1:
        raise InvalidInputError("cost exponent must be at least 1")
    diff = source.points[:, None, :] - target.points[None, :, :]
    C = np.sqrt((diff * diff).sum(-1)) ** p / p
    b = b * (a.sum() / b.sum())
    ot = _import_pot()
    P, log_ = ot.emd(a, b, C, numItermax=10_000_000, log=True)
    if log_["warning"] is not None:
        raise InvalidInputError(f"transport LP failed: {log_['warning']}")
    return DiscreteTransportPlan(P, float((P * C).sum()))
