"""Independent oracle checks of a solved transport model.

Each check returns a ``CheckResult``; tolerances are fixed here and documented
per function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import build_power_diagram
from .measure import EmpiricalMeasure, grid_cell_diameter, grid_discretize
from .potential import TransportModel, dual_energy, transport_indices, weights_from_heights
from .solver import SolverConfig, _centered_energy, _assemble_hessian, energy, lp_oracle


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "details": self.details}


def height_scale(model: TransportModel) -> float:
    """Size of a height change that moves a cell boundary by one domain diameter."""
    Y = model.points
    spread = float(np.linalg.norm(np.ptp(Y, axis=0))) if len(Y) > 1 else 1.0
    return model.density.domain.diameter * spread


def fd_gradient(points, masses, heights, density, eps: float) -> np.ndarray:
    """Central differences of the energy (centered form, free of large offsets)."""
    h = np.asarray(heights, dtype=float)
    nu = np.asarray(masses, dtype=float)
    out = np.zeros(len(h))
    for i in range(len(h)):
        vals = []
        for s in (1.0, -1.0):
            hp = h.copy()
            hp[i] += s * eps
            D = build_power_diagram(points, hp, density.domain, density, check_sites=False)
            vals.append(_centered_energy(D, nu)[0])
        out[i] = (vals[0] - vals[1]) / (2 * eps)
    return out


def fd_hessian(points, masses, heights, density, eps: float) -> np.ndarray:
    """Central differences of the gradient ``nu - w(h)``, column by column."""
    h = np.asarray(heights, dtype=float)
    k = len(h)
    H = np.zeros((k, k))
    for j in range(k):
        w = []
        for s in (1.0, -1.0):
            hp = h.copy()
            hp[j] += s * eps
            w.append(build_power_diagram(points, hp, density.domain, density,
                                         check_sites=False).measures)
        H[:, j] = -(w[0] - w[1]) / (2 * eps)
    return H


def dual_gap_trace(points, masses, heights_trace, density) -> np.ndarray:
    """``E_D(psi(h)) - E_B(h)`` along a sequence of heights."""
    out = []
    for h in heights_trace:
        D = build_power_diagram(points, h, density.domain, density, check_sites=False)
        psi = weights_from_heights(points, h)
        out.append(dual_energy(points, psi, masses, density, D) - energy(points, masses, h, density, D))
    return np.array(out)


def check_gradient(model: TransportModel, config: SolverConfig) -> CheckResult:
    """Optimality ``|nu - w|_inf <= tol_gradient_inf`` and a finite-difference match.

    The difference step is ``1e-6 * height_scale``; the match must hold within
    ``1e-5 * total_mass`` per component.
    """
    D = model.diagram
    g = model.masses - D.measures
    eps = 1e-6 * height_scale(model)
    fd = fd_gradient(model.points, model.masses, model.heights, model.density, eps)
    fd_err = float(np.abs(fd - g).max())
    opt = float(np.abs(g).max())
    ok_opt = opt <= config.tol_gradient_inf
    ok_fd = fd_err <= 1e-5 * model.density.total_mass
    return CheckResult("gradient", bool(ok_opt and ok_fd), {
        "gradient_inf_norm": opt, "tolerance": config.tol_gradient_inf,
        "fd_max_error": fd_err, "fd_step": eps})


def check_hessian(model: TransportModel) -> CheckResult:
    """Finite differences of the gradient against the assembled Hessian.

    Step ``1e-5 * height_scale``; entries must agree within ``1e-4 * max|H|``, row
    sums vanish within ``1e-12 * max|H|`` and eigenvalues stay below
    ``1e-10 * max|H|``.
    """
    D = model.diagram
    if np.any(D.measures <= 0):
        return CheckResult("hessian", False, {"reason": "empty cell"})
    H = _assemble_hessian(D).toarray()
    scale = float(np.abs(H).max()) or 1.0
    eps = 1e-5 * height_scale(model)
    fd = fd_hessian(model.points, model.masses, model.heights, model.density, eps)
    err = float(np.abs(fd - H).max())
    rows = float(np.abs(H.sum(axis=1)).max())
    eig = float(np.linalg.eigvalsh(H).max())
    ok = err <= 1e-4 * scale and rows <= 1e-12 * scale and eig <= 1e-10 * scale
    return CheckResult("hessian", bool(ok), {
        "fd_max_error": err, "max_entry": scale, "max_row_sum": rows,
        "max_eigenvalue": eig, "fd_step": eps})


def check_dualgap(model: TransportModel) -> CheckResult:
    """``E_D - E_B`` along the stored trajectory: std <= ``1e-8 * |mean|``."""
    trace = model.report.heights_trace if model.report is not None else []
    if len(trace) < 2:
        trace = [model.heights, model.heights + 1e-3 * height_scale(model) * np.linspace(0, 1, model.diagram.k)]
    gaps = dual_gap_trace(model.points, model.masses, trace, model.density)
    mean = float(gaps.mean())
    std = float(gaps.std(ddof=1))
    return CheckResult("dualgap", bool(std <= 1e-8 * abs(mean)), {
        "iterates": len(gaps), "mean": mean, "std": std})


def check_montecarlo(model: TransportModel, n: int, seed: int) -> CheckResult:
    """Pushforward frequencies of ``n`` source samples within 4 binomial sigmas."""
    from .measure import sample_source

    X = sample_source(model.density, n, seed)
    idx = transport_indices(model, X)
    nu = model.masses / model.masses.sum()
    freq = np.bincount(idx, minlength=len(nu)) / n
    bound = 4.0 * np.sqrt(nu * (1 - nu) / n)
    dev = np.abs(freq - nu)
    return CheckResult("montecarlo", bool(np.all(dev <= bound)), {
        "samples": n, "max_deviation": float(dev.max()),
        "max_ratio_to_bound": float((dev / bound).max()),
        "violations": [int(i) for i in np.flatnonzero(dev > bound)]})


def lp_gap(model: TransportModel, grid: int):
    """Semi-discrete cost, grid-LP cost, grid-cell diameter and mean transport distance."""
    src = grid_discretize(model.density, grid)
    tgt = EmpiricalMeasure(model.points, model.masses)
    plan = lp_oracle(src, tgt, 2.0)
    idx = transport_indices(model, src.points)
    mean_dist = float(src.masses @ np.linalg.norm(src.points - model.points[idx], axis=1)
                      / src.masses.sum())
    return model.transport_cost, plan.cost, grid_cell_diameter(model.density.domain, grid), mean_dist


def check_lp(model: TransportModel, grid: int = 64) -> CheckResult:
    """Grid LP oracle: ``|W_sd - W_lp| <= 2 * cell_diameter * mean_distance * mass``."""
    w_sd, w_lp, diam, mean_dist = lp_gap(model, grid)
    bound = 2.0 * diam * mean_dist * model.density.total_mass
    gap = abs(w_sd - w_lp)
    return CheckResult("lp", bool(gap <= bound), {
        "grid": grid, "semi_discrete": w_sd, "lp": w_lp, "gap": gap, "bound": bound})
