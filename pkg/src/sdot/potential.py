"""Brenier and Kantorovich potentials, transport map and Wasserstein value.

Conventions: cost ``c(x, y) = |x - y|^2 / 2``, power distance
``pow(x, y_i) = |x - y_i|^2 / 2 - psi_i`` and ``psi_i = h_i + |y_i|^2 / 2``.  With
these, ``argmin_i pow(x, y_i) = argmax_i <x, y_i> + h_i`` and the Kantorovich
potential is ``phi(x) = |x|^2 / 2 - u_h(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError, InvalidStateError, OutOfDomainError, UndefinedGradientError
from .geometry import EPS_GEOM, PowerDiagram, build_power_diagram, polygon_moment, upper_envelope
from .measure import SourceDensity
from .solver import SolverConfig, SolverReport, alexandrov_potential, newton_solve


def _sq(Y):
    return 0.5 * (Y * Y).sum(axis=-1)


def weights_from_heights(points, heights) -> np.ndarray:
    """``psi_i = h_i + |y_i|^2 / 2``."""
    return np.asarray(heights, dtype=float) + _sq(np.asarray(points, dtype=float))


def heights_from_weights(points, weights) -> np.ndarray:
    """``h_i = psi_i - |y_i|^2 / 2``."""
    return np.asarray(weights, dtype=float) - _sq(np.asarray(points, dtype=float))


@dataclass(frozen=True, eq=False)
class BrenierPotential:
    """``u_h(x) = max_i <x, y_i> + h_i``."""

    points: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.points, dtype=float))
        h = np.asarray(self.heights, dtype=float).reshape(-1)
        if len(Y) != len(h):
            raise InvalidInputError("need one height per site")
        object.__setattr__(self, "points", Y)
        object.__setattr__(self, "heights", h)

    @property
    def weights(self) -> np.ndarray:
        return weights_from_heights(self.points, self.heights)

    def __call__(self, x):
        return u_eval(self, x)[0]


@dataclass(frozen=True, eq=False)
class KantorovichPotentialDiscrete:
    """Discrete dual weights ``psi`` attached to the sites."""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_brenier(cls, u: BrenierPotential) -> "KantorovichPotentialDiscrete":
        return cls(u.points, u.weights)

    def to_brenier(self) -> BrenierPotential:
        return BrenierPotential(self.points, heights_from_weights(self.points, self.weights))


def u_eval(potential: BrenierPotential, x):
    """Value of ``u_h`` and the index of the maximizing plane (ties -> lowest index).

    Accepts a single point or an (n, d) array; returns scalars for a single point.
    """
    x = np.asarray(x, dtype=float)
    vals, idx = upper_envelope(potential.points, potential.heights, x)
    if x.ndim == 1:
        return float(vals[0]), int(idx[0])
    return vals, idx


def kantorovich_eval(potential: BrenierPotential, x):
    """``phi(x) = |x|^2 / 2 - u_h(x)``."""
    x = np.asarray(x, dtype=float)
    u, _ = u_eval(potential, x)
    return _sq(x) - u


def c_transform_discrete(points, weights, x):
    """``psi^c(x) = min_j |x - y_j|^2 / 2 - psi_j``."""
    Y = np.asarray(points, dtype=float)
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    d = X[:, None, :] - Y[None, :, :]
    vals = (0.5 * (d * d).sum(-1) - np.asarray(weights, dtype=float)).min(axis=1)
    return float(vals[0]) if x.ndim == 1 else vals


def power_distance(x, site, weight) -> float:
    """``|x - y_i|^2 / 2 - psi_i``."""
    d = np.asarray(x, dtype=float) - np.asarray(site, dtype=float)
    return 0.5 * float(d @ d) - float(weight)


@dataclass(frozen=True, eq=False)
class TransportModel:
    """Solved semi-discrete transport from ``density`` to the weighted sites."""

    potential: BrenierPotential
    masses: np.ndarray
    diagram: PowerDiagram
    density: SourceDensity
    transport_cost: float
    wasserstein: Optional[float]
    converged: bool
    report: Optional[SolverReport] = None

    @property
    def points(self) -> np.ndarray:
        return self.potential.points

    @property
    def heights(self) -> np.ndarray:
        return self.potential.heights

    @property
    def weights(self) -> np.ndarray:
        return self.potential.weights


def make_model(points, masses, heights, density: SourceDensity, converged: bool,
               report: Optional[SolverReport] = None,
               diagram: Optional[PowerDiagram] = None) -> TransportModel:
    """Bundle heights with their diagram and transport values."""
    Y = np.asarray(points, dtype=float)
    h = np.asarray(heights, dtype=float)
    if diagram is None:
        diagram = build_power_diagram(Y, h, density.domain, density)
    u = BrenierPotential(Y, h)
    cost = float(np.sum(diagram.costs))
    model = TransportModel(u, np.asarray(masses, dtype=float), diagram, density, cost, None,
                           converged, report)
    if converged:
        object.__setattr__(model, "wasserstein", wasserstein(model))
    return model


def solve_transport(points, masses, density: SourceDensity,
                    config: Optional[SolverConfig] = None, h0=None) -> TransportModel:
    """Run the Newton solver and wrap the result in a ``TransportModel``."""
    h, D, report = newton_solve(points, masses, density, config, h0=h0)
    return make_model(points, masses, h, density, report.converged, report, D)


def transport_apply(model: TransportModel, x):
    """Image of ``x`` under ``T = grad u_h``: the site of the maximizing plane.

    Raises
    ------
    OutOfDomainError
        If a point lies outside the source domain.
    """
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    if not np.all(model.density.domain.contains(X, tol=1e-9)):
        raise OutOfDomainError("transport map is defined on the source domain only")
    _, idx = upper_envelope(model.points, model.heights, X)
    out = model.points[idx]
    return out[0] if x.ndim == 1 else out


def transport_indices(model: TransportModel, X, chunk: int = 65536) -> np.ndarray:
    """Target indices of many source points, chunked to bound memory."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(len(X), dtype=np.int64)
    for s in range(0, len(X), chunk):
        _, out[s:s + chunk] = upper_envelope(model.points, model.heights, X[s:s + chunk])
    return out


def _identity(v):
    return v


def dg_map(model: TransportModel, x, kernel_gradient: Callable = _identity,
           kernel_gradient_inverse: Callable = _identity):
    """``T(x) = x - (grad k)^{-1}(grad phi(x))`` for a cost ``k(x - y)``.

    ``grad phi`` is taken analytically from the cell containing ``x`` as
    ``grad k(x - y_i)``; with the default quadratic kernel both gradients are the
    identity and the result is ``y_i``.

    Raises
    ------
    UndefinedGradientError
        If ``x`` lies within the geometric tolerance of a cell boundary.
    """
    x = np.asarray(x, dtype=float)
    Y = model.points
    vals = Y @ x + model.heights
    order = np.argsort(-vals, kind="stable")
    i = int(order[0])
    if len(Y) > 1:
        j = int(order[1])
        gap = (vals[i] - vals[j]) / np.linalg.norm(Y[i] - Y[j])
        if gap <= EPS_GEOM * model.density.domain.diameter:
            raise UndefinedGradientError("point lies on a cell boundary")
    grad_phi = kernel_gradient(x - Y[i])
    return x - kernel_gradient_inverse(grad_phi)


def transport_cost(model: TransportModel) -> float:
    """``sum_j int_{W_j} |x - y_j|^2 / 2 dmu``."""
    return float(np.sum(model.diagram.costs))


def dual_energy(points, weights, masses, density: SourceDensity,
                diagram: Optional[PowerDiagram] = None) -> float:
    """``sum_i psi_i (nu_i - w_i(psi)) + sum_j int_{W_j(psi)} c(x, y_j) dmu``."""
    Y = np.asarray(points, dtype=float)
    psi = np.asarray(weights, dtype=float)
    if diagram is None:
        diagram = build_power_diagram(Y, heights_from_weights(Y, psi), density.domain, density)
    nu = np.asarray(masses, dtype=float)
    return float(psi @ (nu - diagram.measures) + np.sum(diagram.costs))


def second_moment(density: SourceDensity) -> float:
    """``int |x|^2 / 2 dmu`` over the whole domain."""
    return polygon_moment(density.domain, lambda p: _sq(p), density)


def wasserstein(model: TransportModel, zeta: Optional[SourceDensity] = None) -> float:
    """``int phi dzeta + sum_j nu_j psi_j`` at the solved heights.

    With target masses ``1/n`` the last term is the plain average of ``psi``.

    Raises
    ------
    InvalidStateError
        If the model is not solved, or ``zeta`` is not the density it was solved for.
    """
    if not model.converged:
        raise InvalidStateError("Wasserstein value needs a solved model")
    if zeta is not None and zeta is not model.density:
        same = (zeta.total_mass == model.density.total_mass
                and np.array_equal(zeta.domain.vertices, model.density.domain.vertices)
                and zeta.is_uniform == model.density.is_uniform)
        if not same:
            raise InvalidStateError("model was solved against a different source density")
    dens = model.density
    int_phi = second_moment(dens) - alexandrov_potential(model.points, model.heights, dens,
                                                        model.diagram)
    return float(int_phi + model.masses @ model.weights)
