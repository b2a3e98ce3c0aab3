"""Generative sampling by pushing a fixed latent density through a transport map.

A model is fitted from latent codes ``z_i`` (equal masses ``1/n``) and a latent
density ``zeta``.  Sampling draws ``z ~ zeta`` and emits the code of the power
cell containing ``z``, or its decoded ambient point when a decoder table is
attached.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .geometry import check_distinct
from .measure import RandomStream, SourceDensity, sample_source
from .potential import TransportModel, solve_transport, transport_indices
from .solver import SolverConfig


@dataclass(frozen=True, eq=False)
class LatentEmbedding:
    """Latent codes ``z_i`` with an optional decoder table ``i -> y_i``."""

    latent_points: np.ndarray
    decoder_table: Optional[np.ndarray] = None

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.latent_points, dtype=float))
        if z.ndim != 2 or len(z) == 0 or not np.all(np.isfinite(z)):
            raise InvalidInputError("latent points must be a finite (n, d) array")
        check_distinct(z)
        object.__setattr__(self, "latent_points", z)
        if self.decoder_table is not None:
            dec = np.atleast_2d(np.asarray(self.decoder_table, dtype=float))
            if len(dec) != len(z):
                raise InvalidInputError("decoder table must have one entry per latent point")
            object.__setattr__(self, "decoder_table", dec)

    @classmethod
    def identity(cls, points) -> "LatentEmbedding":
        return cls(points)

    def __len__(self):
        return len(self.latent_points)


@dataclass(frozen=True, eq=False)
class GenerativeModel:
    embedding: LatentEmbedding
    zeta: SourceDensity
    transport: TransportModel

    @property
    def wasserstein(self) -> Optional[float]:
        return self.transport.wasserstein

    def decode(self, indices) -> np.ndarray:
        table = self.embedding.decoder_table
        src = table if table is not None else self.embedding.latent_points
        return src[np.asarray(indices)]


def fit(embedding: LatentEmbedding, zeta: SourceDensity,
        solver_config: Optional[SolverConfig] = None) -> GenerativeModel:
    """Solve the transport from ``zeta`` to the uniform measure on the latent codes.

    Without an explicit ``solver_config`` the gradient tolerance is
    ``min(1e-7, 1e-6 / n)``, so every cell mass is within ``1e-6`` relative of ``1/n``.
    """
    if abs(zeta.total_mass - 1.0) > 1e-12:
        raise InvalidInputError("latent density must be a probability measure")
    n = len(embedding)
    masses = np.full(n, 1.0 / n)
    if solver_config is None:
        solver_config = SolverConfig(tol_gradient_inf=min(1e-7, 1e-6 / n))
    model = solve_transport(embedding.latent_points, masses, zeta, solver_config)
    return GenerativeModel(embedding, zeta, model)


def generate_indices(model: GenerativeModel, n_samples: int, seed) -> np.ndarray:
    if n_samples < 0:
        raise InvalidInputError("n_samples must be nonnegative")
    rs = seed if isinstance(seed, RandomStream) else RandomStream(seed)
    Z = sample_source(model.zeta, n_samples, rs)
    return transport_indices(model.transport, Z)


def generate(model: GenerativeModel, n_samples: int, seed) -> np.ndarray:
    """Draw ``n_samples`` outputs; every output is exactly one of the targets."""
    return model.decode(generate_indices(model, n_samples, seed))


@dataclass(frozen=True)
class PushforwardReport:
    n_samples: int
    counts: np.ndarray
    frequencies: np.ndarray
    masses: np.ndarray
    bounds: np.ndarray
    max_deviation: float
    violations: tuple

    @property
    def passed(self) -> bool:
        return not self.violations


def pushforward_check(model: GenerativeModel, n_samples: int, seed,
                      n_sigma: float = 4.0) -> PushforwardReport:
    """Compare empirical target frequencies with the target masses.

    Index ``i`` is flagged when ``|freq_i - nu_i|`` exceeds
    ``n_sigma * sqrt(nu_i (1 - nu_i) / N)``.
    """
    if n_samples < 1:
        raise InvalidInputError("n_samples must be positive")
    idx = generate_indices(model, n_samples, seed)
    nu = model.transport.masses / model.transport.masses.sum()
    counts = np.bincount(idx, minlength=len(nu))
    freq = counts / n_samples
    bounds = n_sigma * np.sqrt(nu * (1 - nu) / n_samples)
    dev = np.abs(freq - nu)
    return PushforwardReport(
        n_samples=n_samples,
        counts=counts,
        frequencies=freq,
        masses=nu,
        bounds=bounds,
        max_deviation=float(dev.max()),
        violations=tuple(int(i) for i in np.flatnonzero(dev > bounds)),
    )
