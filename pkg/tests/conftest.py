import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sdot.geometry import ConvexPolygon
from sdot.measure import RandomStream, SourceDensity, sample_gaussian_mixture, two_cluster_spec
from sdot.potential import solve_transport
from sdot.solver import SolverConfig

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def square():
    """[-1, 1]^2 with mass one (density 1/4)."""
    return ConvexPolygon.square(-1, -1, 1, 1)


@pytest.fixture
def uniform_square(square):
    return SourceDensity.uniform(square)


@pytest.fixture
def two_sites():
    return np.array([[-1.0, 0.0], [1.0, 0.0]])


def random_instance(seed, k=16, dirichlet=True):
    """Sites in the unit square and target masses for a uniform unit-square source."""
    rs = RandomStream(seed)
    Y = rs.uniform((k, 2))
    if dirichlet:
        g = -np.log1p(-rs.uniform(k))  # exponential draws give a flat Dirichlet
        nu = g / g.sum()
        nu = 0.5 / k + 0.5 * nu  # keep every mass away from zero
        nu /= nu.sum()
    else:
        nu = np.full(k, 1.0 / k)
    return Y, nu, SourceDensity.uniform(ConvexPolygon.square(0, 0, 1, 1))


@pytest.fixture(scope="session")
def k16_model():
    Y, nu, dens = random_instance(2024)
    return solve_transport(Y, nu, dens)


@pytest.fixture(scope="session")
def cluster_atoms():
    emp, labels = sample_gaussian_mixture(two_cluster_spec(), 128, 7, return_labels=True)
    return emp, labels


@pytest.fixture(scope="session")
def cluster_density():
    return SourceDensity.uniform(ConvexPolygon.square(1000, 1000, 3000, 3000))


@pytest.fixture(scope="session")
def cluster_model(cluster_atoms, cluster_density):
    emp, _ = cluster_atoms
    return solve_transport(emp.points, emp.masses, cluster_density,
                           SolverConfig(tol_gradient_inf=1e-6 / 128))
