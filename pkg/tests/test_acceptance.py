"""Acceptance criteria, one test each, with a PASS/FAIL line printed per criterion."""

import math
import time

import numpy as np
import pytest

from conftest import random_instance
from sdot.checks import dual_gap_trace, fd_gradient, fd_hessian, lp_gap
from sdot.genmodel import LatentEmbedding, fit, generate_indices
from sdot.geometry import ConvexPolygon, build_power_diagram
from sdot.measure import RandomStream, SourceDensity, sample_gaussian_mixture, sample_source, two_cluster_spec
from sdot.potential import (dg_map, kantorovich_eval, solve_transport,
                            transport_apply, transport_indices, u_eval, wasserstein)
from sdot.solver import SolverConfig, gradient, hessian, newton_solve, voronoi_heights


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def admissible_instances(count, k=16):
    """Random sites, Dirichlet masses and perturbed Voronoi heights with no empty cell."""
    out = []
    seed = 0
    while len(out) < count:
        Y, nu, dens = random_instance(1000 + seed, k)
        h = voronoi_heights(Y) + 2e-3 * RandomStream(1000 + seed, 9).normal(k)
        seed += 1
        D = build_power_diagram(Y, h, dens.domain, dens)
        if np.all(D.measures > 0):
            out.append((Y, nu, h, dens))
    return out


def test_criterion_1_cluster_reproduction(report):
    emp, labels = sample_gaussian_mixture(two_cluster_spec(), 128, 7, return_labels=True)
    dens = SourceDensity.uniform(ConvexPolygon.square(1000, 1000, 3000, 3000))
    t0 = time.process_time()
    gm = fit(LatentEmbedding(emp.points), dens)
    elapsed = time.process_time() - t0
    rep = gm.transport.report
    w = gm.transport.diagram.measures
    grad = float(np.abs(emp.masses - w).max())
    rel = float(np.abs(w * 128 - 1).max())

    n = 10_000
    idx = generate_indices(gm, n, 2024)
    samples = gm.decode(idx)
    to_first = np.linalg.norm(samples, axis=1) < np.linalg.norm(samples - [40, 40], axis=1)
    p = float(to_first.mean())
    # two sampling stages: the 128 atoms, then the 10^4 generated draws
    sigma = math.sqrt(0.25 / 128 + 0.25 / n)
    # generated draws against the atom split actually present
    q = float(np.mean(labels == 0))
    sigma_q = math.sqrt(q * (1 - q) / n)
    ok = (rep.converged and rep.iterations <= 50 and grad <= 1e-7 and rel <= 1e-6
          and elapsed <= 10.0 and 0 < p < 1 and abs(p - 0.5) <= 4 * sigma
          and abs(p - q) <= 4 * sigma_q)
    report(1, "cluster reproduction", ok,
           f"iterations={rep.iterations}, |nu-w|_inf={grad:.2e}, max rel cell error={rel:.2e}, "
           f"cpu={elapsed:.2f}s, first-cluster share={p:.4f} (atoms {q:.4f})")


def test_criterion_2_gradient_oracle(report):
    worst = 0.0
    for Y, nu, h, dens in admissible_instances(20):
        fd = fd_gradient(Y, nu, h, dens, 1e-6)
        worst = max(worst, float(np.abs(fd - gradient(Y, nu, h, dens)).max()))
    report(2, "gradient oracle", worst <= 1e-6, f"max |FD - grad| over 20 instances = {worst:.2e}")


def test_criterion_3_hessian_oracle(report):
    worst = 0.0
    max_eig = -np.inf
    rows_exact = True
    for Y, nu, h, dens in admissible_instances(20):
        H = hessian(Y, h, dens).toarray()
        fd = fd_hessian(Y, nu, h, dens, 1e-5)
        worst = max(worst, float(np.abs(fd - H).max()))
        max_eig = max(max_eig, float(np.linalg.eigvalsh(H).max()))
        for i in range(len(H)):
            off = np.delete(H[i], i)
            # the diagonal is the correctly rounded negated sum of the row
            rows_exact &= H[i, i] == -math.fsum(off)
            rows_exact &= abs(math.fsum(H[i])) <= 0.5 * np.spacing(abs(H[i, i]))
    ok = worst <= 1e-5 and rows_exact and max_eig <= 1e-10
    report(3, "Hessian oracle", ok,
           f"max |FD - H| = {worst:.2e}, rows exact = {rows_exact}, max eigenvalue = {max_eig:.2e}")


def test_criterion_4_dual_gap_constancy(report):
    dens = SourceDensity.uniform(ConvexPolygon.square(1000, 1000, 3000, 3000))
    cfg = SolverConfig(tol_gradient_inf=1e-6 / 128)
    worst = 0.0
    lengths = []
    for seed in (7, 11, 19):
        emp = sample_gaussian_mixture(two_cluster_spec(), 128, seed)
        _, _, rep = newton_solve(emp.points, emp.masses, dens, cfg)
        if len(rep.heights_trace) < 10:
            continue  # the criterion concerns trajectories of at least ten iterates
        lengths.append(len(rep.heights_trace))
        gaps = dual_gap_trace(emp.points, emp.masses, rep.heights_trace, dens)
        worst = max(worst, float(gaps.std(ddof=1) / abs(gaps.mean())))
    ok = len(lengths) >= 2 and worst <= 1e-8
    report(4, "dual gap constancy", ok, f"iterates per trajectory = {lengths}, max std/|mean| = {worst:.2e}")


def test_criterion_5_lp_oracle(report):
    Y, nu, dens = random_instance(3)
    model = solve_transport(Y, nu, dens)
    w_sd, lp64, diam64, mean64 = lp_gap(model, 64)
    _, lp128, _, _ = lp_gap(model, 128)
    gap64 = abs(w_sd - lp64)
    gap128 = abs(w_sd - lp128)
    bound = 2 * diam64 * mean64
    ok = model.converged and gap64 <= bound and gap128 < gap64
    report(5, "LP oracle equivalence", ok,
           f"gap64={gap64:.3e} <= bound {bound:.3e}, gap128={gap128:.3e}")


def test_criterion_6_potential_identities(report, k16_model):
    rs = RandomStream(66)
    X = sample_source(k16_model.density, 10_000, rs)
    u_val, plane = u_eval(k16_model.potential, X)
    half = 0.5 * np.sum(X**2, axis=1)
    identity_err = float(np.abs(u_val + kantorovich_eval(k16_model.potential, X) - half).max())
    identity_ok = identity_err <= 4 * np.spacing(half.max())
    T = transport_apply(k16_model, X)
    dg_ok = all(np.array_equal(dg_map(k16_model, x), t) for x, t in zip(X, T))
    Y, psi = k16_model.points, k16_model.weights
    pw = 0.5 * ((X[:, None, :] - Y[None]) ** 2).sum(-1) - psi
    argmin_ok = np.array_equal(pw.argmin(axis=1), plane)
    report(6, "potential identities", identity_ok and dg_ok and argmin_ok,
           f"max |u + phi - |x|^2/2| = {identity_err:.1e}, dg_map == T: {dg_ok}, "
           f"argmin pow == argmax plane: {argmin_ok}")


def test_criterion_7_measure_preservation(report, k16_model, cluster_model):
    n = 1_000_000
    worst = 0.0
    for m, seed in ((k16_model, 70), (cluster_model, 71)):
        idx = transport_indices(m, sample_source(m.density, n, seed))
        nu = m.masses / m.masses.sum()
        freq = np.bincount(idx, minlength=len(nu)) / n
        worst = max(worst, float((np.abs(freq - nu) / np.sqrt(nu * (1 - nu) / n)).max()))
    report(7, "measure preservation", worst <= 4.0, f"max deviation = {worst:.2f} binomial sigmas")


def test_criterion_8_analytic_fixtures(report):
    sq = ConvexPolygon.square(-1, -1, 1, 1)
    dens = SourceDensity.uniform(sq)
    Y = np.array([[-1.0, 0.0], [1.0, 0.0]])
    h = np.array([0.0, 0.5])
    D = build_power_diagram(Y, h, sq, dens)
    g = gradient(Y, np.array([0.5, 0.5]), h, dens, D)
    H = hessian(Y, h, dens, D).toarray()
    single = solve_transport(np.zeros((1, 2)), np.ones(1), dens)
    w1 = wasserstein(single)
    errs = [np.abs(D.measures - [0.375, 0.625]).max(), np.abs(g - [0.125, -0.125]).max(),
            np.abs(H - [[-0.25, 0.25], [0.25, -0.25]]).max(), abs(w1 - 1 / 3)]
    report(8, "analytic fixtures", max(errs) <= 1e-12,
           f"errors w={errs[0]:.1e}, grad={errs[1]:.1e}, H={errs[2]:.1e}, W={errs[3]:.1e}")
