import math

import numpy as np
import pytest

from krlab.cost import bounded_log, truncated_linear
from krlab.estimates import (StabilityInstance, build_eta, check_derivative_identity,
                             check_prop1, check_rate_bounds, lemma4_combine, linear_fit,
                             stability_rate, track_kr, uniqueness_drive)
from krlab.fields import ConstantField, OscillatoryField, default_modulus
from krlab.measures import Grid, SignedDensity, density_from_function, lq_norm, \
    mean_zero_projection
from krlab.pde import CauchyData, eulerian_solve, lagrangian_solve
from krlab.transport import kr_distance

TWO_PI = 2 * math.pi


def test_exponent_validation():
    g = Grid(1, 32)
    rho = density_from_function(g, lambda x: np.ones_like(x))
    data = CauchyData(ConstantField([0.0]), None, rho, 1.0)
    with pytest.raises(ValueError):
        StabilityInstance(data, data, p=2.0, q=3.0)
    StabilityInstance(data, data, p=2.0, q=2.0)
    StabilityInstance(data, data, p=1.0, q=math.inf)
    StabilityInstance(data, data, p=math.inf, q=1.0)


def test_build_eta_identical_data():
    g = Grid(1, 64)
    rho0 = density_from_function(g, lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x))
    data = CauchyData(ConstantField([1.0]), None, rho0, 1.0)
    traj = eulerian_solve(data, g, n_frames=9)
    inst = StabilityInstance(data, data, p=2.0, q=2.0)
    eta = build_eta(inst, traj, traj)
    assert np.abs(eta.frames).max() == 0.0
    assert inst.perturbation_size(g) == 0.0


def test_build_eta_constant_source_difference():
    # u = 0, f1 - f2 = const: the source integral cancels rho1 - rho2 exactly
    g = Grid(1, 64)
    rho0 = density_from_function(g, lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x))
    d1 = CauchyData(ConstantField([0.0]), np.full(64, 0.7), rho0, 1.0)
    d2 = CauchyData(ConstantField([0.0]), np.full(64, 0.2), rho0, 1.0)
    t1 = eulerian_solve(d1, g, n_frames=9)
    t2 = eulerian_solve(d2, g, n_frames=9)
    inst = StabilityInstance(d1, d2, p=2.0, q=2.0)
    eta = build_eta(inst, t1, t2)
    assert np.abs(eta.frames).max() < 1e-13
    assert eta.projection_magnitudes.max() < 1e-13


def test_build_eta_initial_perturbation_triangle():
    g = Grid(1, 128)
    rho0 = density_from_function(g, lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x))
    bump = density_from_function(g, lambda x: np.exp(-np.sin(np.pi * x) ** 2 * 40))
    rho0b = SignedDensity(g, rho0.values + 0.1 * bump.values)
    d1 = CauchyData(ConstantField([1.0]), None, rho0, 0.5)
    d2 = CauchyData(ConstantField([1.0]), None, rho0b, 0.5)
    t1 = eulerian_solve(d1, g, n_frames=9)
    t2 = eulerian_solve(d2, g, n_frames=9)
    inst = StabilityInstance(d1, d2, p=2.0, q=2.0)
    eta = build_eta(inst, t1, t2)
    assert np.abs(eta.frames[0]).max() < 1e-14  # eta(0) = 0
    drho = lq_norm(SignedDensity(g, rho0.values - rho0b.values), 1)
    for k in range(eta.n_frames):
        rho_diff = lq_norm(SignedDensity(g, t1.frames[k] - t2.frames[k]), 1)
        assert lq_norm(eta.frame(k), 1) <= rho_diff + drho + 1e-12


def test_build_eta_rejects_mismatched_grids():
    g1, g2 = Grid(1, 64), Grid(1, 32)
    rho1 = density_from_function(g1, lambda x: np.ones_like(x))
    rho2 = density_from_function(g2, lambda x: np.ones_like(x))
    d1 = CauchyData(ConstantField([0.0]), None, rho1, 1.0)
    d2 = CauchyData(ConstantField([0.0]), None, rho2, 1.0)
    t1 = eulerian_solve(d1, g1, n_frames=5)
    t2 = eulerian_solve(d2, g2, n_frames=5)
    inst = StabilityInstance(d1, d1, p=2.0, q=2.0)
    with pytest.raises(ValueError):
        build_eta(inst, t1, t2)


def test_track_kr_frozen_step():
    # frozen eta: the series is constant and equals the step's distance
    g = Grid(1, 256)
    step = density_from_function(g, lambda x: np.where(x < 0.5, 1.0, -1.0))
    d = CauchyData(ConstantField([0.0]), None, step, 1.0)
    traj = eulerian_solve(d, g, n_frames=5)
    inst = StabilityInstance(d, CauchyData(ConstantField([0.0]), None,
                                           SignedDensity(g, np.zeros(256)), 1.0),
                             p=2.0, q=2.0)
    eta = build_eta(inst, traj, eulerian_solve(inst.data2, g, n_frames=5))
    series = track_kr(eta, 0.01, 0.5)
    direct = kr_distance(mean_zero_projection(step), bounded_log(0.01, 0.5))
    assert np.allclose(series, direct, rtol=1e-12)


def test_rate_bounds_constant_field():
    g = Grid(1, 64)
    rng = np.random.default_rng(3)
    eta = mean_zero_projection(SignedDensity(g, rng.standard_normal(64)))
    rep = check_rate_bounds(eta, ConstantField([2.0]), 0.05, 0.5, p=2.0, q=2.0)
    assert rep.lhs_pairing == 0.0
    assert rep.difference_quotient == 0.0


def test_rate_bounds_chain_random():
    g = Grid(1, 128, length=TWO_PI)
    rng = np.random.default_rng(4)
    u = OscillatoryField(2)
    for _ in range(5):
        eta = mean_zero_projection(SignedDensity(g, rng.standard_normal(128)))
        rep = check_rate_bounds(eta, u, 0.05, 1.0, p=2.0, q=2.0)
        assert rep.chain_slack <= 1e-9
        assert rep.c_l3 is not None and rep.c_l3 > 0


def test_lemma4_two_atom_closed_form():
    # everything in closed form for a two-atom density
    g = Grid(1, 64)
    v = np.zeros(64)
    i, j = 10, 29
    v[i], v[j] = 1.0 / g.h, -1.0 / g.h   # masses +-1
    eta = SignedDensity(g, v)
    dist = (j - i) * g.h
    delta, radius, eps = 0.01, 1.0, 0.2
    d_log = kr_distance(eta, bounded_log(delta, radius))
    assert d_log == pytest.approx(math.log(dist / delta + 1.0), rel=1e-12)
    d_trunc = kr_distance(eta, truncated_linear(radius))
    assert d_trunc == pytest.approx(dist, rel=1e-12)
    bound = lemma4_combine(d_log, lq_norm(eta, 1), eps, delta, radius)
    expected = delta * math.exp(d_log / eps) * 2.0 + eps * radius \
        + radius * d_log / math.log(radius / delta + 1.0)
    assert bound == pytest.approx(expected, rel=1e-12)
    assert d_trunc <= bound + 1e-9


def test_lemma4_zero_density():
    bound = lemma4_combine(0.0, 0.0, 0.2, 0.01, 1.0)
    assert bound == pytest.approx(0.2 * 1.0)


def test_lemma4_overflow_guard():
    bound = lemma4_combine(50.0, 1.0, 1e-3, 0.01, 1.0)
    assert math.isinf(bound)
    with pytest.raises(ValueError):
        lemma4_combine(1.0, 1.0, -0.1, 0.01, 1.0)


def test_uniqueness_drive_synthetic():
    # D(delta) = m log(dbar/delta + 1) with tiny mass: bounds fall; the
    # BV-scale coefficient makes them explode
    deltas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    small = {d: 1e-6 * math.log(0.01 / d + 1.0) for d in deltas}
    drive = uniqueness_drive(small, eta_l1=2e-6)
    assert drive.monotone
    assert drive.reduction > 1.5
    big = {d: 0.5 * abs(math.log(d)) for d in deltas}
    ctrl = uniqueness_drive(big, eta_l1=1.0)
    assert not ctrl.monotone
    assert ctrl.bounds_dr[-1] > 10 * ctrl.bounds_dr[0]


def test_stability_rate_synthetic():
    rs = [1e-2, 1e-3, 1e-4]
    report = stability_rate(rs, [0.3 * r for r in rs])
    assert report.c_growth <= 1.0 + 1e-12
    assert report.dominated.all()
    # slower-than-1/log decay must register as growth
    bad = stability_rate(rs, [0.05, 0.04, 0.035])
    assert bad.c_growth > 3.0


def test_linear_fit_exact_line():
    slope, intercept, r2 = linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert slope == pytest.approx(2.0)
    assert intercept == pytest.approx(1.0)
    assert r2 == pytest.approx(1.0)


def test_derivative_identity_twin():
    # twin solvers for the same oscillatory instance; the flux is u * eta
    g = Grid(1, 64, length=TWO_PI)
    field = OscillatoryField(1)
    rho0 = density_from_function(g, lambda x: 1.0 + 0.3 * np.sin(x))
    data = CauchyData(field, None, rho0, 1.0)
    t1 = lagrangian_solve(data, g, n_frames=17)
    t2 = eulerian_solve(data, g, cfl=0.5, n_frames=17)
    inst = StabilityInstance(data, CauchyData(field, None, rho0, 1.0), p=2.0, q=2.0)
    eta = build_eta(inst, t1, t2)
    rep = check_derivative_identity(inst, eta, t2, delta=0.05, radius=math.pi)
    # both sides are O(solver error) series; time-integrated agreement
    assert rep.rel_gap < 0.6
    assert np.isfinite(rep.lhs).all() and np.isfinite(rep.rhs).all()


def test_check_prop1_zero_twin():
    g = Grid(1, 64)
    rho0 = density_from_function(g, lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x))
    data = CauchyData(ConstantField([1.0]), None, rho0, 0.5)
    traj = eulerian_solve(data, g, n_frames=9)
    inst = StabilityInstance(data, data, p=2.0, q=2.0)
    rep = check_prop1(inst, traj, traj, [1e-1, 1e-2], 0.5)
    assert rep.sup_d.max() == 0.0
    assert rep.c1_joint == 0.0 and rep.c2_joint == 0.0
