import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsdrift.field_core import Cone, Grid, GridField
from hsdrift.regularity_diag import MonotoneQuery, check_eps_a_monotone
from hsdrift.supconv import (BarrierParams, RadiusField, ScaleError, assemble_barrier, build_radius_phi_eta, radial_identity_residual, section_exponents,
                             solve_phi_profile, sup_convolve)

GRID = Grid.box((-0.5, -0.5), (0.5, 0.5), 64, 2)


def _interior(grid, margin):
    x = grid.coords()
    return np.all(np.abs(x) <= 0.5 - margin, axis=-1)


@given(st.floats(0.0, 0.15))
@settings(max_examples=15, deadline=None)
def test_supconv_ramp_is_shifted_ramp(r):
    x = GRID.coords()
    u = GridField(GRID, np.maximum(-x[..., 1], 0.0))
    nodes = _interior(GRID, 0.16)
    v = sup_convolve(u, r, nodes=nodes)
    # the sup over B_r(x) of (-x_d)_+ is attained at x - r e_d
    assert np.max(np.abs(v.values[nodes] - np.maximum(-x[..., 1] + r, 0.0)[nodes])) < 1e-12


def test_supconv_small_radius_close_to_u():
    x = GRID.coords()
    u = GridField(GRID, np.sin(3 * x[..., 0]) * np.cos(2 * x[..., 1]) + 1.0)
    nodes = _interior(GRID, 0.05)
    v = sup_convolve(u, 0.02, nodes=nodes)
    lip = np.max(np.linalg.norm(u.gradient(), axis=-1))
    diff = v.values[nodes] - u.values[nodes]
    assert np.all(diff >= -1e-14)
    assert np.max(diff) <= lip * 0.02 + GRID.spacing ** 2 * 13


def test_supconv_radius_field_and_zero():
    x = GRID.coords()
    u = GridField(GRID, 1.0 - (x ** 2).sum(-1))
    nodes = _interior(GRID, 0.1)
    assert np.array_equal(sup_convolve(u, 0.0, nodes=nodes).values, u.values)
    v = sup_convolve(u, RadiusField.constant(GRID, 0.05), nodes=nodes)
    # radial cap: the sup over the ball is at the point closest to the centre.
    # Error budget: bilinear interpolation of |x|^2 (h^2 / 2) plus the sphere
    # sampled at spacing h/2, which misses the maximiser by an angle <= h / (4 r)
    r = np.linalg.norm(x, axis=-1)
    exact = 1.0 - np.maximum(r - 0.05, 0.0) ** 2
    h = GRID.spacing
    grad = 2 * (0.4 * math.sqrt(2) + 0.05)
    assert np.max(np.abs(v.values[nodes] - exact[nodes])) <= h ** 2 / 2 + grad * h ** 2 / (32 * 0.05)


def test_supconv_keeps_cone_monotonicity():
    theta = math.pi / 3
    x = GRID.coords()
    nu = np.array([math.sin(0.2), -math.cos(0.2)])
    u = GridField(GRID, np.maximum(x @ nu, 0.0) ** 1.5)
    nodes = _interior(GRID, 0.1)
    v = sup_convolve(u, 0.05, nodes=nodes)
    win = ((-0.3, -0.3), (0.3, 0.1))
    rep = check_eps_a_monotone(v, MonotoneQuery(Cone.down(theta - 0.2), 0.1, 0.0, win))
    assert rep.passed


def test_section_exponents_constraints():
    ex = section_exponents(1.5, 0.75)
    lo, hi = ex["alpha1_interval"]
    assert lo < ex["alpha1"] < hi
    assert ex["gamma1"] - ex["gamma2"] > 4 * ex["kappa"]
    assert ex["alpha2_interval"][0] < ex["alpha2"] < ex["alpha2_interval"][1]
    with pytest.raises(ValueError):
        section_exponents(1.9, 0.5)


STRIP = Grid((-1.05, -0.05), 1 / 512, (1076, 52))


def test_phi_eta_zero_is_one():
    rf = build_radius_phi_eta(0.0, BarrierParams(eps=2 ** -8), STRIP, g_fn=lambda xp: 0 * xp)
    assert rf.report.passed and np.all(rf.phi == 1.0)


def test_phi_eta_one_properties():
    p = BarrierParams(eps=2 ** -8)
    rf = build_radius_phi_eta(1.0, p, STRIP, g_fn=lambda xp: 0 * xp)
    m = rf.report.measured
    ex = p.exponents()
    assert rf.report.passed
    assert all(v == 0 for v in m["failures"].values())
    assert m["grad_sup"] <= p.A2 * p.eps ** (ex["gamma2"] - ex["gamma1"])
    assert m["min_differential"] >= 0


def test_phi_eta_scale_guard():
    coarse = Grid((-1.05, -0.2), 1 / 16, (34, 7))
    with pytest.raises(ScaleError):
        build_radius_phi_eta(1.0, BarrierParams(eps=2 ** -8), coarse, g_fn=lambda xp: 0 * xp)


def test_radial_identity_candidate():
    # phi = (a + b ln r)^(1/(1-A0)) turns the differential inequality into an equality
    prof = solve_phi_profile(2.0, math.pi / 3, 2).meta["profile"]
    r = np.linspace(prof.r_in, 1.0, 200)
    assert np.max(np.abs(radial_identity_residual(prof, r))) < 1e-6


def test_phi_profile_boundary_values_and_monotone():
    theta = math.pi / 3
    rf = solve_phi_profile(2.0, theta, 2)
    prof = rf.meta["profile"]
    assert prof(1.0) == pytest.approx(math.sin(theta) / 2, rel=1e-14)
    assert prof(prof.r_in) == pytest.approx(prof.A_theta, rel=1e-12)
    assert prof.A_theta > math.sin(theta) / 2
    r = np.linspace(prof.r_in, 1.0, 500)
    assert np.all(np.diff(prof(r)) < 0)


def test_phi_profile_value_at_fifth_limit():
    # Phi(1/5) increases with A_theta to (sin th / 2) rho^(1/(1-A0)), rho = ln(r1/0.2)/ln r1
    theta = math.pi / 3
    r1 = math.sin(theta) / 10
    limit = math.sin(theta) / 2 * (math.log(r1 / 0.2) / math.log(r1)) ** (1 / (1 - 2.0))
    rf = solve_phi_profile(2.0, theta, 2)
    assert rf.meta["limit_at_fifth"] == pytest.approx(limit, rel=1e-12)
    assert limit < 3.0 and not rf.meta["calibrated"]
    assert rf.meta["value_at_fifth"] >= 0.99 * limit


def test_phi_profile_grid_residual():
    g = Grid.box(-1.0, 1.0, 256, 2)
    rf = solve_phi_profile(2.0, math.pi / 3, 2, grid=g)
    prof = rf.meta["profile"]
    r = np.linalg.norm(g.coords(), axis=-1)
    psi = rf.phi ** (1 - prof.A0)
    h = g.spacing
    inner = (r > prof.r_in + 2 * h) & (r < 1 - 2 * h)
    L = np.zeros(g.shape)
    L[1:-1, 1:-1] = (psi[2:, 1:-1] + psi[:-2, 1:-1] + psi[1:-1, 2:] + psi[1:-1, :-2] - 4 * psi[1:-1, 1:-1]) / h ** 2
    # psi = a + b ln r is harmonic; the 5-point truncation is h^2/12 (d_x^4 + d_y^4) psi
    # and each fourth derivative of ln r is at most 6 / r^4 in size
    bound = h ** 2 / 12 * 2 * 6 * abs(prof.b) / np.maximum(r - 2 * h, h) ** 4
    assert np.all(np.abs(L[inner]) <= bound[inner])


def _flat(cells=1088, half=1.0625, height=0.0625):
    g = Grid.box((-half, -height), (half, height), cells, 2)
    return GridField(g, np.maximum(-g.coords()[..., 1], 0.0))


def test_barrier_scale_guard():
    with pytest.raises(ScaleError):
        assemble_barrier(_flat(68), None, BarrierParams(eps=2 ** -7))


def test_barrier_rejects_non_monotone():
    g = Grid.box((-1.0625, -0.0625), (1.0625, 0.0625), 1088, 2)
    x = g.coords()
    nu = np.array([math.sin(1.3), -math.cos(1.3)])
    with pytest.raises(ValueError):
        assemble_barrier(GridField(g, np.maximum(x @ nu, 0.0)), None, BarrierParams(eps=2 ** -7))
