import math

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import lpmv
from hypothesis import given, settings
from hypothesis import strategies as st

from hsdrift.cone_harmonics import (beta_theta, cap_eigenvalue, cone_harmonic_field, cone_table,
                                    theta_beta_closed_2d, theta_for_beta)
from hsdrift.field_core import Grid


def test_closed_form_limits():
    assert theta_beta_closed_2d(1.5) == (pytest.approx(math.pi / 3), 0.0)
    assert theta_beta_closed_2d(1 + 1e-9)[0] == pytest.approx(math.pi / 2, abs=1e-8)
    assert theta_beta_closed_2d(2 - 1e-9)[0] == pytest.approx(math.pi / 4, abs=1e-8)


@pytest.mark.parametrize("theta,beta", [(math.pi / 2, 1.0), (math.pi / 4, 2.0), (math.pi / 3, 1.5),
                                        (math.pi / 6, 3.0)])
def test_beta_2d(theta, beta):
    assert beta_theta(theta, 2).beta == pytest.approx(beta, abs=1e-12)


@pytest.mark.parametrize("theta", [math.pi / 6, math.pi / 4, math.pi / 3, math.pi / 2])
def test_eigen_path_matches_closed_form(theta):
    num = beta_theta(theta, 2, numeric=True).beta
    assert num == pytest.approx(math.pi / (2 * theta), abs=1e-6)


def test_hemisphere_3d():
    ce = beta_theta(math.pi / 2, 3)
    assert ce.lambda1 == pytest.approx(2.0, abs=1e-6)
    assert ce.beta == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("theta", [math.pi / 4, math.pi / 3, 2.0])
def test_3d_cap_against_legendre(theta):
    # Dirichlet cap in S^2: lambda_1 = nu (nu + 1) with P_nu(cos theta) = 0 (first root in nu)
    nu = brentq(lambda n: lpmv(0, n, math.cos(theta)), 0.05, _first_sign_change(theta))
    assert cap_eigenvalue(theta, 3) == pytest.approx(nu * (nu + 1), rel=1e-7)


def _first_sign_change(theta):
    grid = np.linspace(0.05, 20, 4000)
    vals = lpmv(0, grid, math.cos(theta))
    k = np.nonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))[0][0]
    return grid[k + 1]


def test_3d_quarter_cone_frozen():
    assert cap_eigenvalue(math.pi / 4, 3) == pytest.approx(9.039689488374984, rel=1e-9)


@given(st.floats(1.05, 2.95))
@settings(max_examples=25, deadline=None)
def test_theta_for_beta_inverts(beta):
    assert beta_theta(theta_for_beta(beta, 2), 2).beta == pytest.approx(beta, rel=1e-9)


def test_cone_table_rows():
    rows = cone_table([math.pi / 4, math.pi / 2], 2)
    assert [r["beta"] for r in rows] == pytest.approx([2.0, 1.0])
    assert all(r["theta_inverse_error"] < 1e-8 for r in rows)


def test_cone_harmonic_half_plane_is_ramp():
    g = Grid.box((-1, -1), (1, 1), 32, 2)
    w = cone_harmonic_field(math.pi / 2, g)
    assert np.allclose(w.values, np.maximum(-g.coords()[..., 1], 0.0), atol=1e-12)


def test_cone_harmonic_boundary_and_gradient():
    theta = math.pi / 3
    g = Grid.box((-1, -1), (1, 1), 256, 2)
    w = cone_harmonic_field(theta, g)
    gamma = math.pi / (2 * theta)
    rs = np.array([0.3, 0.5, 0.7])
    pts = rs[:, None] * np.array([math.sin(theta), -math.cos(theta)])
    assert np.max(np.abs(w.interp(pts))) < 2 * g.spacing
    # gradient on the lateral boundary, sampled one step inside along the inward normal
    inward = np.array([-math.cos(theta), -math.sin(theta)])
    d = 4 * g.spacing
    slope = w.interp(pts + d * inward) / d
    assert np.allclose(slope, gamma * rs ** (gamma - 1), rtol=0.05)
