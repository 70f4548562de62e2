import math

import numpy as np
import pytest
from numpy.polynomial import Polynomial

from hsdrift.examples_gallery import (CuspSpec, PotentialBumpSpec, cusp_drift, cusp_phase1_check,
                                      cusp_phase2_check, e2_check, e3_check, make_e2_field)
from hsdrift.field_core import Grid

SMALL = Grid.box((-0.125, -0.125), (0.125, 0.125), 512, 2)


def test_cusp_spec_interpolates_cone_angles():
    s = CuspSpec()
    assert s.sigma == pytest.approx(2 / 3)
    assert s.gamma_t(0.0) == pytest.approx(1.5)
    assert s.gamma_t(1.0) == pytest.approx(3.0)
    assert s.theta_t(2.0) == s.theta_t(1.0)
    assert s.dtheta == pytest.approx(math.pi / 3 - math.pi / 6)
    # at t = 1 the cusp graph is the straight cone edge
    x2 = np.linspace(-1, 1, 11)
    assert np.allclose(s.cusp_g(x2, 1.0), np.abs(x2) * math.sqrt(3))


@pytest.mark.parametrize("kw", [{"gamma0": 3.0, "gamma1": 1.5}, {"sigma": 0.4}, {"sigma": 1.2}])
def test_cusp_spec_rejects_bad_exponents(kw):
    with pytest.raises(ValueError):
        CuspSpec(**kw)


def test_cusp_drift_is_holder_only():
    d = cusp_drift(CuspSpec(), 2.0)
    x = np.array([[0.3, 0.25], [0.0, -0.04]])
    assert np.allclose(d(x), [[-2.0 * 0.5, 0.0], [-2.0 * 0.2, 0.0]])
    assert math.isinf(d.lip_b)


def test_phase1_bisection_brackets_threshold():
    s = CuspSpec()
    rep = cusp_phase1_check(s)
    c = rep.measured["C0_threshold"]
    assert rep.passed
    assert rep.measured["C0_used"] == pytest.approx(1.25 * c)
    assert cusp_phase1_check(s, C0=1.001 * c).passed
    low = cusp_phase1_check(s, C0=0.98 * c)
    assert not low.passed and low.measured["min_residual"] < 0
    assert not cusp_phase1_check(s, C0=0.0).passed


def test_phase1_residual_by_hand():
    # r = 1, t = 0: -dtheta - gamma0 + C0 sin(theta0)^gamma0 is the binding term for large r
    s = CuspSpec()
    th = math.pi / 3
    need = (s.dtheta + 1.5) / math.sin(th) ** 1.5
    assert cusp_phase1_check(s).measured["C0_threshold"] >= need * (1 - 1e-9)


def test_phase2_coarse_needs_larger_drift():
    s = CuspSpec()
    rep = cusp_phase2_check(s, C0=None, h=1 / 32, times=(1.25,))
    need = rep.measured["C0_needed"]
    assert rep.passed and need > 0
    assert rep.measured["c_surrogate_measured"] <= s.c_surrogate
    assert not cusp_phase2_check(s, C0=0.5 * need, h=1 / 32, times=(1.25,)).passed


def _mass_oracle(delta):
    # septic step as a polynomial in tau = (s - delta) / delta on [0, 1]
    step = Polynomial([0, 0, 0, 0, 35, -84, 70, -20])
    integrand = (1 - step) * Polynomial([1, 1])
    core = 0.5
    ring = integrand.integ()(1.0) - integrand.integ()(0.0)
    return 2 * math.pi * delta ** 2 * (core + ring)


def test_bump_mass_and_potential():
    b = PotentialBumpSpec(2.0 ** -6)
    assert b.mass(1.0)[0] == pytest.approx(_mass_oracle(b.delta), rel=1e-10)
    assert b.potential(np.array([1.0]))[0][0] == pytest.approx(0.0, abs=1e-15)
    # radial Poisson: phi'' + phi'/r = -f, by finite differences of the quadrature potential
    r = np.linspace(0.2, 1.9, 18) * b.delta
    k = 1e-3 * b.delta
    p = lambda s: b.potential(s)[0]
    lap = (p(r + k) - 2 * p(r) + p(r - k)) / k ** 2 + (p(r + k) - p(r - k)) / (2 * k * r)
    assert np.allclose(-lap, b.source(r), atol=1e-4)
    slope = (p(r + k) - p(r - k)) / (2 * k)
    assert np.allclose(slope, b.potential_slope(r), rtol=1e-6)


def test_bump_rejects_bad_delta():
    with pytest.raises(ValueError):
        PotentialBumpSpec(0.3)
    with pytest.raises(ValueError):
        PotentialBumpSpec.for_scale(0.0625, 2.0, 1.5)


def test_e3_scaled_passes_full_fails():
    out = e3_check(PotentialBumpSpec(2.0 ** -8), SMALL)
    assert out["scaled"].passed
    assert not out["full"].passed
    assert out["full"].witness_point is not None
    assert out["min_dx1"] < 0


def test_e2_counterexample():
    spec = PotentialBumpSpec.for_scale(0.0625, 2.0, 0.9)
    assert spec.delta == pytest.approx(0.0625 ** 1.95)
    out = e2_check(spec, SMALL)
    assert out["bounds_ok"] and out["scaled"].passed and not out["full"].passed
    lo, hi, ek = out["bounds"]
    assert ek <= lo <= hi <= 2 * ek
    phi = make_e2_field(spec, SMALL)
    assert phi.values.shape == SMALL.shape


def test_e2_needs_scale_data():
    with pytest.raises(ValueError):
        e2_check(PotentialBumpSpec(2.0 ** -8), SMALL)
