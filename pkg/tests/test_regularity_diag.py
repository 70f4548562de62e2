import math
from dataclasses import replace

import numpy as np
import pytest

from hsdrift.cone_harmonics import cone_harmonic_field
from hsdrift.evolution import Frame, simulate
from hsdrift.experiments import FLOW_DEFAULTS, flatfront_flow, radial_flow
from hsdrift.field_core import Cone, Grid, GridField, extract_front_graph, ramp_field
from hsdrift.regularity_diag import (MonotoneQuery, carleson_check, check_eps_a_monotone, check_full_monotone,
                                     check_gradient_distance, check_hcondition, check_interior_monotonicity,
                                     check_lipschitz_implies_cone, fit_front_lipschitz, fit_growth_exponent,
                                     lipschitz_report, measure_cone_improvement)
from hsdrift.streamline import zero_drift

from conftest import rotated_ramp

G64 = Grid.box((-0.5, -0.5), (0.5, 0.5), 64, 2)


@pytest.mark.parametrize("theta", [0.3, math.pi / 4, math.pi / 2])
def test_ramp_is_eps_monotone(theta):
    rep = check_eps_a_monotone(ramp_field(G64), MonotoneQuery(Cone.down(theta), 0.1))
    assert rep.passed
    assert rep.measured["worst_slack"] >= -1e-12


def test_rotated_ramp_fails_with_witness():
    theta = math.pi / 4
    rep = check_eps_a_monotone(rotated_ramp(G64, theta + 0.1), MonotoneQuery(Cone.down(theta), 0.1))
    assert not rep.passed
    assert rep.measured["worst_slack"] < 0
    assert rep.witness_point is not None and len(rep.witness_point) == 2


def test_eps_monotone_resolution_guard():
    with pytest.raises(ValueError):
        check_eps_a_monotone(ramp_field(G64), MonotoneQuery(Cone.down(0.5), 2 * G64.spacing))


def test_full_monotone_ramp_and_disk():
    assert check_full_monotone(ramp_field(G64), Cone.down(math.pi / 4)).passed
    x = G64.coords()
    disk = GridField(G64, np.maximum(0.1 - (x ** 2).sum(-1), 0.0))
    for theta in (0.2, math.pi / 4, math.pi / 2):
        assert not check_full_monotone(disk, Cone.down(theta)).passed


def test_growth_half_space():
    g = Grid.box((-1, -1), (1, 1), 128, 2)
    rep = fit_growth_exponent(ramp_field(g), None, (0, -1), [0.5 / 2 ** k for k in range(4)])
    assert rep.measured["beta"] == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("theta,beta,tol", [(math.pi / 3, 1.5, 0.05), (math.pi / 4, 2.0, 0.1)])
def test_growth_cone_harmonic(theta, beta, tol):
    g = Grid.box((-1, -1), (1, 1), 256, 2)
    rep = fit_growth_exponent(cone_harmonic_field(theta, g), None, (0, -1), [0.5 / 2 ** k for k in range(4)],
                              window=0.1)
    assert rep.measured["beta"] == pytest.approx(beta, abs=tol)


def test_gradient_distance():
    assert check_gradient_distance(ramp_field(G64), None, (0.05, 0.3)).measured["C_hat"] == pytest.approx(1.0)
    g = Grid.box((-1, -1), (1, 1), 256, 2)
    rep = check_gradient_distance(cone_harmonic_field(math.pi / 3, g), None, (0.05, 0.3))
    assert rep.measured["C_hat"] <= 1.0 + 0.05
    x = G64.coords()
    disk = GridField(G64, np.maximum(0.2 - (x ** 2).sum(-1), 0.0))
    rep = check_gradient_distance(disk, None, (0.3, 0.5))
    assert not rep.passed and rep.measured["zero_gradient_nodes"] >= 1


def test_interior_monotonicity_harmonic_zero_source():
    rep = check_interior_monotonicity(ramp_field(G64), 0.0, (0, -1), 0.1, math.inf, 0.5,
                                      center=(0.0, -0.25))
    assert rep.passed


@pytest.fixture(scope="module")
def flat_run():
    return simulate(flatfront_flow(FLOW_DEFAULTS["flatfront"], 64), "levelset", record_every=1)


def _stationary(run, k=0):
    fr = run.frames[k]
    frames = [replace(fr, time=fr.time + s * 0.01) for s in range(5)]
    return type(run)(run.spec, run.scheme, frames, "stationary")


def test_front_lipschitz_stationary(flat_run):
    g = fit_front_lipschitz(_stationary(flat_run), 0.1)
    assert g.lip_space == pytest.approx(0.0, abs=1e-9)
    assert g.lip_time == pytest.approx(0.0, abs=1e-9)


def test_front_lipschitz_traveling(flat_run):
    g = fit_front_lipschitz(flat_run, 0.25)
    assert g.lip_time == pytest.approx(1.0, rel=0.05)
    assert g.lip_space < 0.05
    assert lipschitz_report(g, 1.2, 1.05 * 0.25, 0.25).passed
    assert not lipschitz_report(g, 1.2, 0.9 * 0.25, 0.25).passed


def test_front_lipschitz_radial_sector():
    p = dict(FLOW_DEFAULTS["radial"], t1=0.01, dt=5e-4)
    run = simulate(radial_flow(p, 128), "levelset", record_every=10)
    half = math.tan(math.radians(15))
    R = 0.2
    g = fit_front_lipschitz(run, 0.05, xwindow=(-R * math.sin(math.radians(15)), R * math.sin(math.radians(15))),
                            axis=(0.0, 1.0))
    assert g.lip_space <= half + 0.05


def test_cone_improvement_flat(flat_run):
    rep = measure_cone_improvement(flat_run, 0.125, 0.5, Cone.down(1.4), C=0.05, window=((0.0, -0.3), 0.2))
    assert rep.passed
    assert rep.measured["final_full_monotone"]


def test_cone_improvement_degenerate_ladder(flat_run):
    rep = measure_cone_improvement(flat_run, 0.125, 1.0, Cone.down(1.4), window=((0.0, -0.3), 0.2))
    assert rep.measured["largest_k"] == 0 and len(rep.measured["levels"]) == 1


def test_lipschitz_implies_cone_flat():
    g = Grid.box((-1, -1), (1, 1), 128, 2)
    w = ramp_field(g)
    rep = check_lipschitz_implies_cone(w, extract_front_graph(w), 1.5, center=(0.0, 0.0))
    assert rep.passed and rep.measured["c_hat"] >= 1.0


def test_lipschitz_implies_cone_steep_rejected():
    g = Grid.box((-1, -1), (1, 1), 64, 2)
    w = cone_harmonic_field(math.atan(0.5), g)  # c_g = cot(atan 0.5) = 2
    with pytest.raises(ValueError):
        check_lipschitz_implies_cone(w, extract_front_graph(w), 1.5)


def test_lipschitz_implies_cone_off_vertex():
    g = Grid.box((-1, -1), (1, 1), 256, 2)
    theta = 1.2
    w = cone_harmonic_field(theta, g)
    fg = extract_front_graph(w)
    p = 0.6 * np.array([math.sin(theta), -math.cos(theta)])
    rep = check_lipschitz_implies_cone(w, fg, 1.5, center=p, r_max=0.25)
    assert rep.passed and rep.measured["r"] > 0


@pytest.fixture(scope="module")
def radial_run():
    p = dict(FLOW_DEFAULTS["radial"], t1=0.02, dt=5e-4)
    return p, simulate(radial_flow(p, 128), "levelset", record_every=4)


def test_hcondition_radial(radial_run):
    _, run = radial_run
    rep = check_hcondition(run, zero_drift(), 0.0)
    assert rep.passed


def test_hcondition_radial_closed_form():
    # u = ln(R/|x|) / ln(R/r0) is non-decreasing in t at fixed x whenever R grows
    r0, x = 0.1, 0.15
    R = np.linspace(0.2, 0.4, 50)
    u = np.log(R / x) / np.log(R / r0)
    assert np.all(np.diff(u) > 0)


def test_hcondition_injected_decay(radial_run):
    _, run = radial_run
    frames = [replace(fr, u=fr.u.with_values(fr.u.values * (1 - 0.2 * k))) for k, fr in enumerate(run.frames[:4])]
    bad = type(run)(run.spec, run.scheme, frames, "decayed")
    rep = check_hcondition(bad, zero_drift(), 0.0)
    assert not rep.passed and rep.measured["worst_increment"] < 0


def test_carleson_flat_front(flat_run):
    h = flat_run.spec.grid.spacing
    rep = carleson_check(flat_run, 8 * h, frame=len(flat_run.frames) // 2)
    assert rep.measured["M_median"] == pytest.approx(1.0, rel=0.15)
    with pytest.raises(ValueError):
        carleson_check(flat_run, h)


def test_carleson_radial(radial_run):
    p, run = radial_run
    from hsdrift.evolution import radial_oracle
    delta = 4 * run.spec.grid.spacing
    rep = carleson_check(run, delta, frame=0)
    # oracle: u(x1) = ln(R0/(R0-delta))/ln(R0/r0); T from inverting R(t)
    R0, r0 = p["R0"], p["r0"]
    ts = np.linspace(0, run.frames[-1].time, 4000)
    Rs = radial_oracle(r0, R0, ts)
    M = delta ** 2 / (np.log(R0 / (R0 - delta)) / np.log(R0 / r0) * np.interp(R0 + delta, Rs, ts))
    assert rep.measured["M_median"] == pytest.approx(M, rel=0.3)
