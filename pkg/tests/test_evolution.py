import math

import numpy as np
import pytest

from hsdrift.evolution import (EvolutionError, FixedBoundary, FlowSpec, cone_window_spec, expansion_exponent,
                               front_points, front_radius, hitting_time, inscribed_radius, nondegeneracy_profile,
                               radial_oracle, simulate, start_run, step_obstacle, verify_comparison)
from hsdrift.experiments import FLOW_DEFAULTS, flatfront_flow, radial_flow
from hsdrift.field_core import Grid
from hsdrift.streamline import constant_drift, rotation_drift


def _radial(cells=128, **over):
    p = dict(FLOW_DEFAULTS["radial"], dt=5e-4)
    p.update(over)
    return p, radial_flow(p, cells)


def test_radial_oracle_ode():
    # R' = 1/(R ln(R/r0)) integrates to R^2 ln(R/r0)/2 - R^2/4 = t + const
    r0, R0 = 0.1, 0.2
    ts = np.array([0.0, 0.02, 0.05])
    R = radial_oracle(r0, R0, ts)
    F = lambda R: R ** 2 * np.log(R / r0) / 2 - R ** 2 / 4  # noqa: E731
    assert np.allclose(F(R) - F(R0), ts, atol=1e-10)


@pytest.fixture(scope="module")
def radial_ls():
    p, spec = _radial(128)
    return p, simulate(spec, "levelset", record_every=10)


def test_levelset_radial_against_oracle(radial_ls):
    p, run = radial_ls
    fr = run.frames[-1]
    R = front_radius(fr, exclude_below=1.5 * p["r0"])
    assert R == pytest.approx(radial_oracle(p["r0"], p["R0"], [fr.time])[0], rel=0.02)


def test_obstacle_radial_against_oracle():
    p, spec = _radial(128, dt=2.5e-3)
    run = simulate(spec, "obstacle", record_every=100)
    fr = run.frames[-1]
    R = front_radius(fr, exclude_below=1.5 * p["r0"])
    assert R == pytest.approx(radial_oracle(p["r0"], p["R0"], [fr.time])[0], rel=0.02)


def test_hitting_time_radial():
    p, spec = _radial(128)
    run = simulate(spec, "levelset", record_every=2)
    T = hitting_time(run)
    ts = np.linspace(0, run.frames[-1].time, 2000)
    Rs = radial_oracle(p["r0"], p["R0"], ts)
    h = spec.grid.spacing
    for k in (32, 34):  # nodes on the negative x_2 axis, radii 0.25 and 0.2656
        rad = k * h
        t_exact = float(np.interp(rad, Rs, ts))
        assert T.at([(0.0, -rad)])[0] == pytest.approx(t_exact, rel=0.03)
    assert T.at([(0.0, -0.15)])[0] == run.frames[0].time
    assert np.isinf(T.at([(0.45, 0.45)])[0])


def test_obstacle_monotone_support_with_source():
    g = Grid.box((-0.5, -0.5), (0.5, 0.5), 64, 2)
    spec = FlowSpec(g, lambda x: np.linalg.norm(x, axis=-1) - 0.2,
                    lambda x: np.where(np.linalg.norm(x, axis=-1) < 0.1, 20.0, 0.0), None, None, 0.0, 0.04, 1e-2)
    run = simulate(spec, "obstacle")
    for a, b in zip(run.frames[:-1], run.frames[1:]):
        assert not np.any(a.pset.mask & ~b.pset.mask)
    assert run.frames[-1].pset.mask.sum() > run.frames[0].pset.mask.sum()


def test_nothing_moves_without_pressure():
    g = Grid.box((-0.5, -0.5), (0.5, 0.5), 32, 2)
    spec = FlowSpec(g, lambda x: np.linalg.norm(x, axis=-1) - 0.2, 0.0, None, None, 0.0, 0.01, 2.5e-3)
    for scheme in ("levelset", "obstacle"):
        run = simulate(spec, scheme)
        assert all(np.array_equal(f.pset.mask, run.frames[0].pset.mask) for f in run.frames)
        assert all(f.u.sup == 0.0 for f in run.frames)


def test_empty_initial_set_stays_empty():
    g = Grid.box((-0.5, -0.5), (0.5, 0.5), 32, 2)
    spec = FlowSpec(g, lambda x: np.ones(x.shape[:-1]), 0.0, None, None, 0.0, 0.01, 5e-3)
    run = simulate(spec, "obstacle")
    assert all(fr.u.sup == 0.0 and fr.pset.empty for fr in run.frames)


def test_constant_drift_transports_front():
    g = Grid((-0.25, -0.5), 1 / 64, (32, 65), periodic=(True, False))
    c = 0.5
    # band -0.3 < x_2 < 0 moved rigidly upwards (no pressure: V = -b . nu)
    spec = FlowSpec(g, lambda x: np.maximum(x[..., 1], -0.3 - x[..., 1]), 0.0, constant_drift((0.0, -c)),
                    None, 0.0, 0.2, 4e-3)
    run = simulate(spec, "levelset", record_every=50)
    shift = np.nanmean(run.frames[-1].front.at()) - np.nanmean(run.frames[0].front.at())
    assert shift == pytest.approx(c * 0.2, abs=2 * g.spacing)


def test_obstacle_rejects_drift_and_moving_data():
    g = Grid.box((-0.5, -0.5), (0.5, 0.5), 32, 2)
    spec = FlowSpec(g, lambda x: np.linalg.norm(x, axis=-1) - 0.2, 0.0, rotation_drift(0.5), None, 0.0, 0.01)
    with pytest.raises(EvolutionError):
        start_run(spec, "obstacle")
    moving = FixedBoundary(lambda x: 0.1 - np.linalg.norm(x, axis=-1), lambda x, t: 1.0 + t + 0 * x[..., 0])
    spec = FlowSpec(g, lambda x: np.linalg.norm(x, axis=-1) - 0.2, 0.0, None, moving, 0.0, 0.01)
    with pytest.raises(EvolutionError):
        start_run(spec, "obstacle")


def test_comparison_pressures_ordered():
    p, lo = _radial(96, t1=0.02, dt=2.5e-4)
    _, hi = _radial(96, t1=0.02, dt=2.5e-4, R0=0.26, pressure=2.0)
    A = simulate(lo, "levelset", record_every=10)
    B = simulate(hi, "levelset", record_every=10)
    rep = verify_comparison(A, B)
    assert rep.passed, rep.measured
    with pytest.raises(ValueError):
        verify_comparison(B, A)


def test_comparison_zero_run_trivially_ordered():
    _, hi = _radial(64, t1=0.01, dt=1e-3)
    B = simulate(hi, "levelset")
    g = hi.grid
    zero = FlowSpec(g, lambda x: np.ones(x.shape[:-1]), 0.0, None, None, 0.0, 0.01, 1e-3)
    A = simulate(zero, "levelset")
    assert verify_comparison(A, B).passed


@pytest.fixture(scope="module")
def flat_run():
    return simulate(flatfront_flow(FLOW_DEFAULTS["flatfront"], 64), "levelset", record_every=1)


def test_traveling_front_nondegeneracy(flat_run):
    fr = flat_run.frames[-1]
    h = fr.u.grid.spacing
    x0 = np.array([0.0, float(np.median(front_points(fr)[:, 1]))])
    rep = nondegeneracy_profile(flat_run, x0, [4 * h, 8 * h, 16 * h])
    assert rep.measured["c0"] == pytest.approx(1.0, rel=0.1)
    assert not rep.measured["sublinear"]
    with pytest.raises(ValueError):
        nondegeneracy_profile(flat_run, x0, [h])


def test_traveling_front_position(flat_run):
    # u = v (-x_d + v t)_+ up to the driving depth: front at x_d = v t
    fr = flat_run.frames[-1]
    assert np.median(front_points(fr)[:, 1]) == pytest.approx(fr.time, abs=2 * fr.u.grid.spacing)


def test_flat_front_expansion_is_linear(flat_run):
    # the front through the origin moves at unit speed, so r(t) = t
    rep = expansion_exponent(flat_run, (0.0, 0.0), beta=1.0, ladder=np.asarray([0.25 / 2 ** k for k in range(4, -1, -1)]))
    assert rep.passed
    assert rep.measured["slope"] == pytest.approx(1.0, abs=0.2)
    assert rep.measured["radii"][0] < 4 * flat_run.spec.grid.spacing


def test_inscribed_radius_outside_is_zero(flat_run):
    fr = flat_run.frames[0]
    assert inscribed_radius(fr, (0.0, 0.2)) == 0.0
    assert inscribed_radius(fr, (0.0, -0.1)) == pytest.approx(0.1, abs=fr.u.grid.spacing)


def test_cone_vertex_flagged_sublinear():
    spec = cone_window_spec(math.pi / 3, 1.0, 128, 0.01, 1)
    run = simulate(spec, "obstacle")
    h = spec.grid.spacing
    rep = nondegeneracy_profile(run, (0.0, 0.0), [4 * h * 2 ** k for k in range(5)], frame=0)
    assert rep.measured["sublinear"]
    assert rep.measured["growth_exponent"] == pytest.approx(1.5, abs=0.1)
