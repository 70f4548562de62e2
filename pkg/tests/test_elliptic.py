import numpy as np
import pytest

from hsdrift.elliptic import (BoundaryPiece, DirichletProblem, StripSpec, check_superharmonic_bounds,
                              discrete_laplacian, flat_graph, sawtooth, solve_dirichlet, strip_comparison,
                              strip_solves)
from hsdrift.field_core import Grid, GridField


def test_disk_poisson_center_value():
    g = Grid.box((-0.6, -0.6), (0.6, 0.6), 96, 2)
    x = g.coords()
    disk = BoundaryPiece(np.linalg.norm(x, axis=-1) - 0.5, 0.0)
    sol = solve_dirichlet(DirichletProblem(g, 1.0, [disk]))
    # u = (R^2 - |x|^2) / (2d)
    assert abs(sol.field.interp(np.zeros((1, 2)))[0] - 0.0625) <= 2 * g.spacing ** 2
    exact = (0.25 - (x ** 2).sum(-1)) / 4
    dom = sol.assembled.domain
    assert np.max(np.abs(sol.field.values[dom] - exact[dom])) <= 2 * g.spacing ** 2


def test_linear_data_reproduced():
    g = Grid.box((-1, -1), (1, 1), 40, 2)
    x = g.coords()
    a = np.array([0.7, -1.3])
    piece = BoundaryPiece(np.linalg.norm(x - 0.05, axis=-1) - 0.83, lambda p: p @ a)
    sol = solve_dirichlet(DirichletProblem(g, 0.0, [piece]))
    dom = sol.assembled.domain
    assert np.max(np.abs(sol.field.values[dom] - (x @ a)[dom])) < 1e-9


def test_flat_periodic_strip():
    g = Grid((-0.5, -1.0), 1 / 32, (32, 33), periodic=(True, False))
    x = g.coords()
    pieces = [BoundaryPiece(x[..., 1] - 0.0 + 1e-12, 0.0), BoundaryPiece(-1.0 - x[..., 1] + 1e-12, 1.0)]
    sol = solve_dirichlet(DirichletProblem(g, 0.0, pieces))
    dom = sol.assembled.domain
    assert np.max(np.abs(sol.field.values[dom] + x[..., 1][dom])) < 1e-9


def test_discrete_laplacian_quadratic():
    g = Grid.box((-1, -1), (1, 1), 20, 2)
    x = g.coords()
    lap = discrete_laplacian((x ** 2).sum(-1), g.spacing)
    assert np.allclose(lap[np.isfinite(lap)], 4.0)


def test_superharmonic_bounds_quadratic():
    g = Grid.box((-0.6, -0.6), (0.6, 0.6), 96, 2)
    x = g.coords()
    om = GridField(g, 1 - (x ** 2).sum(-1) / 4)
    rep = check_superharmonic_bounds(om, 1.0, (0.0, 0.0), 0.25)
    assert rep.measured["C_sup"] <= 2 and rep.measured["C_grad"] <= 2


def test_superharmonic_bounds_constant_and_linear():
    g = Grid.box((-0.6, -0.6), (0.6, 0.6), 96, 2)
    x = g.coords()
    rep = check_superharmonic_bounds(GridField(g, np.full(g.shape, 2.0)), 0.0, (0, 0), 0.25)
    assert rep.measured["C_sup"] == pytest.approx(1.0)
    assert rep.measured["C_grad"] == pytest.approx(0.0, abs=1e-12)
    rep = check_superharmonic_bounds(GridField(g, 1 - x[..., 1]), 0.0, (0, 0), 0.25)
    assert rep.measured["C_grad"] == pytest.approx(0.25, rel=1e-9)


def test_superharmonic_rejects_non_solution():
    g = Grid.box((-0.6, -0.6), (0.6, 0.6), 48, 2)
    x = g.coords()
    with pytest.raises(ValueError):
        check_superharmonic_bounds(GridField(g, 1 + (x ** 2).sum(-1)), 0.0, (0, 0), 0.25)


def test_flat_strip_closed_forms():
    grid, s1, s2 = strip_solves(StripSpec(flat_graph, 4.0, 0.0), 1 / 32)
    x = grid.coords()
    inner = s1.assembled.domain & (np.abs(x[..., 0]) <= 1) & (x[..., 1] < -0.1) & (x[..., 1] > -0.9)
    xd = x[..., 1][inner]
    # the far lateral cap at |x| = L perturbs the middle only slightly
    assert np.max(np.abs(s1.field.values[inner] + xd)) < 1e-3
    assert np.max(np.abs(s2.field.values[inner] + xd * (1 + xd) / 2)) < 1e-3


def test_strip_zero_source():
    rep = strip_comparison(StripSpec(sawtooth(0.5), 2.0, 0.5), h=1 / 32, source=0.0)
    assert rep.measured["R"] == 0.0


def test_strip_rejects_steep_graph():
    with pytest.raises(ValueError):
        strip_comparison(StripSpec(sawtooth(2.0), 2.0, 2.0))


def test_sawtooth_lipschitz():
    xs = np.linspace(-3, 3, 6001)
    g = sawtooth(0.5)(xs)
    assert np.max(np.abs(np.diff(g)) / np.diff(xs)) == pytest.approx(0.5)
    assert g[3000] == 0.0
