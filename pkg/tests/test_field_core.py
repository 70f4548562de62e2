import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsdrift.cone_harmonics import cone_harmonic_field
from hsdrift.field_core import (Cone, GeometryError, Grid, GridField, cone_contains, distance_to_front,
                                extract_front_graph, extract_positive_set, front_crossings, ramp_field,
                                read_field, write_field)


def test_cone_contains_axis_and_antipode():
    c = Cone.down(math.pi / 4)
    assert cone_contains(c, (0.0, -1.0))
    assert not cone_contains(c, (0.0, 1.0))


def test_cone_contains_boundary_direction():
    # angle between (1,-1)/sqrt2 and -e_2 is exactly pi/4
    assert cone_contains(Cone.down(math.pi / 4), (1 / math.sqrt(2), -1 / math.sqrt(2)))


@given(st.floats(0.05, math.pi / 2), st.floats(-math.pi, math.pi), st.floats(0.1, 10.0))
@settings(max_examples=60, deadline=None)
def test_cone_contains_matches_angle(theta, ang, scale):
    p = scale * np.array([math.sin(ang), -math.cos(ang)])
    inside = bool(cone_contains(Cone.down(theta), p))
    if abs(abs(ang) - theta) > 1e-9:
        assert inside == (abs(ang) < theta)


def test_positive_set_of_ramp(unit_grid):
    ps = extract_positive_set(ramp_field(unit_grid), 0.0)
    x = unit_grid.coords()
    assert np.array_equal(ps.mask, x[..., 1] < -1e-12)
    b = ps.boundary_positions
    assert np.allclose(b[:, 1], -unit_grid.spacing)


def test_positive_set_empty(unit_grid):
    ps = extract_positive_set(GridField(unit_grid, np.zeros(unit_grid.shape)), 0.0)
    assert ps.empty and ps.boundary_nodes.size == 0
    with pytest.raises(GeometryError):
        distance_to_front(ps, (0.0, 0.0))


def test_disk_boundary_near_circle(unit_grid):
    x = unit_grid.coords()
    disk = GridField(unit_grid, np.maximum(0.25 - (x ** 2).sum(-1), 0.0))
    ps = extract_positive_set(disk)
    r = np.linalg.norm(ps.boundary_positions, axis=1)
    assert np.max(np.abs(r - 0.5)) <= unit_grid.spacing


def test_distance_to_front(unit_grid):
    h = unit_grid.spacing
    ps = extract_positive_set(ramp_field(unit_grid), 0.0)
    assert abs(distance_to_front(ps, (0.0, -0.25)) - 0.25) <= h
    x = unit_grid.coords()
    disk = extract_positive_set(GridField(unit_grid, np.maximum(0.25 - (x ** 2).sum(-1), 0.0)))
    assert abs(distance_to_front(disk, (0.0, 0.0)) - 0.5) <= h
    node = disk.boundary_positions[0]
    assert distance_to_front(disk, node) == 0.0


def test_front_graph_ramp(unit_grid):
    fg = extract_front_graph(ramp_field(unit_grid))
    assert fg.graph_ok
    assert fg.lip_space == pytest.approx(0.0, abs=1e-9)
    assert np.max(np.abs(fg.at())) < 1e-9


def test_front_graph_cone():
    g = Grid.box((-0.5, -0.5), (0.5, 0.5), 64, 2)
    theta = math.pi / 3
    fg = extract_front_graph(cone_harmonic_field(theta, g))
    exact = -np.abs(fg.xprime[:, 0]) / math.tan(theta)
    assert np.nanmax(np.abs(fg.at() - exact)) <= 2 * g.spacing
    assert abs(fg.lip_space - 1 / math.tan(theta)) <= 0.05


def test_front_graph_disk_steep_near_equator():
    # exact discrete quotient near the equator is about sqrt(2 R h) / h
    g = Grid.box((-0.3, -0.3), (0.3, 0.3), 600, 2)
    x = g.coords()
    R = 0.2505
    fg = extract_front_graph(GridField(g, np.maximum(R ** 2 - (x ** 2).sum(-1), 0.0)))
    xs = fg.xprime[:, 0]
    cols = xs[R ** 2 - xs ** 2 > 0]
    exact = np.sqrt(R ** 2 - cols ** 2)
    oracle = np.max(np.abs(np.diff(exact)) / g.spacing)
    assert fg.graph_ok
    assert fg.lip_space == pytest.approx(oracle, rel=0.05)
    assert fg.lip_space > 10


def test_front_crossings_linear_exact():
    g = Grid.box((-1, -1), (1, 1), 16, 2)
    x = g.coords()
    pts, axes = front_crossings(0.3 - x[..., 1] + 0.2 * x[..., 0], g)
    assert np.allclose(pts[:, 1], 0.3 + 0.2 * pts[:, 0])


@pytest.mark.parametrize("fmt", ["ascii", "binary"])
def test_field_roundtrip(tmp_path, unit_grid, fmt):
    rng = np.random.default_rng(3)
    fld = GridField(unit_grid, rng.random(unit_grid.shape), time=0.25)
    back = read_field(write_field(tmp_path / "f.field", fld, fmt))
    assert np.array_equal(back.values, fld.values)
    assert back.time == 0.25
    assert back.grid.spacing == unit_grid.spacing
