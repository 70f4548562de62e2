import numpy as np
import pytest

from hsdrift.field_core import Grid
from hsdrift.levelset import advect, redistance


def test_redistance_recovers_circle_distance():
    g = Grid.box((-1, -1), (1, 1), 128, 2)
    x = g.coords()
    r = np.linalg.norm(x, axis=-1)
    distorted = (r - 0.5) * (1 + 0.8 * x[..., 0] ** 2) * 3.0
    d = redistance(distorted, g, band=8 * g.spacing)
    near = np.abs(r - 0.5) < 6 * g.spacing
    assert np.max(np.abs(d[near] - (r[near] - 0.5))) < 0.2 * g.spacing
    assert np.array_equal(np.sign(d[near]), np.sign(distorted[near]))


def test_advect_plane_at_unit_speed():
    g = Grid((-0.5, -1.0), 1 / 64, (64, 129), periodic=(True, False))
    x = g.coords()
    phi = x[..., 1].copy()
    dt, n = 0.25 * g.spacing, 40
    for _ in range(n):
        phi = advect(phi, np.ones(g.shape), g, dt)
    # {phi < 0} expands upward with unit normal speed
    row = phi[10]
    z = g.axis(1)
    k = np.nonzero(row >= 0)[0][0]
    z0 = z[k - 1] - row[k - 1] * g.spacing / (row[k] - row[k - 1])
    assert z0 == pytest.approx(n * dt, abs=0.1 * g.spacing)


def test_advect_zero_speed_is_stationary():
    g = Grid.box((-1, -1), (1, 1), 32, 2)
    phi = np.linalg.norm(g.coords(), axis=-1) - 0.5
    assert np.array_equal(advect(phi, np.zeros(g.shape), g, 0.01), phi)
