import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsdrift.streamline import (DriftField, StreamlineExit, constant_drift, flow_map, integrate, linear_drift,
                                rotation_drift, zero_drift)


@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.lists(st.floats(-1, 1), min_size=2, max_size=2),
       st.floats(0.01, 2.0))
@settings(max_examples=40, deadline=None)
def test_constant_drift_translates(c, x0, t):
    X = integrate(constant_drift(c), x0, t, 0.05).points[-1]
    assert np.allclose(X, np.asarray(x0) - np.asarray(c) * t, atol=1e-10)


def test_linear_ode_closed_form():
    # b(x) = -x  =>  dX/dt = X
    b = linear_drift(-np.eye(2))
    sl = integrate(b, (0.3, -0.7), 1.0, 0.01)
    exact = np.array([0.3, -0.7])[None, :] * np.exp(sl.times)[:, None]
    assert np.max(np.abs(sl.points - exact)) < 1e-8


def test_backward_time():
    b = linear_drift(-np.eye(2))
    X = integrate(b, (1.0, 2.0), -0.5, 0.01).points[-1]
    assert np.allclose(X, np.array([1.0, 2.0]) * math.exp(-0.5), atol=1e-9)


def test_gronwall_separation():
    b = rotation_drift(0.5, (0.15, 0.0))
    rng = np.random.default_rng(0)
    for _ in range(10):
        x0 = rng.uniform(-0.5, 0.5, 2)
        e = rng.normal(size=2)
        e /= np.linalg.norm(e)
        d = 1e-3
        a = integrate(b, x0, 1.0, 0.01)
        c = integrate(b, x0 + d * e, 1.0, 0.01)
        sep = np.linalg.norm(a.points - c.points, axis=1)
        assert np.all(sep <= d * np.exp(b.lip_b * a.times) * (1 + 1e-9))


def test_rotation_preserves_radius():
    b = rotation_drift(0.5)
    X = integrate(b, (0.3, 0.0), 2 * math.pi / 0.5, 0.01).points[-1]
    assert np.allclose(X, (0.3, 0.0), atol=1e-8)


def test_zero_drift_identity():
    pts = np.random.default_rng(1).random((5, 2))
    assert np.array_equal(flow_map(zero_drift(), pts, 1.0, 0.1), pts)


def test_holder_drift_steps_with_dt():
    b = DriftField(lambda x: np.stack([np.sqrt(np.abs(x[..., 1])), 0 * x[..., 0]], -1), math.inf, 1.0, "holder")
    X = flow_map(b, (0.0, 0.25), 1.0, 0.01)
    assert np.allclose(X, (-0.5, 0.25), atol=1e-10)


def test_dt_guard_and_safe_box():
    b = rotation_drift(1.0)
    with pytest.raises(ValueError):
        integrate(b, (0.1, 0.1), 1.0, 0.5)
    with pytest.raises(StreamlineExit):
        integrate(constant_drift((-1.0, 0.0)), (0.0, 0.0), 1.0, 0.01, safe_box=((-0.5, -0.5), (0.5, 0.5)))


def test_declared_lipschitz_checked():
    lying = DriftField(lambda x: 3.0 * x, 1.0, math.inf, "lying")
    with pytest.raises(ValueError):
        lying.validate((-1, -1), (1, 1))
    assert rotation_drift(0.5).validate((-1, -1), (1, 1)) == pytest.approx(0.5)


def test_streamline_csv(tmp_path):
    sl = integrate(constant_drift((1.0, 0.0)), (0.0, 0.0), 0.1, 0.05)
    text = sl.to_csv(tmp_path / "s.csv").read_text().splitlines()
    assert text[0] == "t,x1,x2" and len(text) == 4
