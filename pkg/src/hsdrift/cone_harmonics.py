"""Homogeneous harmonic functions on cones and their growth exponents.

For a cone of half-angle ``theta`` the positive harmonic function vanishing on
its boundary is ``r^beta * Y(angle)``, where ``Y`` is the first Dirichlet
eigenfunction of the spherical cap and

    beta = (2 - d + sqrt((d - 2)^2 + 4 lambda_1)) / 2.

In the plane everything is explicit (``beta = pi / (2 theta)``); in space the
axisymmetric eigenfunction solves ``(sin t u')' + lambda sin t u = 0`` and the
eigenvalue is found by shooting from the pole.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from .field_core import Grid, GridField


@dataclass(frozen=True)
class ConeExponent:
    theta: float
    d: int
    lambda1: float
    beta: float


def beta_from_lambda(lam: float, d: int) -> float:
    return 0.5 * (2 - d + np.sqrt((d - 2) ** 2 + 4 * lam))


def lambda_from_beta(beta: float, d: int) -> float:
    return beta * (beta + d - 2)


def theta_beta_closed_2d(beta: float) -> tuple[float, float]:
    """Planar cone angles ``(pi/(2 beta), max(pi - pi/(2(2 - beta)), 0))``."""
    if not (1.0 < beta < 2.0):
        raise ValueError("beta must lie in (1, 2)")
    theta = np.pi / (2 * beta)
    theta_prime = max(np.pi - np.pi / (2 * (2 - beta)), 0.0)
    return float(theta), float(theta_prime)


def _cap_profile_end(lam: float, theta: float, d: int, start: float = 1e-4) -> float:
    """Value at ``theta`` of the pole-regular solution of the cap eigen-ODE."""
    k = d - 2  # weight sin^k

    def rhs(t, y):
        u, p = y
        # u'' + k cot(t) u' + lam u = 0
        return [p, -k * np.cos(t) / np.sin(t) * p - lam * u]

    t0 = min(start, 0.01 * theta)
    # series start u = 1 - lam t^2 / (2 (d - 1)) removes the pole singularity
    c2 = lam / (2.0 * (d - 1))
    y0 = [1.0 - c2 * t0 ** 2, -2.0 * c2 * t0]
    sol = solve_ivp(rhs, (t0, theta), y0, method="DOP853", rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise RuntimeError(f"shooting integration failed: {sol.message}")
    return float(sol.y[0, -1])


def cap_eigenvalue(theta: float, d: int, tol: float = 1e-10, max_iter: int = 200) -> float:
    """First Dirichlet eigenvalue of the cap ``{angle < theta}`` by shooting + bisection."""
    if not (0.0 < theta < np.pi):
        raise ValueError("theta must lie in (0, pi)")
    if d not in (2, 3):
        raise ValueError("only d = 2, 3 are supported")
    step = (0.25 / theta) ** 2
    lo, hi = 0.0, step
    f_lo = _cap_profile_end(lo, theta, d)
    k = 1
    while _cap_profile_end(hi, theta, d) * f_lo > 0:
        lo = hi
        k += 1
        hi = (0.25 * k / theta) ** 2
        if k > 400:
            raise RuntimeError("shooting did not bracket the first eigenvalue")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if _cap_profile_end(mid, theta, d) * f_lo > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    else:
        raise RuntimeError("shooting bisection did not converge")
    return 0.5 * (lo + hi)


@lru_cache(maxsize=256)
def beta_theta(theta: float, d: int = 2, numeric: bool | None = None) -> ConeExponent:
    """Growth exponent of the cone of half-angle ``theta``.

    In d=2 the closed form is used unless ``numeric=True`` requests the
    eigenvalue path (used to cross-check the closed form).
    """
    if not (0.0 < theta < np.pi):
        raise ValueError("theta must lie in (0, pi)")
    if d == 2 and not numeric:
        lam = (np.pi / (2 * theta)) ** 2
    else:
        lam = cap_eigenvalue(theta, d)
    return ConeExponent(float(theta), int(d), float(lam), float(beta_from_lambda(lam, d)))


def theta_for_beta(beta: float, d: int = 2) -> float:
    """Half-angle whose cone exponent equals ``beta`` (inverse of :func:`beta_theta`)."""
    if d == 2:
        return float(np.pi / (2 * beta))
    lo, hi = 1e-3, np.pi - 1e-3
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if beta_theta(mid, d).beta > beta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cone_table(thetas, d: int = 2) -> list[dict]:
    rows = []
    for th in thetas:
        ce = beta_theta(float(th), d, numeric=True)
        inverse = theta_for_beta(ce.beta, d) if d == 2 else theta_for_beta(ce.beta, d)
        rows.append({"theta": ce.theta, "lambda1": ce.lambda1, "beta": ce.beta,
                     "theta_inverse_error": abs(inverse - ce.theta)})
    return rows


def cone_angle(x: np.ndarray, mu) -> np.ndarray:
    """Angle between position vectors and the axis ``mu`` (0 at the origin)."""
    r = np.linalg.norm(x, axis=-1)
    c = np.divide(x @ np.asarray(mu, float), r, out=np.ones_like(r), where=r > 0)
    return np.arccos(np.clip(c, -1.0, 1.0))


def cone_harmonic_values(x: np.ndarray, theta: float, mu=(0.0, -1.0)) -> np.ndarray:
    """``r^g cos(g angle)`` inside the cone, 0 outside, with ``g = pi/(2 theta)`` (d=2)."""
    gam = np.pi / (2 * theta)
    r = np.linalg.norm(x, axis=-1)
    ang = cone_angle(x, mu)
    return np.where(ang < theta, r ** gam * np.cos(gam * ang), 0.0)


def cone_harmonic_field(theta: float, grid: Grid, mu=None, vertex=None, time: float = 0.0) -> GridField:
    if grid.dim != 2:
        raise ValueError("cone harmonic fields are generated in d = 2")
    mu = (0.0, -1.0) if mu is None else mu
    x = grid.coords()
    if vertex is not None:
        x = x - np.asarray(vertex, float)
    vals = np.maximum(cone_harmonic_values(x, theta, mu), 0.0)
    return GridField(grid, vals, time, nonnegative=True)
