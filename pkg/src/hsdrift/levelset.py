"""Level-set utilities: redistancing from front samples, upwind advection, velocity extension."""
from __future__ import annotations

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.spatial import cKDTree

from .field_core import Grid, front_crossings


def level_normals(phi: NDArray, grid: Grid, pts: NDArray) -> NDArray:
    """Unit gradient of ``phi`` interpolated at ``pts`` (outward normal when phi < 0 inside)."""
    grads = np.gradient(phi, grid.spacing, edge_order=2)
    idx = grid.fractional_index(pts).T
    g = np.stack([ndimage.map_coordinates(gk, idx, order=1, mode="nearest") for gk in grads], axis=-1)
    return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-300)


def front_samples(phi: NDArray, grid: Grid) -> tuple[NDArray, NDArray]:
    """Zero crossings of ``phi`` on grid edges and their unit normals."""
    pts, _ = front_crossings(-phi, grid)
    if len(pts) == 0:
        return pts, pts
    return pts, level_normals(phi, grid, pts)


def distance_from_samples(grid: Grid, pts: NDArray, normals: NDArray, inside: NDArray,
                          band: float, k: int = 4, slack: float = 0.75) -> NDArray:
    """Signed distance (negative where ``inside``) to a front given by oriented samples.

    Each sample stands for a small tangent patch of half-width ``slack * h``;
    the distance to the nearest of ``k`` patches is used.  Near the front this
    is the tangent-plane distance, so zero crossings are reproduced to second
    order.  Values are clipped to ``+-band``.
    """
    x = grid.coords().reshape(-1, grid.dim)
    sign = np.where(np.asarray(inside).reshape(-1), -1.0, 1.0)
    out = np.full(len(x), band)
    if len(pts) == 0:
        return (sign * out).reshape(grid.shape)
    kk = min(k, len(pts))
    tree = cKDTree(pts)
    dist, idx = tree.query(x, k=kk, distance_upper_bound=band + slack * grid.spacing * 2)
    if kk == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    near = np.isfinite(dist[:, 0])
    xi = x[near]
    best = np.full(len(xi), np.inf)
    s = slack * grid.spacing
    for j in range(kk):
        ok = np.isfinite(dist[near, j])
        ids = idx[near, j][ok]
        diff = xi[ok] - pts[ids]
        nn = normals[ids]
        normal_part = np.abs(np.sum(diff * nn, axis=1))
        tang = np.sqrt(np.maximum(np.sum(diff * diff, axis=1) - normal_part ** 2, 0.0))
        d = np.sqrt(normal_part ** 2 + np.maximum(tang - s, 0.0) ** 2)
        cur = best[ok]
        best[ok] = np.minimum(cur, d)
    out[near] = np.minimum(best, band)
    return (sign * out).reshape(grid.shape)


def redistance(phi: NDArray, grid: Grid, band: float) -> NDArray:
    """Re-initialise ``phi`` to a (banded) signed distance, keeping its sign pattern."""
    pts, nrm = front_samples(phi, grid)
    return distance_from_samples(grid, pts, nrm, phi < 0, band)


def _minmod(a: NDArray, b: NDArray) -> NDArray:
    return np.where(a * b > 0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def _eno_derivatives(phi: NDArray, ax: int, h: float, periodic: bool):
    """Second-order ENO one-sided differences (first order at non-periodic box edges)."""
    mode = "wrap" if periodic else "edge"
    pad = [(0, 0)] * phi.ndim
    pad[ax] = (2, 2)
    p = np.pad(phi, pad, mode=mode)
    n = phi.shape[ax]

    def sl(o):
        s = [slice(None)] * phi.ndim
        s[ax] = slice(2 + o, 2 + o + n)
        return p[tuple(s)]

    d2m = sl(0) - 2 * sl(-1) + sl(-2)
    d2c = sl(1) - 2 * sl(0) + sl(-1)
    d2p = sl(2) - 2 * sl(1) + sl(0)
    dm = (sl(0) - sl(-1)) / h + _minmod(d2m, d2c) / (2 * h)
    dp = (sl(1) - sl(0)) / h - _minmod(d2c, d2p) / (2 * h)
    return dm, dp


def godunov_norm(phi: NDArray, speed: NDArray, grid: Grid) -> NDArray:
    """Upwind ``|grad phi|`` for ``phi_t + speed |grad phi| = 0``."""
    acc_pos = np.zeros_like(phi)
    acc_neg = np.zeros_like(phi)
    for ax in range(grid.dim):
        dm, dp = _eno_derivatives(phi, ax, grid.spacing, grid.periodic[ax])
        acc_pos += np.maximum(np.maximum(dm, 0.0) ** 2, np.minimum(dp, 0.0) ** 2)
        acc_neg += np.maximum(np.minimum(dm, 0.0) ** 2, np.maximum(dp, 0.0) ** 2)
    return np.where(speed >= 0, np.sqrt(acc_pos), np.sqrt(acc_neg))


def advect(phi: NDArray, speed: NDArray, grid: Grid, dt: float) -> NDArray:
    """Two-stage TVD Runge-Kutta step of the normal-speed equation with frozen speed."""
    p1 = phi - dt * speed * godunov_norm(phi, speed, grid)
    p2 = p1 - dt * speed * godunov_norm(p1, speed, grid)
    return 0.5 * (phi + p2)


def extend_velocity(phi: NDArray, grid: Grid, pts: NDArray, vel: NDArray, band: float,
                    k: int = 4) -> NDArray:
    """Extend front velocities to band nodes: each node takes the value at its closest front point."""
    out = np.zeros(grid.shape)
    if len(pts) == 0:
        return out
    near = np.abs(phi) < band
    x = grid.coords()[near]
    grads = np.gradient(phi, grid.spacing, edge_order=2)
    g = np.stack([gk[near] for gk in grads], axis=-1)
    g /= np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-300)
    proj = x - phi[near][:, None] * g
    kk = min(k, len(pts))
    tree = cKDTree(pts)
    dist, idx = tree.query(proj, k=kk)
    if kk == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    w = 1.0 / (dist + 0.05 * grid.spacing)
    out[near] = np.sum(w * vel[idx], axis=1) / np.sum(w, axis=1)
    return out
