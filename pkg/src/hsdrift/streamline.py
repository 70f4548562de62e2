"""Streamlines of the drift, the co-moving frame, and forward positivity checks.

Streamlines solve ``dX/dt = -b(X)`` (the free boundary is transported by
``-b`` on top of the pressure-driven motion).  Integration is fixed-step RK4 so
runs replay bit-for-bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .field_core import GridField, extract_positive_set, positive_set_from_level
from .reports import DiagnosticsReport


class StreamlineExit(RuntimeError):
    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


@dataclass
class DriftField:
    b: Callable[[NDArray], NDArray]
    lip_b: float
    sup_b: float
    name: str = "drift"
    is_zero: bool = False

    def __call__(self, x) -> NDArray:
        return np.asarray(self.b(np.asarray(x, float)), float)

    def sampled_lipschitz(self, lo, hi, n: int = 9) -> float:
        """Largest difference quotient over a tensor lattice in ``[lo, hi]``."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        axes = [np.linspace(lo[k], hi[k], n) for k in range(lo.size)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
        vals = self(pts)
        dx = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        dv = np.linalg.norm(vals[:, None] - vals[None], axis=-1)
        off = dx > 0
        return float(np.max(dv[off] / dx[off]))

    def validate(self, lo, hi, n: int = 9) -> float:
        q = self.sampled_lipschitz(lo, hi, n)
        if q > 1.05 * self.lip_b + 1e-12:
            raise ValueError(f"drift '{self.name}' has sampled Lipschitz quotient {q:.4g} "
                             f"> declared {self.lip_b:.4g}")
        return q


def zero_drift(dim: int = 2) -> DriftField:
    return DriftField(lambda x: np.zeros_like(x), 0.0, 0.0, "zero", is_zero=True)


def constant_drift(c) -> DriftField:
    c = np.asarray(c, float)
    return DriftField(lambda x: np.broadcast_to(c, np.shape(x)).copy(), 0.0,
                      float(np.linalg.norm(c)), "constant", is_zero=not np.any(c))


def rotation_drift(lip: float, center=(0.0, 0.0)) -> DriftField:
    """``b(x) = lip * J (x - center)`` with ``J`` the quarter turn; Lipschitz constant ``lip``."""
    c = np.asarray(center, float)

    def b(x):
        y = x - c
        return lip * np.stack([-y[..., 1], y[..., 0]], axis=-1)
    return DriftField(b, float(lip), float("inf"), "rotation")


def linear_drift(A) -> DriftField:
    A = np.asarray(A, float)
    return DriftField(lambda x: x @ A.T, float(np.linalg.norm(A, 2)), float("inf"), "linear")


@dataclass
class Streamline:
    x0: NDArray
    times: NDArray
    points: NDArray  # shape (len(times),) + x0.shape

    def at(self, t: float) -> NDArray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.points[k]

    def to_csv(self, path: str | Path, which: int = 0) -> Path:
        path = Path(path)
        pts = self.points if self.points.ndim == 2 else self.points[:, which]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{k + 1}" for k in range(pts.shape[-1])])
            for t, p in zip(self.times, pts):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in p])
        return path


def integrate(drift: DriftField, x0, t: float, dt: float, safe_box=None) -> Streamline:
    """RK4 for ``dX/dt = -b(X)`` from time 0 to ``t`` (``t`` may be negative).

    ``x0`` may hold many starting points (last axis is space).  If
    ``safe_box = (lo, hi)`` is given, leaving it raises :class:`StreamlineExit`.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if 0 < drift.lip_b < np.inf and dt > 0.1 / drift.lip_b + 1e-15:
        raise ValueError(f"dt = {dt} exceeds 0.1/lip_b = {0.1 / drift.lip_b}")
    x = np.array(x0, dtype=float)
    nsteps = max(1, int(np.ceil(abs(t) / dt - 1e-12)))
    step = t / nsteps
    times = np.linspace(0.0, t, nsteps + 1)
    out = np.empty((nsteps + 1,) + x.shape)
    out[0] = x

    def vel(y):
        return -drift(y)

    for k in range(nsteps):
        k1 = vel(x)
        k2 = vel(x + 0.5 * step * k1)
        k3 = vel(x + 0.5 * step * k2)
        k4 = vel(x + step * k3)
        x = x + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = x
        if safe_box is not None:
            lo, hi = (np.asarray(v, float) for v in safe_box)
            if np.any(x < lo) or np.any(x > hi):
                raise StreamlineExit(f"trajectory left the safe box at t = {times[k + 1]:.6g}",
                                     float(times[k + 1]))
    return Streamline(np.asarray(x0, float), times, out)


def flow_map(drift: DriftField, x0, t: float, dt: float) -> NDArray:
    """``X(t; x0)``; the identity for the zero drift."""
    if drift.is_zero or t == 0:
        return np.array(x0, dtype=float)
    step = min(dt, 0.1 / drift.lip_b) if 0 < drift.lip_b < np.inf else dt
    return integrate(drift, x0, t, step).points[-1]


def comoving_frame(run, drift: DriftField, origin=None, margin: float | None = None):
    """Resample every frame at ``x + X(t)`` so the streamline through ``origin`` is fixed.

    Returns ``(run_bar, f0, b0)`` where ``f0(x, t) = f(x + X(t))`` and
    ``b0(x, t) = b(x + X(t)) - b(X(t))``.
    """
    from .evolution import EvolutionRun, Frame

    grid = run.spec.grid
    d = grid.dim
    origin = np.zeros(d) if origin is None else np.asarray(origin, float)
    margin = 2 * grid.spacing if margin is None else margin
    t0 = run.frames[0].time
    frames = []
    shifts = []
    coords = grid.coords()
    for fr in run.frames:
        X = flow_map(drift, origin, fr.time - t0, run.spec.dt)
        shift = X - origin
        if not grid.contains(X[None, :], margin)[0]:
            raise ValueError(f"streamline leaves the grid margin at t = {fr.time}")
        shifts.append(shift)
        if np.allclose(shift, 0.0):
            frames.append(fr)
            continue
        pts = coords + shift
        u = fr.u.with_values(np.maximum(fr.u.interp(pts), 0.0))
        level = fr.level.with_values(fr.level.interp(pts)) if fr.level is not None else None
        pset = positive_set_from_level(level) if level is not None else extract_positive_set(u)
        frames.append(Frame(fr.time, u, pset, None, level))
    shifts = np.array(shifts)
    times = np.array([fr.time for fr in run.frames])

    def shift_at(t):
        k = int(np.argmin(np.abs(times - t)))
        return shifts[k]

    def f0(x, t):
        return run.spec.source_values(np.asarray(x) + shift_at(t))

    def b0(x, t):
        s = shift_at(t)
        return drift(np.asarray(x) + s) - drift(origin + s)

    out = EvolutionRun(run.spec, run.scheme, frames, run.run_id + "+comoving", dict(run.meta))
    return out, f0, b0


def frame_value_at(run, points: NDArray, t: float) -> NDArray:
    """Pressure at ``points`` and time ``t`` (linear in time between frames)."""
    times = np.array([fr.time for fr in run.frames])
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ValueError(f"time {t} outside the run [{times[0]}, {times[-1]}]")
    k = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
    lam = (t - times[k]) / (times[k + 1] - times[k])
    lam = float(np.clip(lam, 0.0, 1.0))
    a = run.frames[k].u.interp(points)
    b = run.frames[k + 1].u.interp(points)
    return (1 - lam) * a + lam * b


def forward_positivity_check(run, drift: DriftField, eps: float, tau: float, r2: float,
                             frame: int = 0, direction: str = "ed", window=None,
                             max_samples: int = 400, seed: int = 0) -> DiagnosticsReport:
    """Is ``u(X(tau eps; x) + r2 eps n, t + tau eps) > 0`` for sampled front points ``x``?

    ``direction='ed'`` uses ``n = e_d`` (graph setting); ``'normal'`` uses the
    outward unit normal of the front (radial setting).
    """
    if r2 <= 0 or eps < 0:
        raise ValueError("need r2 > 0 and eps >= 0")
    fr = run.frames[frame]
    from .field_core import front_crossings
    if fr.level is not None:
        pts, _ = front_crossings(-fr.level.values, fr.u.grid)
    else:
        pts, _ = front_crossings(fr.u.values - fr.pset.tol_pos, fr.u.grid)
    if window is not None:
        lo, hi = (np.asarray(v, float) for v in window)
        pts = pts[np.all((pts >= lo) & (pts <= hi), axis=1)]
    if len(pts) == 0:
        raise ValueError("sample set empty")
    if len(pts) > max_samples:
        rng = np.random.default_rng(seed)
        pts = pts[np.sort(rng.choice(len(pts), max_samples, replace=False))]
    d = pts.shape[1]
    if direction == "ed":
        nrm = np.zeros_like(pts)
        nrm[:, -1] = 1.0
    else:
        lvl = fr.level if fr.level is not None else fr.u.with_values(-fr.u.values, nonnegative=False)
        grad = np.stack([lvl.with_values(gk, nonnegative=False).interp(pts)
                         for gk in np.gradient(lvl.values, lvl.grid.spacing)], axis=-1)
        nrm = grad / np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-300)
    span = tau * eps
    adv = flow_map(drift, pts, span, run.spec.dt)
    probe = adv + r2 * eps * nrm
    vals = frame_value_at(run, probe, fr.time + span)
    k = int(np.argmin(vals))
    vmin = float(vals[k])
    return DiagnosticsReport(
        "forward_positivity", vmin > 0,
        {"min_u": vmin, "samples": int(len(pts)), "eps": eps, "tau": tau, "r2": r2,
         "fraction_positive": float(np.mean(vals > 0))},
        probe[k], {"u": vmin, "front_point": pts[k].tolist()},
        {"threshold": 0.0}, run.run_id, frame)


def _outside_distance(frame, points: NDArray) -> NDArray:
    """Distance from ``points`` to the closed positive set of ``frame`` (0 inside)."""
    if frame.level is not None:
        return np.maximum(frame.level.interp(points), 0.0)
    from scipy.spatial import cKDTree
    grid = frame.u.grid
    pos = grid.coords()[frame.pset.mask]
    if len(pos) == 0:
        return np.full(len(points), np.inf)
    return cKDTree(pos).query(points)[0]


def support_monotone_check(run, drift: DriftField | None = None, window=None, tol_cells: float = 2.0,
                           max_samples: int = 400, seed: int = 0) -> DiagnosticsReport:
    """Front points carried by the streamlines over one frame interval stay in the later support.

    For each consecutive frame pair, front points ``x0`` of the earlier frame
    (inside ``window`` if given) are moved to ``X(dt; x0)`` and their distance
    to the later positive set must be at most ``tol_cells * h``.
    """
    from .field_core import front_crossings
    drift = run.spec.b if drift is None else drift
    h = run.spec.grid.spacing
    rng = np.random.default_rng(seed)
    total, bad, worst, wpt, wframe = 0, 0, 0.0, None, 0
    for k in range(len(run.frames) - 1):
        fa, fb = run.frames[k], run.frames[k + 1]
        if fa.level is not None:
            pts, _ = front_crossings(-fa.level.values, fa.u.grid)
        else:
            pts, _ = front_crossings(fa.u.values - fa.pset.tol_pos, fa.u.grid)
        if window is not None:
            lo, hi = (np.asarray(v, float) for v in window)
            pts = pts[np.all((pts >= lo) & (pts <= hi), axis=1)]
        if len(pts) == 0:
            continue
        if len(pts) > max_samples:
            pts = pts[np.sort(rng.choice(len(pts), max_samples, replace=False))]
        moved = flow_map(drift, pts, fb.time - fa.time, run.spec.dt)
        dist = _outside_distance(fb, moved)
        total += len(dist)
        bad += int(np.sum(dist > tol_cells * h))
        j = int(np.argmax(dist))
        if dist[j] > worst or wpt is None:
            worst, wpt, wframe = float(dist[j]), moved[j], k
    if total == 0:
        raise ValueError("sample set empty")
    return DiagnosticsReport("support_monotone", bad == 0,
                             {"samples": total, "violations": bad, "fraction_ok": 1.0 - bad / total,
                              "max_distance": worst, "max_distance_cells": worst / h},
                             wpt, {"frame": wframe}, {"tol_cells": tol_cells}, run.run_id, wframe)
