"""Monotonicity and regularity measurements on fields and runs.

Every check returns a :class:`DiagnosticsReport` whose ``passed`` flag is a
pure function of the measured numbers and the caps recorded in ``config``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.spatial import cKDTree

from .cone_harmonics import theta_beta_closed_2d
from .elliptic import discrete_laplacian
from .field_core import (Cone, FrontGraph, GridField, PositiveSet, extract_front_graph,
                         extract_positive_set, field_front_points, front_crossings,
                         graph_from_samples)
from .reports import DiagnosticsReport
from .streamline import DriftField, flow_map

__all__ = ["DiagnosticsReport", "MonotoneQuery", "check_eps_a_monotone", "check_full_monotone",
           "fit_growth_exponent", "check_gradient_distance", "check_interior_monotonicity",
           "fit_front_lipschitz", "lipschitz_report", "measure_cone_improvement",
           "check_lipschitz_implies_cone", "check_hcondition", "carleson_check", "tol_mono",
           "masked_gradient"]


@dataclass
class MonotoneQuery:
    cone: Cone
    eps: float
    a: float = 0.0
    window: tuple | None = None  # (lo, hi) box of tested base points
    max_scale: float | None = None


def tol_mono(field: GridField) -> float:
    """Default noise floor: ``1e-8 |field|_inf + |grad field|_inf h^2``."""
    g = np.linalg.norm(field.gradient(), axis=-1)
    return 1e-8 * float(np.max(np.abs(field.values))) + float(g.max()) * field.grid.spacing ** 2


def _window_mask(field: GridField, window) -> NDArray:
    x = field.grid.coords()
    if window is None:
        return np.ones(field.grid.shape, bool)
    lo, hi = (np.asarray(v, float) for v in window)
    return np.all((x >= lo - 1e-12) & (x <= hi + 1e-12), axis=-1)


def _disk(radius_cells: float, dim: int) -> NDArray:
    m = int(math.floor(radius_cells + 1e-9))
    rng = np.arange(-m, m + 1)
    mesh = np.meshgrid(*([rng] * dim), indexing="ij")
    return sum(c.astype(float) ** 2 for c in mesh) <= radius_cells ** 2 + 1e-9


def check_eps_a_monotone(field: GridField, q: MonotoneQuery, tol: float | None = None) -> DiagnosticsReport:
    """``(1 + a eps) w(x) <= min_{y in B(x, e' sin theta)} w(y + e' mu)`` for ``e' = eps, 2 eps, ...``.

    The ball minimum is an erosion with a disk footprint; the shift by
    ``e' mu`` is evaluated by multilinear interpolation.  Only base points
    whose shifted ball lies inside the grid are tested.
    """
    grid = field.grid
    h = grid.spacing
    if q.eps < 4 * h - 1e-12:
        raise ValueError("eps below grid resolution (need eps >= 4h)")
    win = _window_mask(field, q.window)
    xw = grid.coords()[win]
    if len(xw) == 0:
        raise ValueError("window too small: no nodes")
    span = float(np.min(xw.max(axis=0) - xw.min(axis=0))) if q.window is None else \
        float(np.min(np.asarray(q.window[1], float) - np.asarray(q.window[0], float)))
    top = span if q.max_scale is None else min(span, q.max_scale)
    if q.eps > top + 1e-12:
        raise ValueError("window too small for the requested eps")
    tol = tol_mono(field) if tol is None else tol
    mu = np.asarray(q.cone.mu, float)
    st = math.sin(q.cone.theta)
    lo = np.asarray(grid.origin)
    hi = grid.upper
    worst, wpt, wvals = np.inf, None, {}
    scales = []
    e = q.eps
    tested = 0
    while e <= top + 1e-12:
        rho = e * st
        ero = ndimage.minimum_filter(field.values, footprint=_disk(rho / h, grid.dim), mode="nearest")
        target = xw + e * mu
        ok = np.all((target - rho >= lo - 1e-9) & (target + rho <= hi + 1e-9), axis=1)
        if ok.any():
            shifted = field.with_values(ero).interp(target[ok])
            base = (1 + q.a * q.eps) * field.values[win][ok]
            slack = shifted - base
            k = int(np.argmin(slack))
            tested += int(ok.sum())
            if slack[k] < worst:
                worst = float(slack[k])
                wpt = xw[ok][k]
                wvals = {"lhs": float(base[k]), "rhs": float(shifted[k]), "scale": e}
            scales.append(e)
        e *= 2
    if tested == 0:
        raise ValueError("window too small: shifted balls leave the grid")
    sup = float(np.max(np.abs(field.values))) or 1.0
    return DiagnosticsReport("eps_a_monotone", worst >= -tol,
                             {"worst_slack": worst, "relative_slack": worst / sup, "scales": scales,
                              "tested": tested},
                             wpt, wvals, {"eps": q.eps, "a": q.a, "theta": q.cone.theta,
                                          "mu": list(map(float, mu)), "tol": tol})


def cone_directions(cone: Cone, n_interior: int = 8, seed: int = 0) -> NDArray:
    """Axis, boundary generators and seeded interior directions."""
    parts = [np.asarray(cone.mu, float)[None, :], cone.generators()]
    if n_interior:
        parts.append(cone.sample_interior(n_interior, seed))
    return np.vstack(parts)


def check_full_monotone(field: GridField, cone: Cone, window=None, tol: float | None = None,
                        seed: int = 0) -> DiagnosticsReport:
    """Directional differences ``w(x + h e) - w(x) >= -tol`` for sampled cone directions."""
    grid = field.grid
    h = grid.spacing
    tol = tol_mono(field) if tol is None else tol
    win = _window_mask(field, window)
    x = grid.coords()[win]
    vals = field.values[win]
    worst, wpt, wdir = np.inf, None, None
    for e in cone_directions(cone, seed=seed):
        tgt = x + h * e
        ok = grid.contains(tgt)
        if not ok.any():
            continue
        diff = field.interp(tgt[ok]) - vals[ok]
        k = int(np.argmin(diff))
        if diff[k] < worst:
            worst, wpt, wdir = float(diff[k]), x[ok][k], e
    if wpt is None:
        raise ValueError("window too small")
    return DiagnosticsReport("full_monotone", worst >= -tol,
                             {"worst_difference": worst, "worst_quotient": worst / h},
                             wpt, {"direction": list(map(float, wdir))},
                             {"theta": cone.theta, "mu": list(map(float, cone.mu)), "tol": tol})


def fit_growth_exponent(field: GridField, pset: PositiveSet | None, mu, distances,
                        window: float | None = None, center=None) -> DiagnosticsReport:
    """Fit ``log w(x0 + s mu)`` against ``log s`` on the lower envelope over front points ``x0``.

    ``window`` keeps front points within that distance of ``center``.
    """
    grid = field.grid
    h = grid.spacing
    s = np.asarray(distances, float)
    if np.any(s < 4 * h - 1e-12):
        raise ValueError("distances must be at least 4h")
    pts = field_front_points(field, pset.tol_pos if pset is not None else None)
    if window is not None:
        c = np.zeros(grid.dim) if center is None else np.asarray(center, float)
        pts = pts[np.linalg.norm(pts - c, axis=1) <= window]
    if len(pts) == 0:
        raise ValueError("fewer than 4 usable samples")
    mu = np.asarray(mu, float) / np.linalg.norm(mu)
    env = []
    for sv in s:
        probe = pts + sv * mu
        ok = grid.contains(probe)
        if not ok.any():
            env.append(np.nan)
            continue
        env.append(float(np.min(field.interp(probe[ok]))))
    env = np.array(env)
    use = np.isfinite(env) & (env > 0)
    if use.sum() < 4:
        raise ValueError("fewer than 4 usable samples")
    A = np.column_stack([np.log(s[use]), np.ones(use.sum())])
    (slope, icpt), *_ = np.linalg.lstsq(A, np.log(env[use]), rcond=None)
    k = int(np.argmin(env[use] / s[use] ** slope))
    return DiagnosticsReport("growth_exponent", True,
                             {"beta": float(slope), "c": float(np.exp(icpt)), "distances": s[use].tolist(),
                              "envelope": env[use].tolist()},
                             list(map(float, mu * s[use][k])), {"value": float(env[use][k])},
                             {"window": window})


def masked_gradient(values: NDArray, mask: NDArray, h: float) -> NDArray:
    """Centered differences; one-sided (toward the mask) where a neighbour leaves the mask."""
    out = []
    for ax in range(values.ndim):
        fwd = np.roll(values, -1, axis=ax)
        bwd = np.roll(values, 1, axis=ax)
        mf = np.roll(mask, -1, axis=ax)
        mb = np.roll(mask, 1, axis=ax)
        n = values.shape[ax]
        edge_lo = np.zeros(values.shape, bool)
        edge_hi = np.zeros(values.shape, bool)
        sl = [slice(None)] * values.ndim
        sl[ax] = 0
        edge_lo[tuple(sl)] = True
        sl[ax] = n - 1
        edge_hi[tuple(sl)] = True
        mf = mf & ~edge_hi
        mb = mb & ~edge_lo
        g = np.where(mf & mb, (fwd - bwd) / (2 * h),
                     np.where(mf, (fwd - values) / h, np.where(mb, (values - bwd) / h, 0.0)))
        out.append(g)
    return np.stack(out, axis=-1)


def check_gradient_distance(field: GridField, pset: PositiveSet | None, band, C_cap: float = 2.0) -> DiagnosticsReport:
    """``C = max w / (|grad w| d(x, front))`` over nodes with ``d`` in ``band``."""
    grid = field.grid
    pset = extract_positive_set(field) if pset is None else pset
    mask = pset.mask
    pts = field_front_points(field, pset.tol_pos)
    if len(pts) == 0:
        raise ValueError("no front")
    d_lo, d_hi = band
    x = grid.coords()
    dist, _ = cKDTree(pts).query(x[mask])
    sel = (dist >= d_lo) & (dist <= d_hi)
    if not sel.any():
        raise ValueError("band contains no nodes")
    g = np.linalg.norm(masked_gradient(field.values, mask, grid.spacing), axis=-1)[mask][sel]
    w = field.values[mask][sel]
    dd = dist[sel]
    zero = g <= 0
    ratio = np.where(zero, np.inf, w / np.maximum(g * dd, 1e-300))
    k = int(np.argmax(ratio))
    Chat = float(ratio[k])
    return DiagnosticsReport("gradient_distance", bool(Chat <= C_cap and not zero.any()),
                             {"C_hat": Chat, "zero_gradient_nodes": int(zero.sum()), "nodes": int(sel.sum())},
                             x[mask][sel][k], {"w": float(w[k]), "grad": float(g[k]), "distance": float(dd[k])},
                             {"C_cap": C_cap, "band": [float(d_lo), float(d_hi)]})


def holder_norm(f: GridField, gamma: float, pairs: int = 4000, seed: int = 0) -> float:
    """``sup|f| + sampled Hoelder seminorm`` on random node pairs (plus nearest neighbours)."""
    v = f.values.ravel()
    x = f.grid.coords().reshape(-1, f.grid.dim)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(v), pairs)
    j = rng.integers(0, len(v), pairs)
    semi = 0.0
    dx = np.linalg.norm(x[i] - x[j], axis=1)
    ok = dx > 0
    if ok.any():
        semi = float(np.max(np.abs(v[i] - v[j])[ok] / dx[ok] ** gamma))
    for ax in range(f.grid.dim):
        dv = np.abs(np.diff(f.values, axis=ax))
        semi = max(semi, float(dv.max()) / f.grid.spacing ** gamma)
    return float(np.max(np.abs(v))) + semi


def check_interior_monotonicity(field: GridField, f: GridField | float, mu, eps: float, alpha: float,
                                kappa1: float, center=None, C: float = 1.0, gamma_bar: float = 0.5,
                                f_norm: float | None = None, check_pre: bool = True) -> DiagnosticsReport:
    """``grad_mu w >= eps^alpha (1 - C eps^kappa1) w - C eps^(1 + gamma_bar - kappa1) |f|`` on ``B_eps``.

    ``alpha = inf`` stands for ``eps^alpha = 0``.  Also reports where the
    right-hand side is positive (there the gradient along ``mu`` is
    certified positive, i.e. full monotonicity along ``mu``).
    """
    grid = field.grid
    d = grid.dim
    mu = np.asarray(mu, float) / np.linalg.norm(mu)
    c = np.zeros(d) if center is None else np.asarray(center, float)
    ea = 0.0 if math.isinf(alpha) else eps ** alpha
    if check_pre:
        R = eps ** (1 - kappa1)
        rep = check_eps_a_monotone(field, MonotoneQuery(Cone(tuple(mu), 0.0), eps, ea, (c - R, c + R)))
        if not rep.passed:
            raise ValueError("precondition failed: not (eps, eps^alpha)-monotone along mu")
    if f_norm is None:
        f_norm = holder_norm(f, gamma_bar) if isinstance(f, GridField) else abs(float(f))
    x = grid.coords()
    ball = np.linalg.norm(x - c, axis=-1) < eps
    if not ball.any():
        raise ValueError("ball B_eps contains no nodes")
    g = np.stack(np.gradient(field.values, grid.spacing, edge_order=2), axis=-1)
    lhs = (g @ mu)[ball]
    w = field.values[ball]
    rhs = ea * (1 - C * eps ** kappa1) * w - C * eps ** (1 + gamma_bar - kappa1) * f_norm
    margin = lhs - rhs
    k = int(np.argmin(margin))
    threshold = ea * w >= 2 * C * eps ** (1 + gamma_bar - kappa1) * f_norm
    kl = int(np.argmin(lhs))
    return DiagnosticsReport("interior_monotonicity", bool(np.all(margin >= -1e-10 * max(1.0, np.abs(lhs).max()))),
                             {"pass_rate": float(np.mean(margin >= 0)), "min_margin": float(margin[k]),
                              "rhs_at_min_gradient": float(rhs[kl]), "min_gradient": float(lhs[kl]),
                              "full_monotone_implied": bool(threshold.any() and np.all(lhs[threshold] > 0)),
                              "threshold_nodes": int(threshold.sum())},
                             x[ball][kl], {"lhs": float(lhs[kl]), "rhs": float(rhs[kl])},
                             {"C": C, "eps": eps, "alpha": alpha, "kappa1": kappa1, "gamma_bar": gamma_bar,
                              "f_norm": f_norm})


def fit_front_lipschitz(run, r: float, c_theta: float = 1.0, axis=None, xwindow=None,
                        eps: float | None = None) -> FrontGraph:
    """Front graphs snapshotted on the ladder ``t_k = t0 + k c_theta r^2`` (linear in time between)."""
    times = run.times
    grid = run.frames[0].u.grid
    if eps is not None and not (4 * eps - 1e-12 <= r <= 0.25 + 1e-12):
        raise ValueError("r must lie in [4 eps, 1/4]")
    step = c_theta * r * r
    ladder = np.arange(times[0], times[-1] + 1e-12, step) if step > 0 else times
    if len(ladder) < 2:
        ladder = times[[0, -1]]
    rows, tk = [], []
    xprime = None
    seen = set()
    for t in ladder:
        k = int(np.argmin(np.abs(times - t)))
        if k in seen:
            continue
        seen.add(k)
        fr = run.frames[k]
        g = extract_front_graph(fr.u, axis=axis, level=fr.level)
        if not g.graph_ok:
            raise ValueError("front not a graph")
        xprime = g.xprime
        rows.append(g.samples[0])
        tk.append(fr.time)
    samples = np.array(rows)
    if xwindow is not None:
        lo, hi = xwindow
        keep = (xprime[:, 0] >= lo) & (xprime[:, 0] <= hi)
        xprime = xprime[keep]
        samples = samples[:, keep]
    ax = axis if axis is not None else tuple(-np.eye(grid.dim)[-1])
    return graph_from_samples(ax, xprime, np.array(tk), samples, grid)


def lipschitz_report(graph: FrontGraph, theta: float, C_time: float, r: float) -> DiagnosticsReport:
    cap_s = 1.0 / math.tan(theta)
    cap_t = C_time / r
    ok = graph.lip_space <= cap_s + 1e-12 and graph.lip_time <= cap_t + 1e-12
    return DiagnosticsReport("front_lipschitz", bool(ok),
                             {"lip_space": graph.lip_space, "lip_time": graph.lip_time},
                             None, {}, {"cot_theta": cap_s, "C_over_r": cap_t, "r": r})


def measure_cone_improvement(run, eps0: float, j: float, cone0: Cone, alpha: float = math.inf,
                             C: float = 1.0, gamma3: float = 0.5, window=None,
                             final_full: bool = True) -> DiagnosticsReport:
    """Re-check monotonicity on the ladder ``eps_k = j^k eps0`` with shrinking cones and windows.

    Cone half-angle ``theta_k = theta - C sum_{n<k} (j^n eps0)^gamma3``;
    window half-width ``R_k = R0 (1 - (1 - 2^-k)/2)``; frames with
    ``t >= t0 + (t1 - t0)(1 - 2^-k)/2``.
    """
    if not (0 < j <= 1):
        raise ValueError("j must lie in (0, 1]")
    frames = run.frames
    grid = frames[0].u.grid
    h = grid.spacing
    x = grid.coords().reshape(-1, grid.dim)
    if window is None:
        c0 = 0.5 * (np.asarray(grid.origin) + grid.upper)
        R0 = 0.25 * float(np.min(grid.upper - np.asarray(grid.origin)))
    else:
        c0, R0 = np.asarray(window[0], float), float(window[1])
    t0, t1 = frames[0].time, frames[-1].time
    a0 = 0.0 if math.isinf(alpha) else eps0 ** alpha

    def check(k, eps_k, theta_k):
        Rk = R0 * (1 - 0.5 * (1 - 2.0 ** -k))
        tk = t0 + (t1 - t0) * 0.5 * (1 - 2.0 ** -k)
        worst = None
        for fr in frames:
            if fr.time < tk - 1e-12:
                continue
            q = MonotoneQuery(Cone(cone0.mu, max(theta_k, 0.0)), eps_k, a0 * (eps_k / eps0) ** 0,
                              (c0 - Rk, c0 + Rk), max_scale=Rk)
            rep = check_eps_a_monotone(fr.u, q)
            if worst is None or rep.measured["worst_slack"] < worst.measured["worst_slack"]:
                worst = rep
            if not rep.passed:
                return False, rep
        return True, worst

    ok0, rep0 = check(0, eps0, cone0.theta)
    if not ok0:
        raise ValueError("initial check fails")
    passed_k, fail_scale = 0, None
    levels = [{"k": 0, "eps": eps0, "theta": cone0.theta, "pass": True}]
    k = 1
    theta_k = cone0.theta
    while j < 1 and j ** k * eps0 >= 4 * h - 1e-12:
        theta_k = theta_k - C * (j ** (k - 1) * eps0) ** gamma3
        ok, rep = check(k, j ** k * eps0, theta_k)
        levels.append({"k": k, "eps": j ** k * eps0, "theta": theta_k, "pass": ok})
        if not ok:
            fail_scale = j ** k * eps0
            break
        passed_k = k
        k += 1
    full = None
    if final_full and fail_scale is None:
        Rk = R0 * (1 - 0.5 * (1 - 2.0 ** -passed_k))
        fr = frames[-1]
        full = check_full_monotone(fr.u, Cone(cone0.mu, max(theta_k, 0.0)), (c0 - Rk, c0 + Rk)).passed
    return DiagnosticsReport("cone_improvement", fail_scale is None,
                             {"largest_k": passed_k, "smallest_scale": j ** passed_k * eps0,
                              "failure_scale": fail_scale, "levels": levels, "final_full_monotone": full},
                             None, {}, {"eps0": eps0, "j": j, "theta0": cone0.theta, "C": C, "gamma3": gamma3,
                                        "resolution_floor": 4 * h}, run.run_id)


def check_lipschitz_implies_cone(field: GridField, front: FrontGraph, beta: float, f: GridField | float = 0.0,
                                 center=None, c_floor: float = 0.0, res_tol: float = 1e-2,
                                 r_max: float = 1.0) -> DiagnosticsReport:
    """Largest dyadic ``r`` with ``d_{-x_d} w >= c w`` (``c > c_floor``) on ``D_r = B_r(center) cap {x_d < g}``."""
    grid = field.grid
    h = grid.spacing
    if grid.dim == 2:
        th, thp = theta_beta_closed_2d(beta)
    else:
        th, thp = _theta_beta_numeric(beta, grid.dim), 0.0
    cap = min(1 / math.tan(th), math.inf if thp == 0 else 1 / math.tan(thp))
    if front.lip_space > cap + 1e-12:
        raise ValueError(f"precondition failed: c_g = {front.lip_space:.4g} exceeds {cap:.4g}")
    mask = field.values > 0
    inner = ndimage.binary_erosion(mask, border_value=0)
    fv = np.broadcast_to(np.asarray(f.values if isinstance(f, GridField) else f, float), grid.shape)
    lap = -discrete_laplacian(field.values, h)
    res = np.abs(lap - fv)[inner]
    scale = float(np.max(np.abs(fv))) + float(np.max(field.values))
    if res.size and float(np.quantile(res, 0.99)) > res_tol * scale:
        raise ValueError("precondition failed: -Delta w = f residual too large")
    x = grid.coords()
    c = np.zeros(grid.dim) if center is None else np.asarray(center, float)
    gd = -masked_gradient(field.values, mask, h)[..., -1]
    ratio = np.where(mask, gd / np.where(mask, field.values, 1.0), np.inf)
    best_r, best_c = 0.0, float("nan")
    tried = []
    r = r_max
    while r >= 4 * h - 1e-12:
        D = mask & (np.linalg.norm(x - c, axis=-1) < r) & (np.linalg.norm(x - c, axis=-1) > 0)
        D &= ndimage.binary_erosion(mask, border_value=0)
        if D.any():
            chat = float(ratio[D].min())
            tried.append({"r": r, "c": chat})
            if chat > c_floor:
                best_r, best_c = r, chat
                break
        r /= 2
    return DiagnosticsReport("lipschitz_implies_cone", best_r > 0,
                             {"r": best_r, "c_hat": best_c, "ladder": tried, "c_g": front.lip_space},
                             list(map(float, c)), {}, {"beta": beta, "c_floor": c_floor, "cot_bound": cap})


def _theta_beta_numeric(beta: float, d: int) -> float:
    from .cone_harmonics import theta_for_beta
    return theta_for_beta(beta, d)


def check_hcondition(run, drift: DriftField, C0: float = 0.0, samples: int = 400, seed: int = 0,
                     tol: float | None = None, q_cap: float = 0.0) -> DiagnosticsReport:
    """``e^{C0 t} u(X(t; x), t)`` is non-decreasing along sampled streamlines."""
    frames = run.frames
    if len(frames) < 3:
        raise ValueError("need at least 3 frames")
    grid = frames[0].u.grid
    m0 = frames[0].pset.mask
    pts = grid.coords()[m0]
    if len(pts) == 0:
        raise ValueError("initial positive set empty")
    rng = np.random.default_rng(seed)
    if len(pts) > samples:
        pts = pts[np.sort(rng.choice(len(pts), samples, replace=False))]
    t0 = frames[0].time
    sup = max(fr.u.sup for fr in frames)
    tol = 1e-6 * max(sup, 1e-300) if tol is None else tol
    vals = []
    for fr in frames:
        X = flow_map(drift, pts, fr.time - t0, run.spec.dt)
        ok = grid.contains(X)
        v = np.full(len(pts), np.nan)
        v[ok] = math.exp(C0 * (fr.time - t0)) * fr.u.interp(X[ok])
        vals.append(v)
    V = np.array(vals)
    inc = np.diff(V, axis=0)
    valid = np.isfinite(inc)
    bad = valid & (inc < -tol)
    frac = float(bad.sum() / max(valid.sum(), 1))
    k = np.unravel_index(np.nanargmin(np.where(valid, inc, np.nan)), inc.shape)
    return DiagnosticsReport("h_condition", frac <= q_cap,
                             {"violation_fraction": frac, "worst_increment": float(inc[k]),
                              "quantile_01": float(np.nanquantile(inc[valid], 0.01)) if valid.any() else 0.0},
                             pts[k[1]], {"frame": int(k[0]) + 1}, {"C0": C0, "tol": tol, "q_cap": q_cap},
                             run.run_id)


def carleson_check(run, delta: float, M_cap: float = 10.0, frame: int = 0, max_probes: int = 64,
                   window=None, seed: int = 0) -> DiagnosticsReport:
    """``M = max delta^2 / (u(x1) T(x2))`` for probe pairs at distance ``delta`` on both sides of the front."""
    from .evolution import hitting_time

    fr = run.frames[frame]
    grid = fr.u.grid
    h = grid.spacing
    if delta < 4 * h - 1e-12:
        raise ValueError("delta below grid resolution (need delta >= 4h)")
    lvl = fr.level
    if lvl is not None:
        pts, _ = front_crossings(-lvl.values, grid)
        gsrc = lvl.values
    else:
        pts, _ = front_crossings(fr.u.values - fr.pset.tol_pos, grid)
        gsrc = -fr.u.values
    if window is not None:
        lo, hi = (np.asarray(v, float) for v in window)
        pts = pts[np.all((pts >= lo) & (pts <= hi), axis=1)]
    if len(pts) == 0:
        raise ValueError("no front points in the window")
    rng = np.random.default_rng(seed)
    if len(pts) > max_probes:
        pts = pts[np.sort(rng.choice(len(pts), max_probes, replace=False))]
    gfield = GridField(grid, gsrc)
    grad = np.stack([gfield.with_values(gk, nonnegative=False).interp(pts) for gk in np.gradient(gsrc, h)], axis=-1)
    nu = grad / np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-300)
    x1 = pts - delta * nu
    x2 = pts + delta * nu
    ok = grid.contains(x1) & grid.contains(x2)
    T = hitting_time(run)
    Tv = T.at(x2[ok]) - fr.time
    uv = fr.u.interp(x1[ok])
    finite = np.isfinite(Tv) & (Tv > 0) & (uv > 0)
    skipped = int((~finite).sum())
    if not finite.any():
        raise ValueError("no usable probe pairs")
    M = delta ** 2 / (uv[finite] * Tv[finite])
    k = int(np.argmax(M))
    return DiagnosticsReport("carleson", float(M[k]) <= M_cap,
                             {"M_hat": float(M[k]), "M_median": float(np.median(M)), "pairs": int(finite.sum()),
                              "skipped": skipped},
                             x1[ok][finite][k], {"u_x1": float(uv[finite][k]), "T_x2": float(Tv[finite][k]),
                                                 "x2": x2[ok][finite][k].tolist()},
                             {"delta": delta, "M_cap": M_cap}, run.run_id, frame)
