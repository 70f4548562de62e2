"""Time stepping of the Hele-Shaw flow with source and drift.

The pressure ``u`` solves ``-Delta u = f`` in the positive set with ``u = 0``
on the free boundary, which moves with normal speed ``V = |grad u| - b . nu``.
The flow is driven by a fixed inner set where ``u`` is prescribed.

Two steppers share one run interface:

* ``levelset``: signed-distance level set advected with the extended normal
  speed, re-initialised every step; works for any Lipschitz drift.
* ``obstacle``: for ``b = 0`` the time integral ``w = int u dt`` solves an
  obstacle problem at every time, which is solved by projected SOR.  The
  pressure is recovered from the time increment of ``w``.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numba
import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from .elliptic import (BoundaryPiece, DirichletProblem, SolverError, assemble,
                       boundary_gradient, solve_dirichlet)
from .field_core import (FrontGraph, Grid, GridField, GeometryError, PositiveSet,
                         extract_front_graph, front_crossings, positive_set_from_level,
                         write_field)
from .levelset import advect, distance_from_samples, extend_velocity, front_samples, redistance
from .reports import DiagnosticsReport
from .streamline import DriftField, flow_map, zero_drift


class EvolutionError(RuntimeError):
    pass


@dataclass
class FixedBoundary:
    """Driving set ``{level >= 0}`` where ``u = value`` (constant or ``value(x, t)``)."""
    level: Callable[[NDArray], NDArray]
    value: float | Callable[[NDArray, float], NDArray] = 1.0
    name: str = "fixed"
    steady: bool = False  # a callable value that ignores t

    def values(self, x: NDArray, t: float) -> NDArray:
        if callable(self.value):
            return np.asarray(self.value(x, t), float)
        return np.full(x.shape[:-1], float(self.value))

    @property
    def time_dependent(self) -> bool:
        return callable(self.value) and not self.steady


@dataclass
class FlowSpec:
    grid: Grid
    initial: Callable[[NDArray], NDArray]
    f: float | Callable[[NDArray], NDArray] = 0.0
    b: DriftField | None = None
    fixed: FixedBoundary | None = None
    t0: float = 0.0
    t1: float = 1.0
    dt: float = 1e-3
    cfl: float = 0.5
    band_cells: int = 8
    name: str = "flow"
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.b is None:
            self.b = zero_drift(self.grid.dim)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t1 < self.t0:
            raise ValueError("t1 must not precede t0")

    def source_values(self, x: NDArray) -> NDArray:
        if callable(self.f):
            return np.asarray(self.f(x), float)
        return np.full(np.shape(x)[:-1], float(self.f))

    def validate(self) -> None:
        x = self.grid.coords()
        fv = self.source_values(x)
        if np.any(fv < 0):
            raise ValueError("source f must be non-negative")
        if not self.b.is_zero and self.b.lip_b < float("inf"):
            self.b.validate(self.grid.origin, self.grid.upper)


@dataclass
class Frame:
    time: float
    u: GridField
    pset: PositiveSet
    front: FrontGraph | None = None
    level: GridField | None = None
    w: GridField | None = None


@dataclass
class EvolutionRun:
    spec: FlowSpec
    scheme: str
    frames: list[Frame] = field(default_factory=list)
    run_id: str = ""
    meta: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict, repr=False)

    @property
    def times(self) -> NDArray:
        return np.array([fr.time for fr in self.frames])

    @property
    def time(self) -> float:
        return self.state.get("t", self.frames[-1].time if self.frames else self.spec.t0)


# ---------------------------------------------------------------------------
# shared pieces

def _fixed_arrays(spec: FlowSpec):
    if spec.fixed is None:
        return None
    return spec.fixed.level(spec.grid.coords())


def _clamp(spec: FlowSpec, phi: NDArray, fl: NDArray, t: float) -> NDArray:
    """Fixed nodes with positive data join the positive set.

    Fixed nodes with zero data are walls: the level function is left free there,
    so the free boundary meets the wall without a spurious front along it.
    """
    h = spec.grid.spacing
    on = fl >= 0
    val = np.asarray(spec.fixed.values(spec.grid.coords()[on], t), float) * np.ones(int(on.sum()))
    out = phi.copy()
    out[on] = np.where(val > 0, np.minimum(phi[on], -h), phi[on])
    return out


def _check_box(mask: NDArray, grid: Grid, margin: int = 2, fixed: NDArray | None = None) -> None:
    if fixed is not None:
        mask = mask & (fixed < 0)
    for ax in range(grid.dim):
        if grid.periodic[ax]:
            continue
        lo = np.take(mask, range(margin), axis=ax)
        hi = np.take(mask, range(mask.shape[ax] - margin, mask.shape[ax]), axis=ax)
        if lo.any() or hi.any():
            raise EvolutionError("domain exhausted: the positive set reached the outer box")


def solve_pressure(spec: FlowSpec, phi: NDArray, t: float):
    """Pressure on ``{phi < 0}`` minus the fixed set; returns the Dirichlet solution."""
    grid = spec.grid
    pieces = [BoundaryPiece(phi, 0.0, "front")]
    fill = np.zeros(grid.shape)
    fl = _fixed_arrays(spec)
    if fl is not None:
        fixed = spec.fixed
        pieces.append(BoundaryPiece(fl, lambda p, _t=t: fixed.values(p, _t), "fixed"))
        on = fl >= 0
        fill[on] = fixed.values(grid.coords()[on], t)
    prob = DirichletProblem(grid, spec.source_values(grid.coords()), pieces, fill=fill)
    if not prob.domain().any():
        return None, fill
    sol = solve_dirichlet(prob, time=t)
    u = np.where(phi < 0, sol.field.values, 0.0)
    if fl is not None:
        u[fl >= 0] = fill[fl >= 0]
    return sol, np.maximum(u, 0.0)


def _make_frame(spec: FlowSpec, t: float, u: NDArray, level: NDArray, w: NDArray | None = None) -> Frame:
    grid = spec.grid
    lv = GridField(grid, level, t)
    pset = positive_set_from_level(lv)
    ufield = GridField(grid, u, t, nonnegative=True)
    try:
        front = extract_front_graph(ufield, level=lv)
    except GeometryError:
        front = None
    wf = GridField(grid, w, t, nonnegative=True) if w is not None else None
    return Frame(t, ufield, pset, front, lv, wf)


def _run_id(spec: FlowSpec, scheme: str) -> str:
    g = spec.grid
    key = f"{spec.name}|{scheme}|{g.origin}|{g.spacing}|{g.extents}|{spec.t0}|{spec.t1}|{spec.dt}"
    return hashlib.sha256(key.encode()).hexdigest()[:12]


def initial_level(spec: FlowSpec) -> NDArray:
    grid = spec.grid
    phi0 = np.asarray(spec.initial(grid.coords()), float)
    return redistance(phi0, grid, spec.band_cells * grid.spacing)


def start_run(spec: FlowSpec, scheme: str) -> EvolutionRun:
    """Create a run holding the initial frame."""
    if scheme not in ("levelset", "obstacle"):
        raise ValueError(f"unknown scheme {scheme!r}")
    spec.validate()
    if scheme == "obstacle" and not spec.b.is_zero:
        raise EvolutionError("the obstacle stepper requires b = 0")
    if scheme == "obstacle" and spec.fixed is not None and spec.fixed.time_dependent:
        raise EvolutionError("the obstacle stepper needs time-independent fixed data")
    grid = spec.grid
    phi = initial_level(spec)
    fl = _fixed_arrays(spec)
    if fl is not None:
        # the driving set always belongs to the positive set
        phi = _clamp(spec, phi, fl, spec.t0)
    _check_box(phi < 0, grid, fixed=fl)
    t = spec.t0
    sol, u = solve_pressure(spec, phi, t)
    run = EvolutionRun(spec, scheme, [], _run_id(spec, scheme))
    run.frames.append(_make_frame(spec, t, u, phi, np.zeros(grid.shape) if scheme == "obstacle" else None))
    run.state = {"t": t, "phi": phi, "sol": sol, "u": u}
    if scheme == "obstacle":
        run.state.update(_obstacle_setup(spec, phi))
    return run


# ---------------------------------------------------------------------------
# level-set stepper

def front_velocity(spec: FlowSpec, sol, phi: NDArray):
    """Front sample points, outward normals and normal speeds ``|grad u| - b . nu``."""
    grid = spec.grid
    if sol is not None:
        pts, mag, nrm = boundary_gradient(sol, 0)
    else:
        pts, nrm = front_samples(phi, grid)
        mag = np.zeros(len(pts))
    if len(pts) == 0:
        pts, nrm = front_samples(phi, grid)
        mag = np.zeros(len(pts))
    bn = np.sum(spec.b(pts) * nrm, axis=1) if len(pts) else np.zeros(0)
    return pts, nrm, mag - bn, mag


def step_levelset(run: EvolutionRun, dt: float | None = None, record: bool = True) -> EvolutionRun:
    spec = run.spec
    grid = spec.grid
    dt = spec.dt if dt is None else dt
    st = run.state
    phi, sol, t = st["phi"], st["sol"], st["t"]
    band = spec.band_cells * grid.spacing
    pts, nrm, vel, mag = front_velocity(spec, sol, phi)
    vmax = float(np.max(np.abs(vel))) if len(vel) else 0.0
    bsup = float(np.max(np.linalg.norm(spec.b(pts), axis=1))) if len(pts) else 0.0
    speed_scale = (float(np.max(mag)) if len(mag) else 0.0) + bsup
    if dt * max(speed_scale, vmax) > spec.cfl * grid.spacing * (1 + 1e-9):
        suggest = spec.cfl * grid.spacing / max(speed_scale, vmax)
        raise EvolutionError(f"CFL violated at t = {t:.6g}: dt = {dt:.3g}, suggested dt <= {suggest:.3g}")
    speed = extend_velocity(phi, grid, pts, vel, band)
    phi_new = advect(phi, speed, grid, dt)
    phi_new = redistance(phi_new, grid, band)
    fl = _fixed_arrays(spec)
    if fl is not None:
        phi_new = _clamp(spec, phi_new, fl, t + dt)
    _check_box(phi_new < 0, grid, fixed=fl)
    t_new = t + dt
    sol_new, u_new = solve_pressure(spec, phi_new, t_new)
    st.update({"t": t_new, "phi": phi_new, "sol": sol_new, "u": u_new})
    if record:
        run.frames.append(_make_frame(spec, t_new, u_new, phi_new))
    return run


# ---------------------------------------------------------------------------
# obstacle stepper

@numba.njit(cache=True)
def _psor(indptr, indices, data, diag, rhs, x, omega, tol, maxit):
    n = rhs.shape[0]
    change = 0.0
    for it in range(maxit):
        change = 0.0
        for i in range(n):
            s = rhs[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * x[j]
            new = (1.0 - omega) * x[i] + omega * s / diag[i]
            if new < 0.0:
                new = 0.0
            c = abs(new - x[i])
            if c > change:
                change = c
            x[i] = new
        if change < tol:
            return it + 1, change
    return -1, change


def projected_sor(matrix, rhs: NDArray, x0: NDArray, omega: float | None = None,
                  tol: float = 1e-13, maxit: int = 100_000) -> tuple[NDArray, int]:
    """Solve the complementarity problem ``x >= 0, Ax - rhs >= 0, x (Ax - rhs) = 0``."""
    A = matrix.tocsr()
    A.sort_indices()
    diag = A.diagonal()
    if omega is None:
        n_side = max(4.0, float(np.sqrt(A.shape[0])) if A.shape[0] else 4.0)
        omega = 2.0 / (1.0 + np.sin(np.pi / n_side))
    x = np.array(x0, dtype=float)
    it, change = _psor(A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, diag,
                       np.ascontiguousarray(rhs, dtype=float), x, float(omega), float(tol), int(maxit))
    if it < 0:
        raise SolverError(f"projected SOR did not converge in {maxit} sweeps (last change {change:.3e})",
                          [change])
    return x, it


def _cell_fraction(spec: FlowSpec, sub: int = 4) -> NDArray:
    """Volume fraction of each node's dual cell inside the initial positive set."""
    grid = spec.grid
    h = grid.spacing
    x = grid.coords()
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    acc = np.zeros(grid.shape)
    mesh = np.stack(np.meshgrid(*([offs] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)
    for o in mesh:
        acc += np.asarray(spec.initial(x + h * o), float) < 0
    return acc / len(mesh)


def _obstacle_setup(spec: FlowSpec, phi0: NDArray) -> dict:
    grid = spec.grid
    fl = _fixed_arrays(spec)
    pieces = []
    fill = np.zeros(grid.shape)
    if fl is not None:
        fixed = spec.fixed
        pieces.append(BoundaryPiece(fl, lambda p: fixed.values(p, spec.t0), "fixed"))
        on = fl >= 0
        fill[on] = fixed.values(grid.coords()[on], spec.t0)
    prob = DirichletProblem(grid, 0.0, pieces, fill=fill)
    asm = assemble(prob)
    chi0 = _cell_fraction(spec)
    if fl is not None:
        chi0 = np.where(fl >= 0, 1.0, chi0)
    return {"asm": asm, "chi0": chi0, "w": np.zeros(grid.shape), "T": np.where(phi0 < 0, spec.t0, np.inf),
            "phi0": phi0,
            "fill_unit": fill, "sweeps": []}


def level_from_obstacle(w: NDArray, chi0: NDArray, F: NDArray, grid: Grid, band: float) -> NDArray:
    """Signed distance to the free boundary of ``w``, using ``w ~ (1 - F) d^2 / 2`` near it."""
    h = grid.spacing
    mask = w > 0
    dist = np.sqrt(2.0 * np.maximum(w, 0.0) / np.maximum(1.0 - F, 1e-6))
    grads = np.gradient(w, h, edge_order=2)
    gnorm = np.sqrt(sum(gk ** 2 for gk in grads))
    sel = mask & (dist >= 1.5 * h) & (dist <= 4.0 * h) & (chi0 == 0) & (gnorm > 0)
    bnodes = mask & ~ndimage.binary_erosion(mask, border_value=1)
    if sel.sum() < 0.5 * bnodes.sum():
        sel = mask & (dist <= 4.0 * h) & (gnorm > 0)
    x = grid.coords()[sel]
    nu = -np.stack([gk[sel] for gk in grads], axis=-1) / gnorm[sel][:, None]
    pts = x + dist[sel][:, None] * nu
    return distance_from_samples(grid, pts, nu, mask, band)


def step_obstacle(run: EvolutionRun, dt: float | None = None, record: bool = True) -> EvolutionRun:
    spec = run.spec
    grid = spec.grid
    dt = spec.dt if dt is None else dt
    st = run.state
    t_new = st["t"] + dt
    asm = st["asm"]
    dom = asm.domain
    tau = t_new - spec.t0
    fvals = spec.source_values(grid.coords())
    T = st["T"]
    F = np.where(np.isfinite(T), (t_new - np.where(np.isfinite(T), T, 0.0)) * fvals, 0.0)
    active = (st["w"] > 0) | (st["chi0"] > 0)
    if np.any(F[active & dom] >= 1.0):
        raise EvolutionError("growth term exceeds capacity (F >= 1 on the active region)")
    rhs = st["chi0"][dom] - 1.0 + F[dom] + tau * asm.rhs_boundary
    w_prev = st["w"]
    guess = w_prev + dt * st["u"]
    x, sweeps = projected_sor(asm.matrix, rhs, guess[dom], tol=1e-13 * max(1.0, float(np.max(guess))))
    w_new = tau * st["fill_unit"]
    w_new[dom] = x
    u_new = np.where(w_new > 0, np.maximum(w_new - w_prev, 0.0) / dt, 0.0)
    fl = _fixed_arrays(spec)
    if fl is not None:
        u_new[fl >= 0] = st["fill_unit"][fl >= 0]
    # the positive set is {w > 0} together with the initial set (w stays 0 where nothing flows)
    mask = (w_new > 0) | (st["phi0"] < 0)
    _check_box(mask, grid, fixed=fl)
    newly = mask & ~np.isfinite(T)
    T = T.copy()
    T[newly] = t_new
    band = spec.band_cells * grid.spacing
    level = np.minimum(level_from_obstacle(w_new, st["chi0"], F, grid, band), st["phi0"])
    if fl is not None:
        level = np.where(fl >= 0, np.minimum(level, -grid.spacing), level)
    st.update({"t": t_new, "w": w_new, "u": u_new, "T": T, "phi": level})
    st["sweeps"].append(sweeps)
    if record:
        run.frames.append(_make_frame(spec, t_new, u_new, level, w_new))
    return run


def simulate(spec: FlowSpec, scheme: str = "levelset", record_every: int = 1,
             dt: float | None = None) -> EvolutionRun:
    """Run from ``t0`` to ``t1`` with a fixed step, recording every ``record_every`` steps."""
    dt = spec.dt if dt is None else dt
    run = start_run(spec, scheme)
    nsteps = int(math.ceil((spec.t1 - spec.t0) / dt - 1e-9))
    stepper = step_levelset if scheme == "levelset" else step_obstacle
    for k in range(nsteps):
        step = min(dt, spec.t1 - run.state["t"])
        last = k == nsteps - 1
        stepper(run, step, record=last or (k + 1) % record_every == 0)
    run.meta.update({"steps": nsteps, "dt": dt})
    return run


# ---------------------------------------------------------------------------
# measurements on runs

def front_points(frame: Frame) -> NDArray:
    if frame.level is not None:
        return front_crossings(-frame.level.values, frame.level.grid)[0]
    return front_crossings(frame.u.values - frame.pset.tol_pos, frame.u.grid)[0]


def front_radius(frame: Frame, center=None, exclude_below: float = 0.0) -> float:
    """Mean distance of the front points from ``center`` (radial runs)."""
    pts = front_points(frame)
    c = np.zeros(pts.shape[1]) if center is None else np.asarray(center, float)
    r = np.linalg.norm(pts - c, axis=1)
    r = r[r > exclude_below]
    return float(np.mean(r))


def radial_oracle(r0: float, R0: float, times, pressure: float = 1.0) -> NDArray:
    """Outer radius from ``R' = m / (R ln(R/r0))`` (high-accuracy integration)."""
    times = np.atleast_1d(np.asarray(times, float))
    sol = solve_ivp(lambda t, R: pressure / (R * np.log(R / r0)), (0.0, float(times.max())), [R0],
                    method="DOP853", rtol=1e-12, atol=1e-14, t_eval=np.sort(times), dense_output=True)
    return sol.sol(times)[0]


@dataclass
class HittingTimeField:
    grid: Grid
    T: NDArray

    def at(self, points) -> NDArray:
        idx = self.grid.fractional_index(np.atleast_2d(points))
        nearest = np.rint(idx).astype(int)
        return self.T[tuple(nearest.T)]


def hitting_time(run: EvolutionRun) -> HittingTimeField:
    """First time each node is in the positive set, interpolated between frames via the level function."""
    if len(run.frames) < 2:
        raise ValueError("hitting_time needs at least two frames")
    grid = run.frames[0].u.grid
    T = np.full(grid.shape, np.inf)
    prev = None
    for fr in run.frames:
        cur = fr.pset.mask
        new = cur & ~np.isfinite(T)
        if prev is None:
            T[new] = fr.time
        elif new.any():
            lp = prev.level.values[new] if prev.level is not None else None
            lc = fr.level.values[new] if fr.level is not None else None
            if lp is None or lc is None:
                T[new] = fr.time
            else:
                lam = np.clip(lp / np.maximum(lp - lc, 1e-300), 0.0, 1.0)
                T[new] = prev.time + lam * (fr.time - prev.time)
        prev = fr
    return HittingTimeField(grid, T)


def verify_comparison(runA: EvolutionRun, runB: EvolutionRun, tol_cmp: float | None = None) -> DiagnosticsReport:
    """Check ``u_A <= u_B`` and ``supp u_A`` inside ``supp u_B`` (one-cell dilation) at every frame."""
    if len(runA.frames) != len(runB.frames):
        raise ValueError("runs must share their frame times")
    ta, tb = runA.times, runB.times
    if not np.allclose(ta, tb, atol=1e-12):
        raise ValueError("runs must share their frame times")
    ga, gb = runA.frames[0].u.grid, runB.frames[0].u.grid
    if ga != gb:
        raise ValueError("runs must share the grid")
    a0, b0 = runA.frames[0], runB.frames[0]
    inner_b = ndimage.binary_erosion(b0.pset.mask, border_value=0)
    if np.any(a0.pset.mask & ~inner_b) or np.any(a0.u.values[a0.pset.mask] >= b0.u.values[a0.pset.mask]):
        raise ValueError("inputs not strictly separated")
    if tol_cmp is None:
        tol_cmp = 1e-8 * max(b0.u.sup, 1.0)
    worst, worst_pt, worst_frame = -np.inf, None, 0
    support_viol = 0
    value_viol = 0
    x = ga.coords()
    for k, (fa, fb) in enumerate(zip(runA.frames, runB.frames)):
        diff = fa.u.values - fb.u.values
        j = np.unravel_index(np.argmax(diff), diff.shape)
        if diff[j] > worst:
            worst, worst_pt, worst_frame = float(diff[j]), x[j], k
        value_viol += int(np.sum(diff > tol_cmp))
        dil = ndimage.binary_dilation(fb.pset.mask)
        support_viol += int(np.sum(fa.pset.mask & ~dil))
    ok = value_viol == 0 and support_viol == 0
    return DiagnosticsReport("comparison", ok,
                             {"max_excess": worst, "value_violations": value_viol,
                              "support_violations": support_viol, "frames": len(runA.frames)},
                             worst_pt, {"frame": worst_frame}, {"tol_cmp": tol_cmp},
                             f"{runA.run_id}|{runB.run_id}", worst_frame)


def inscribed_radius(frame: Frame, point) -> float:
    """Largest ``r`` with ``B_r(point)`` inside the positive set (0 if outside).

    Measured as the distance to the nearest sub-cell front crossing, so it is
    not limited by the narrow band of the level function.
    """
    p = np.asarray(point, float)[None, :]
    if frame.level is not None:
        inside = float(frame.level.interp(p)[0]) < 0
    else:
        inside = float(frame.u.interp(p)[0]) > frame.pset.tol_pos
    if not inside:
        return 0.0
    pts = front_points(frame)
    if len(pts) == 0:
        return float("inf")
    return float(cKDTree(pts).query(p)[0][0])


def fit_loglog(x, y) -> tuple[float, float]:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    return float(slope), float(np.exp(icpt))


def dyadic_ladder(t_max: float, count: int) -> NDArray:
    return t_max / 2.0 ** np.arange(count - 1, -1, -1)


def expansion_exponent(run: EvolutionRun, vertexpoint, beta: float, ladder=None, t0: float | None = None,
                       drift: DriftField | None = None, tol: float = 0.2) -> DiagnosticsReport:
    """Fit ``r(t) ~ t^s`` for the inscribed radius around the streamline through the vertex.

    ``beta`` is the growth exponent at the vertex (typically measured by
    :func:`regularity_diag.fit_growth_exponent`); the target slope is
    ``1 / (2 - beta)``.
    """
    drift = run.spec.b if drift is None else drift
    times = run.times
    t0 = times[0] if t0 is None else t0
    if ladder is None:
        elapsed = times - t0
        ladder = dyadic_ladder(float(elapsed.max()), int(np.floor(np.log2(elapsed.max() / elapsed[elapsed > 0].min()))) + 1)
    ladder = np.asarray(ladder, float)
    if len(ladder) < 4:
        raise ValueError("insufficient expansion data")
    rs, used = [], []
    for tl in ladder:
        k = int(np.argmin(np.abs(times - (t0 + tl))))
        fr = run.frames[k]
        X = flow_map(drift, np.asarray(vertexpoint, float), fr.time - t0, run.spec.dt)
        rs.append(inscribed_radius(fr, X))
        used.append(fr.time - t0)
    return _expansion_report(np.array(used), np.array(rs), beta, tol, vertexpoint,
                             min(fr.u.grid.spacing for fr in run.frames), run.run_id)


def _expansion_report(used, rs, beta, tol, vertexpoint, h_min, run_id=None, extra=None) -> DiagnosticsReport:
    good = rs > 0
    if good.sum() < 4:
        raise ValueError("insufficient expansion data")
    slope, c = fit_loglog(used[good], rs[good])
    target = 1.0 / (2.0 - beta)
    rel = abs(slope - target) / target
    measured = {"slope": slope, "target": target, "relative_error": rel, "beta": beta,
                "prefactor": c, "ladder": used.tolist(), "radii": rs.tolist(),
                "r_smallest_over_h": float(rs[0] / h_min)}
    measured.update(extra or {})
    return DiagnosticsReport("expansion_exponent", rel <= tol, measured,
                             list(np.asarray(vertexpoint, float)), {}, {"tolerance": tol}, run_id)


def cone_window_spec(theta: float, L: float, cells: int, t_end: float, steps: int = 4,
                     outer: float = 0.9) -> FlowSpec:
    """Cone ``{angle from -e2 < theta}`` in ``[-L, L]^2`` driven by its own harmonic on ``|x| = outer L``."""
    from .cone_harmonics import cone_harmonic_values

    def initial(x):
        r = np.linalg.norm(x, axis=-1)
        ang = np.arccos(np.clip(-x[..., 1] / np.maximum(r, 1e-300), -1, 1))
        gap = ang - theta
        return np.where(gap <= 0, -r * np.sin(np.clip(-gap, 0, np.pi / 2)),
                        np.where(gap < np.pi / 2, r * np.sin(np.clip(gap, 0, np.pi / 2)), r))
    grid = Grid.box((-L, -L), (L, L), cells, 2)
    fixed = FixedBoundary(lambda x: np.linalg.norm(x, axis=-1) - outer * L,
                          lambda x, t: np.maximum(cone_harmonic_values(x, theta, (0.0, -1.0)), 0.0),
                          "outer_arc", steady=True)
    return FlowSpec(grid, initial, 0.0, None, fixed, 0.0, t_end, t_end / steps, name="cone_window",
                    description={"theta": theta, "L": L})


def nested_cone_expansion(theta: float, t_top: float = 0.2, count: int = 5, cells: int = 256,
                          L_top: float = 1.0, steps: int = 4, beta: float | None = None,
                          tol: float = 0.2) -> DiagnosticsReport:
    """Expansion exponent at a cone vertex over a dyadic ladder, one window per rung.

    Rung ``k`` runs to ``t_top 2^-k`` in a window of half-width ``L_top 2^-k``
    with the same number of cells.  Windows shrink like ``t`` rather than
    ``t^(1/(2-beta))``, so the rungs are not rescaled copies of each other and
    the fitted slope tests the dynamics.  Obstacle timing is exact, so a few
    steps per rung suffice.
    """
    beta = np.pi / (2 * theta) if beta is None else beta
    used, rs, hs = [], [], []
    for k in range(count):
        spec = cone_window_spec(theta, L_top * 2.0 ** -k, cells, t_top * 2.0 ** -k, steps)
        run = simulate(spec, "obstacle", record_every=steps)
        used.append(run.frames[-1].time)
        rs.append(inscribed_radius(run.frames[-1], (0.0, 0.0)))
        hs.append(spec.grid.spacing)
    order = np.argsort(used)
    used, rs, hs = np.array(used)[order], np.array(rs)[order], np.array(hs)[order]
    return _expansion_report(used, rs, beta, tol, (0.0, 0.0), float(hs[0]),
                             extra={"radii_over_h": (rs / hs).tolist(), "cells": cells})


def nondegeneracy_profile(run: EvolutionRun, frontpoint, deltas, frame: int = -1, c_floor: float = 0.0,
                          sublinear_margin: float = 0.1) -> DiagnosticsReport:
    """Ratios ``u(x - delta e_d) / delta`` behind a front point and their minimum ``c0``."""
    fr = run.frames[frame]
    grid = fr.u.grid
    h = grid.spacing
    deltas = np.asarray(deltas, float)
    if np.any(deltas < 4 * h - 1e-12):
        raise ValueError("deltas must be at least 4h")
    x0 = np.asarray(frontpoint, float)
    fp = front_points(fr)
    if len(fp) == 0 or cKDTree(fp).query(x0)[0] > 2 * h:
        raise ValueError("frontpoint is not on the front of the queried frame")
    ed = np.zeros(grid.dim)
    ed[-1] = 1.0
    probes = x0[None, :] - deltas[:, None] * ed[None, :]
    if not np.all(grid.contains(probes)):
        raise ValueError("probe leaves the domain")
    vals = fr.u.interp(probes)
    ratios = vals / deltas
    c0 = float(np.min(ratios))
    pos = vals > 0
    slope = fit_loglog(deltas[pos], vals[pos])[0] if pos.sum() >= 2 else float("nan")
    sub = bool(np.isfinite(slope) and slope > 1.0 + sublinear_margin)
    k = int(np.argmin(ratios))
    return DiagnosticsReport("nondegeneracy", c0 >= c_floor,
                             {"c0": c0, "ratios": ratios.tolist(), "deltas": deltas.tolist(),
                              "growth_exponent": slope, "sublinear": sub},
                             probes[k], {"u": float(vals[k])}, {"c_floor": c_floor,
                                                                "sublinear_margin": sublinear_margin},
                             run.run_id, frame if frame >= 0 else len(run.frames) + frame)


def mass_balance(run: EvolutionRun, k: int) -> dict:
    """Area change between frames ``k`` and ``k+1`` against flux + source (b = 0)."""
    f0, f1 = run.frames[k], run.frames[k + 1]
    grid = f0.u.grid
    cell = grid.spacing ** grid.dim
    area0 = _smooth_area(f0)
    area1 = _smooth_area(f1)
    pts0, nrm0, vel0, mag0 = front_velocity(run.spec, solve_pressure(run.spec, f0.level.values, f0.time)[0],
                                            f0.level.values)
    pts1, nrm1, vel1, mag1 = front_velocity(run.spec, solve_pressure(run.spec, f1.level.values, f1.time)[0],
                                            f1.level.values)
    # rate = int_Gamma V ds, estimated from the mean speed times the front length
    rate0 = float(np.mean(vel0)) * _front_length(f0)
    rate1 = float(np.mean(vel1)) * _front_length(f1)
    dt = f1.time - f0.time
    return {"area_change": area1 - area0, "predicted": 0.5 * (rate0 + rate1) * dt, "cell": cell}


def _smooth_area(frame: Frame) -> float:
    """Area of ``{level < 0}`` with a linear sub-cell correction."""
    h = frame.level.grid.spacing
    phi = frame.level.values
    heav = np.clip(0.5 - phi / h, 0.0, 1.0)
    return float(np.sum(heav) * h ** frame.level.grid.dim)


def _front_length(frame: Frame) -> float:
    h = frame.level.grid.spacing
    phi = frame.level.values
    g = np.linalg.norm(np.stack(np.gradient(phi, h), axis=-1), axis=-1)
    delta = np.where(np.abs(phi) < h, (1.0 - np.abs(phi) / h) / h, 0.0)
    return float(np.sum(delta * g) * h ** frame.level.grid.dim)


# ---------------------------------------------------------------------------
# archive

def write_archive(run: EvolutionRun, path: str | Path, fmt: str = "ascii", spec_text: str | None = None,
                  reports: list[DiagnosticsReport] | None = None) -> Path:
    """Directory with the spec text, per-frame dumps, the front-graph CSV and reports."""
    import yaml

    path = Path(path)
    (path / "frames").mkdir(parents=True, exist_ok=True)
    if spec_text is None:
        spec_text = yaml.safe_dump({"name": run.spec.name, "scheme": run.scheme,
                                    "description": run.spec.description}, sort_keys=True)
    (path / "spec.yaml").write_text(spec_text)
    for k, fr in enumerate(run.frames):
        write_field(path / "frames" / f"u_{k:04d}.field", fr.u, fmt)
        if fr.level is not None:
            write_field(path / "frames" / f"level_{k:04d}.field", fr.level, fmt)
    with open(path / "front.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x_prime", "x_d"])
        for fr in run.frames:
            if fr.front is None:
                continue
            for xp, g in zip(fr.front.xprime, fr.front.samples[0]):
                if np.isfinite(g):
                    w.writerow([repr(float(fr.time))] + [" ".join(repr(float(v)) for v in xp), repr(float(g))])
    for rep in reports or []:
        rep.write(path / f"report_{rep.name}.json")
    return path
