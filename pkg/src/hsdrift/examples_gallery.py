"""Worked examples: a Hölder drift closing a cone into a cusp, and potential bumps
that are monotone at a scale but not infinitesimally.

Cusp example
    ``b = (-C0 |x2|^(gamma0 - 1), 0)``.  The barrier cones ``{|angle| < theta_t}``
    shrink from half-opening ``pi/(2 gamma0)`` to ``pi/(2 gamma1)`` for
    ``t in [0, 1]`` and then close into the cusp
    ``x1 = |x2| cot(theta_1) + (t - 1)|x2|^sigma`` for ``t in (1, 2)``.

Potential bumps
    A radial source of height ``delta^n`` on ``B_delta``, cut off on ``B_2delta``,
    its logarithmic potential ``phi1`` vanishing on the unit circle, and the
    tilted field ``phi1 + const + slope * x1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy import integrate

from .elliptic import BoundaryPiece, DirichletProblem, boundary_gradient, solve_dirichlet
from .evolution import EvolutionRun, FixedBoundary, FlowSpec
from .field_core import Cone, Grid, GridField
from .regularity_diag import MonotoneQuery, check_eps_a_monotone, check_full_monotone
from .reports import DiagnosticsReport
from .streamline import DriftField

C0_CEILING = 1e6


# ---------------------------------------------------------------------------
# cusp example

@dataclass
class CuspSpec:
    C0: float | None = None          # None: calibrate from both phases
    gamma0: float = 1.5
    gamma1: float = 3.0
    t_window: tuple = (0.0, 1.0)
    phase2_times: tuple = (1.25, 1.5, 1.75)
    sigma: float | None = None
    c_surrogate: float = 100.0
    x2_min: float = 0.05

    def __post_init__(self):
        if self.sigma is None:
            self.sigma = 2.0 / self.gamma1
        if not 1.0 < self.gamma0 < self.gamma1:
            raise ValueError("need 1 < gamma0 < gamma1")
        if not self.gamma0 - 1.0 < self.sigma < 1.0:
            raise ValueError(f"sigma = {self.sigma:.4g} must lie in (gamma0 - 1, 1)")

    def theta_t(self, t):
        t = np.clip(t, 0.0, 1.0)
        return (1 - t) * math.pi / (2 * self.gamma0) + t * math.pi / (2 * self.gamma1)

    def gamma_t(self, t):
        return math.pi / (2 * self.theta_t(t))

    @property
    def dtheta(self) -> float:
        return math.pi / (2 * self.gamma0) - math.pi / (2 * self.gamma1)

    def cusp_g(self, x2, t):
        a = np.abs(x2)
        return a / math.tan(self.theta_t(1.0)) + (t - 1.0) * a ** self.sigma

    def cusp_gprime(self, x2, t):
        a = np.maximum(np.abs(x2), 1e-300)
        return 1.0 / math.tan(self.theta_t(1.0)) + (t - 1.0) * self.sigma * a ** (self.sigma - 1.0)


def cusp_drift(spec: CuspSpec, C0: float, radius: float = 1.5) -> DriftField:
    """``b = (-C0 |x2|^(gamma0-1), 0)``: only Hölder, so the Lipschitz constant is infinite."""
    g0 = spec.gamma0

    def b(x):
        out = np.zeros_like(x)
        out[..., 0] = -C0 * np.abs(x[..., 1]) ** (g0 - 1.0)
        return out
    return DriftField(b, math.inf, C0 * radius ** (g0 - 1.0), "cusp_holder")


def _phase1_expression(spec: CuspSpec, C0: float, r: NDArray, t: NDArray) -> NDArray:
    th = spec.theta_t(t)
    gt = math.pi / (2 * th)
    return (-spec.dtheta * r - gt * r ** (gt - 1.0)
            + C0 * (r * np.sin(th)) ** (spec.gamma0 - 1.0) * np.sin(th))


def _phase1_samples(spec: CuspSpec, nr: int = 400, nt: int = 41):
    r = np.geomspace(1e-6, 1.0, nr)
    t = np.linspace(spec.t_window[0], spec.t_window[1], nt)
    return np.meshgrid(r, t, indexing="ij")


def cusp_phase1_check(spec: CuspSpec, C0: float | None = None, nr: int = 400, nt: int = 41) -> DiagnosticsReport:
    """Sign of the supersolution residual on the shrinking cones.

    The minimal admissible ``C0`` is located by bisection on the sampled
    predicate; ``C0`` defaults to ``spec.C0`` or, if that is unset, to 1.25 times
    the threshold.
    """
    R, T = _phase1_samples(spec, nr, nt)

    def ok(c):
        return bool(np.all(_phase1_expression(spec, c, R, T) >= 0))
    hi = 1.0
    while not ok(hi):
        hi *= 2
        if hi > C0_CEILING:
            raise ValueError(f"no admissible C0 <= {C0_CEILING:g} for the cone phase")
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    threshold = hi
    c_used = C0 if C0 is not None else (spec.C0 if spec.C0 is not None else 1.25 * threshold)
    vals = _phase1_expression(spec, c_used, R, T)
    k = np.unravel_index(np.argmin(vals), vals.shape)
    th = spec.theta_t(T[k])
    witness = [float(R[k] * math.cos(th)), float(R[k] * math.sin(th))]
    return DiagnosticsReport("cusp_phase1", bool(vals.min() >= 0),
                             {"C0_threshold": threshold, "C0_used": float(c_used),
                              "min_residual": float(vals.min())},
                             witness, {"t": float(T[k]), "r": float(R[k])},
                             {"gamma0": spec.gamma0, "gamma1": spec.gamma1, "samples": [nr, nt]})


def cusp_harmonic(spec: CuspSpec, t: float, h: float = 1 / 64, R: float = 2.0):
    """Harmonic ``phi^t`` in ``{x1 > g(x2, t)} ∩ B_R``, zero on the cusp, normalised to 1 at ``(1/2, 0)``.

    The outer arc carries the cone harmonic of exponent ``gamma1``.  Returns
    ``(points, |grad phi^t|, normals)`` on the cusp boundary.
    """
    pad = 4 * h
    n1 = int(round((R + 2 * pad) / h))
    n2 = int(round(2 * (R + pad) / h))
    grid = Grid((-pad, -R - pad), h, (n1 + 1, n2 + 1))
    g1 = spec.gamma1

    def cusp_level(x):
        return spec.cusp_g(x[..., 1], t) - x[..., 0]

    def outer_val(p):
        th = np.arctan2(p[..., 1], p[..., 0])
        return (np.hypot(p[..., 0], p[..., 1]) ** g1 * np.cos(g1 * th)).clip(min=0.0)
    x = grid.coords()
    pieces = [BoundaryPiece(cusp_level(x), 0.0, "cusp"),
              BoundaryPiece(np.linalg.norm(x, axis=-1) - R, outer_val, "arc")]
    sol = solve_dirichlet(DirichletProblem(grid, 0.0, pieces))
    scale = float(sol.field.interp(np.array([[0.5, 0.0]]))[0])
    if not scale > 0:
        raise ValueError("normalisation point (1/2, 0) lies outside the cusp domain")
    pts, mag, nrm = boundary_gradient(sol, 0)
    return pts, mag / scale, nrm


def cusp_phase2_check(spec: CuspSpec, C0: float | None = None, h: float = 1 / 64,
                      times=None) -> DiagnosticsReport:
    """Check ``V >= b . nu + |grad phi^t|`` on the cusp boundaries with a solved ``phi^t``.

    The normal speed of the cusp is ``V = -|x2|^sigma / sqrt(1 + g'^2)``; the
    surrogate bound ``|grad phi^t| <= c x1^gamma1 / |x2|`` is also measured.
    """
    times = spec.phase2_times if times is None else times
    c_used = C0 if C0 is not None else spec.C0
    need, csur, worst = 0.0, 0.0, (np.inf, None, {})
    per_time = []
    for t in times:
        pts, mag, _ = cusp_harmonic(spec, t, h)
        a = np.abs(pts[:, 1])
        sel = (a >= spec.x2_min) & (np.linalg.norm(pts, axis=1) <= 1.0)
        if not sel.any():
            raise ValueError("no cusp boundary samples in the checked window")
        p, m, a = pts[sel], mag[sel], a[sel]
        root = np.sqrt(1 + spec.cusp_gprime(p[:, 1], t) ** 2)
        c_need = (m * root + a ** spec.sigma) / a ** (spec.gamma0 - 1.0)
        need = max(need, float(c_need.max()))
        chat = float(np.max(m * a / np.maximum(p[:, 0], 1e-12) ** spec.gamma1))
        csur = max(csur, chat)
        branch = (t - 1.0) * a ** (spec.sigma - 1.0) >= 1.0
        per_time.append({"t": float(t), "samples": int(sel.sum()), "C0_needed": float(c_need.max()),
                         "c_surrogate": chat, "steep_branch": int(branch.sum())})
        if c_used is not None:
            slack = (c_used * a ** (spec.gamma0 - 1.0) - a ** spec.sigma) / root - m
            k = int(np.argmin(slack))
            if slack[k] < worst[0]:
                worst = (float(slack[k]), p[k], {"t": float(t), "grad": float(m[k])})
    if c_used is None:
        c_used = 1.25 * need
        worst = (None, None, {})
    passed = c_used >= need and csur <= spec.c_surrogate
    return DiagnosticsReport("cusp_phase2", bool(passed),
                             {"C0_needed": need, "C0_used": float(c_used), "c_surrogate_measured": csur,
                              "min_slack": worst[0], "per_time": per_time},
                             worst[1], worst[2],
                             {"h": h, "x2_min": spec.x2_min, "c_surrogate": spec.c_surrogate,
                              "sigma": spec.sigma})


def calibrate_C0(spec: CuspSpec, h: float = 1 / 64, margin: float = 1.25) -> float:
    """Smallest drift strength passing both phases, times ``margin``."""
    p1 = cusp_phase1_check(spec, C0=0.0)
    p2 = cusp_phase2_check(spec, C0=None, h=h)
    c = margin * max(p1.measured["C0_threshold"], p2.measured["C0_needed"])
    if c > C0_CEILING:
        raise ValueError(f"no admissible C0 <= {C0_CEILING:g}")
    return c


def _cone_distance(x: NDArray, theta: float) -> NDArray:
    """Distance from ``x`` to ``{|angle from e1| < theta}``."""
    r = np.linalg.norm(x, axis=-1)
    ang = np.abs(np.arctan2(x[..., 1], x[..., 0]))
    gap = ang - theta
    return np.where(gap <= 0, 0.0, np.where(gap < math.pi / 2, r * np.sin(np.minimum(gap, math.pi / 2)), r))


def cusp_flow_spec(spec: CuspSpec, C0: float, cells: int = 64, dt: float | None = None) -> FlowSpec:
    """Flow in ``B_1`` with the Hölder drift, driven by ``cos(gamma1 angle)_+`` on the unit circle.

    Outside the unit disc the fixed set is a wall (zero data) except on the
    sector where the boundary data is positive.  The initial support is the
    widest barrier cone cut by the disc.
    """
    h = 1.0 / cells
    pad = 8 * h
    n1 = int(round((1 + 2 * pad) / h))
    n2 = int(round(2 * (1 + pad) / h))
    grid = Grid((-pad, -1 - pad), h, (n1 + 1, n2 + 1))
    th0 = spec.theta_t(0.0)
    g1 = spec.gamma1

    def initial(x):
        r = np.linalg.norm(x, axis=-1)
        ang = np.abs(np.arctan2(x[..., 1], x[..., 0]))
        cone = np.where(ang <= th0, -r * np.sin(np.clip(th0 - ang, 0, math.pi / 2)), _cone_distance(x, th0))
        return np.maximum(cone, r - 1.0)

    def data(x, t):
        ang = g1 * np.arctan2(x[..., 1], x[..., 0])
        return np.where(np.abs(ang) < math.pi / 2, np.cos(ang), 0.0)

    fixed = FixedBoundary(lambda x: np.linalg.norm(x, axis=-1) - 1.0, data, "unit_circle")
    drift = cusp_drift(spec, C0)
    if dt is None:
        # front speed is bounded by |grad u| + |b|; |grad u| <= 2 gamma1 near the circle
        dt = 0.4 * h / (C0 + 2 * g1)
        nsteps = int(math.ceil((spec.t_window[1] - spec.t_window[0]) / dt))
        dt = (spec.t_window[1] - spec.t_window[0]) / nsteps
    return FlowSpec(grid, initial, 0.0, drift, fixed, spec.t_window[0], spec.t_window[1], dt,
                    name="cusp", description={"C0": C0, "gamma0": spec.gamma0, "gamma1": spec.gamma1})


def cusp_containment(run: EvolutionRun, spec: CuspSpec, tol_cells: float = 2.0) -> DiagnosticsReport:
    """Positive nodes in the unit disc stay within ``tol_cells * h`` of the cone ``{|angle| < theta_t}``."""
    grid = run.spec.grid
    h = grid.spacing
    x = grid.coords()
    inside = np.linalg.norm(x, axis=-1) < 1.0
    worst, wpt, wt = 0.0, None, None
    for fr in run.frames:
        pos = (fr.level.values < 0) & inside
        if not pos.any():
            continue
        d = _cone_distance(x[pos], spec.theta_t(fr.time))
        k = int(np.argmax(d))
        if d[k] > worst or wpt is None:
            worst, wpt, wt = float(d[k]), x[pos][k], fr.time
    return DiagnosticsReport("cusp_containment", worst <= tol_cells * h + 1e-12,
                             {"max_excess": worst, "max_excess_cells": worst / h, "frames": len(run.frames)},
                             wpt, {"t": wt}, {"tol_cells": tol_cells, "h": h}, run.run_id)


# ---------------------------------------------------------------------------
# potential bumps

def _septic_step(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 4 * (35 - 84 * s + 70 * s ** 2 - 20 * s ** 3)


@dataclass
class PotentialBumpSpec:
    delta: float
    n: int = 0
    alpha: float | None = None
    kappa: float | None = None
    eps: float | None = None
    quad_rtol: float = 1e-8
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.delta < 0.25:
            raise ValueError("delta must lie in (0, 1/4)")
        if self.n < 0:
            raise ValueError("n must be nonnegative")

    @property
    def _epsabs(self) -> float:
        return 1e-4 * self.quad_rtol * self.delta ** (self.n + 2)

    @classmethod
    def for_scale(cls, eps: float, alpha: float, kappa: float) -> "PotentialBumpSpec":
        """Bump at scale ``eps``: ``n = 0`` and ``delta = eps^((alpha + kappa + 1) / 2)``."""
        lo = min(0.0, 1.0 - alpha)
        if not lo < kappa < 1.0:
            raise ValueError(f"kappa must lie in ({lo:g}, 1)")
        return cls(eps ** ((alpha + kappa + 1) / 2), 0, alpha, kappa, eps)

    def source(self, r):
        d = self.delta
        return d ** self.n * (1.0 - _septic_step((np.asarray(r, float) - d) / d))

    def mass(self, r: float) -> tuple[float, float]:
        r = min(r, 2 * self.delta)
        if r <= 0:
            return 0.0, 0.0
        val, err = integrate.quad(lambda s: self.source(s) * s, 0.0, r, points=[self.delta] if r > self.delta else None,
                                  epsabs=self._epsabs, epsrel=1e-10, limit=200)
        return 2 * math.pi * val, 2 * math.pi * err

    def _tail(self, r: float) -> tuple[float, float]:
        top = 2 * self.delta
        if r >= top:
            return 0.0, 0.0
        pts = [self.delta] if r < self.delta else None
        return integrate.quad(lambda s: self.source(s) * s * math.log(s), r, top, points=pts,
                              epsabs=self._epsabs, epsrel=1e-10, limit=200)

    def potential(self, r) -> tuple[NDArray, float]:
        """``phi1(r)`` for ``-Lap phi1 = f`` in the unit disc with ``phi1 = 0`` on its boundary.

        Returns values and the largest quadrature error estimate.
        """
        r = np.asarray(r, float)
        flat = r.ravel()
        out = np.empty_like(flat)
        mtot, _ = self.mass(2 * self.delta)
        uniq, inv = np.unique(np.round(flat, 15), return_inverse=True)
        vals = np.empty(len(uniq))
        err = 0.0
        for i, s in enumerate(uniq):
            if s >= 2 * self.delta:
                vals[i] = -mtot * math.log(s) / (2 * math.pi)
            elif s == 0:
                tl, et = self._tail(0.0)
                vals[i], err = -tl, max(err, et)
            else:
                m, em = self.mass(s)
                tl, et = self._tail(s)
                vals[i] = -m * math.log(s) / (2 * math.pi) - tl
                err = max(err, em * abs(math.log(s)) / (2 * math.pi) + et)
        out[:] = vals[inv]
        scale = self.delta ** (self.n + 2)
        if err > self.quad_rtol * scale:
            raise ValueError(f"quadrature error {err:.3g} exceeds {self.quad_rtol:g} delta^(n+2)")
        return out.reshape(r.shape), err

    def potential_slope(self, r) -> NDArray:
        """``phi1'(r) = -M(r) / (2 pi r)``."""
        r = np.asarray(r, float)
        return np.array([-self.mass(s)[0] / (2 * math.pi * s) if s > 0 else 0.0 for s in r.ravel()]).reshape(r.shape)

    def constants(self) -> dict:
        """Largest gradient and value of ``phi1`` and the constant ``C`` of the bounds."""
        if "C" not in self._cache:
            d = self.delta
            rr = np.linspace(d / 200, 2 * d, 801)
            gsup = float(np.max(-self.potential_slope(rr)))
            psup = float(self.potential(np.array([0.0]))[0][0])
            scale = d ** (self.n + 2) * abs(math.log(d))
            C = max(d ** (self.n + 1) / gsup, psup / scale)
            self._cache.update({"grad_sup": gsup, "value_sup": psup, "C": C})
        return dict(self._cache)


def make_bump_source(spec: PotentialBumpSpec, grid: Grid) -> GridField:
    r = np.linalg.norm(grid.coords(), axis=-1)
    return GridField(grid, spec.source(r), nonnegative=True)


def _phi1_grid(spec: PotentialBumpSpec, grid: Grid) -> NDArray:
    r = np.linalg.norm(grid.coords(), axis=-1)
    vals = np.zeros(grid.shape)
    near = r < 2 * spec.delta
    vals[near] = spec.potential(r[near])[0]
    mtot = spec.mass(2 * spec.delta)[0]
    far = ~near
    vals[far] = -mtot * np.log(r[far]) / (2 * math.pi)
    return vals


def make_e3_field(spec: PotentialBumpSpec, grid: Grid) -> tuple[GridField, GridField]:
    """Source ``f`` and ``phi = phi1 + 2 + delta^(n+1) x1 / (2C)``."""
    c = spec.constants()["C"]
    x1 = grid.coords()[..., 0]
    phi = _phi1_grid(spec, grid) + 2.0 + spec.delta ** (spec.n + 1) * x1 / (2 * c)
    return make_bump_source(spec, grid), GridField(grid, phi, nonnegative=True)


def _e2_phi(spec: PotentialBumpSpec, grid: Grid) -> GridField:
    if spec.kappa is None or spec.alpha is None or spec.eps is None:
        raise ValueError("this construction needs eps, alpha and kappa (use PotentialBumpSpec.for_scale)")
    if spec.n != 0:
        raise ValueError("this construction needs n = 0")
    c = spec.constants()["C"]
    x1 = grid.coords()[..., 0]
    phi = _phi1_grid(spec, grid) + spec.delta * (x1 + 1) / (2 * c) + spec.eps ** spec.kappa
    return GridField(grid, phi, nonnegative=True)


def make_e2_field(spec: PotentialBumpSpec, grid: Grid, theta: float = 0.1) -> GridField:
    """``phi = phi1 + delta (x1 + 1) / (2C) + eps^kappa``, verified before it is returned.

    Raises ``ValueError`` naming the first failing property: the two-sided
    bound on the unit disc, the scaled monotonicity, or the failure of full
    monotonicity.
    """
    out = e2_check(spec, grid, theta)
    if not out["bounds_ok"]:
        lo, hi, ek = out["bounds"]
        raise ValueError(f"bound eps^kappa <= phi <= 2 eps^kappa fails on the unit disc: "
                         f"range [{lo:.6g}, {hi:.6g}], eps^kappa = {ek:.6g}")
    if not out["scaled"].passed:
        raise ValueError(f"(eps, eps^alpha)-monotonicity fails: slack {out['scaled'].measured['worst_slack']:.3g}")
    if out["full"].passed or out["min_dx1"] >= 0:
        raise ValueError("full monotonicity along e1 holds, so the field is not a counterexample")
    return out["phi"]


def _tilt_witness(spec: PotentialBumpSpec, slope: float) -> tuple[float, list]:
    """Most negative ``d phi / d x1`` on the positive ``x1`` axis inside ``B_2delta`` (closed form)."""
    rr = np.linspace(spec.delta / 200, 2 * spec.delta, 801)
    dx1 = spec.potential_slope(rr) + slope
    k = int(np.argmin(dx1))
    return float(dx1[k]), [float(rr[k]), 0.0]


def _monotone_window(grid: Grid, eps: float, theta: float) -> tuple:
    lo = np.asarray(grid.origin, float)
    hi = grid.upper
    reach = eps * (1 + math.sin(theta))
    return (tuple(lo), tuple(np.where(np.arange(grid.dim) == 0, hi - 2 * reach, hi)))


def e3_check(spec: PotentialBumpSpec, grid: Grid, theta: float = 0.1,
             max_scale: float | None = None) -> dict:
    """The tilted bump is ``(delta^(1/2), 0)``-monotone along ``e1`` but decreases in ``x1`` somewhere."""
    eps = math.sqrt(spec.delta)
    f, phi = make_e3_field(spec, grid)
    cone = Cone((1.0, 0.0), theta)
    win = _monotone_window(grid, eps, theta)
    q = MonotoneQuery(cone, eps, 0.0, win, max_scale if max_scale is not None else 2 * eps)
    scaled = check_eps_a_monotone(phi, q)
    r2 = 2 * spec.delta
    full = check_full_monotone(phi, cone, window=((-r2, -r2), (r2, r2)))
    slope = spec.delta ** (spec.n + 1) / (2 * spec.constants()["C"])
    dmin, wpt = _tilt_witness(spec, slope)
    return {"scaled": scaled, "full": full, "min_dx1": dmin, "witness": wpt, "constants": spec.constants(),
            "eps": eps}


def e2_check(spec: PotentialBumpSpec, grid: Grid, theta: float = 0.1,
             max_scale: float | None = None, bounds_samples: int = 401) -> dict:
    """Bounds ``eps^kappa <= phi <= 2 eps^kappa`` on the unit disc, the scaled check and the failed full check."""
    phi = _e2_phi(spec, grid)
    eps = spec.eps
    c = spec.constants()["C"]
    ek = eps ** spec.kappa
    # phi is radial plus linear, so its extremes over the unit disc lie on the x1 axis
    s = np.linspace(-1.0, 1.0, bounds_samples)
    line = spec.potential(np.abs(s))[0] + spec.delta * (s + 1) / (2 * c) + ek
    inside = np.linalg.norm(grid.coords(), axis=-1) <= 1.0
    lo = min(float(line.min()), float(phi.values[inside].min()))
    hi = max(float(line.max()), float(phi.values[inside].max()))
    bounds_ok = bool(lo >= ek * (1 - 1e-12) and hi <= 2 * ek)
    cone = Cone((1.0, 0.0), theta)
    win = _monotone_window(grid, eps, theta)
    q = MonotoneQuery(cone, eps, eps ** spec.alpha, win, max_scale if max_scale is not None else 2 * eps)
    scaled = check_eps_a_monotone(phi, q)
    r2 = 2 * spec.delta
    full = check_full_monotone(phi, cone, window=((-r2, -r2), (r2, r2)))
    dmin, wpt = _tilt_witness(spec, spec.delta / (2 * c))
    return {"phi": phi, "scaled": scaled, "full": full, "bounds_ok": bounds_ok,
            "bounds": [lo, hi, ek], "min_dx1": dmin, "witness": wpt, "constants": spec.constants()}
