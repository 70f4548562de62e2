"""Sup-convolution with a variable radius and the barrier built from it.

``v(x) = sup_{B_{phi(x)}(x)} u`` regularises level sets of ``u``: if ``phi``
satisfies ``phi Delta phi >= A |grad phi|^2`` then ``v`` stays (almost) a
subsolution.  The barrier ``vbar`` combines ``v`` with two elliptic
corrections on the strip around the front:

    vbar = (1 + eps^(alpha+1)) v - eps^alpha2 w2 + c* eps^alpha1 w1.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from numpy.typing import NDArray
from scipy import ndimage

from .elliptic import BoundaryPiece, DirichletProblem, SolverError, solve_dirichlet
from .field_core import FrontGraph, Grid, GridField, front_crossings, write_field
from .levelset import distance_from_samples
from .reports import DiagnosticsReport


class ScaleError(ValueError):
    pass


@dataclass
class RadiusField:
    grid: Grid
    phi: NDArray
    grad_bound: float = float("nan")
    dt_bounds: tuple[float, float] = (0.0, 0.0)
    report: DiagnosticsReport | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, float)
        if self.phi.shape != self.grid.shape:
            raise ValueError("radius field does not match the grid")
        if math.isnan(self.grad_bound):
            self.grad_bound = measured_gradient(self.phi, self.grid)

    @classmethod
    def constant(cls, grid: Grid, r: float) -> "RadiusField":
        return cls(grid, np.full(grid.shape, float(r)), 0.0)

    def scaled(self, s: float) -> "RadiusField":
        return RadiusField(self.grid, s * self.phi, s * self.grad_bound,
                           (s * self.dt_bounds[0], s * self.dt_bounds[1]), self.report, dict(self.meta))


def measured_gradient(phi: NDArray, grid: Grid, where: NDArray | None = None) -> float:
    g = np.stack(np.gradient(phi, grid.spacing), axis=-1)
    mag = np.linalg.norm(g, axis=-1)
    if where is not None:
        mag = mag[where]
    return float(mag.max()) if mag.size else 0.0


# ---------------------------------------------------------------------------
# sup-convolution

def _sphere_samples(radius: float, dim: int, spacing: float) -> NDArray:
    """Points on the sphere of ``radius`` with neighbour distance <= ``spacing``.

    In the plane the sample count is a multiple of 4, so the axis directions
    are always included.
    """
    if radius <= 0:
        return np.zeros((1, dim))
    if dim == 2:
        n = max(8, 4 * int(math.ceil(2 * math.pi * radius / spacing / 4)))
        a = 2 * math.pi * np.arange(n) / n
        pts = np.stack([np.cos(a), np.sin(a)], axis=-1)
        # snap the axis samples to exact unit vectors
        pts[np.abs(pts) < 1e-15] = 0.0
        return radius * pts
    n = max(26, int(math.ceil(4 * math.pi * radius ** 2 / spacing ** 2 * 1.5)))
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    rho = np.sqrt(1 - z ** 2)
    a = math.pi * (1 + 5 ** 0.5) * k
    pts = np.stack([rho * np.cos(a), rho * np.sin(a), z], axis=-1)
    poles = np.array([[0, 0, 1.0], [0, 0, -1.0], [1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
    return radius * np.vstack([pts, poles])


def _node_offsets(radius: float, dim: int, h: float) -> NDArray:
    m = int(math.floor(radius / h + 1e-12))
    rng = np.arange(-m, m + 1)
    off = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    keep = np.sum(off.astype(float) ** 2, axis=1) * h * h <= radius * radius * (1 + 1e-12)
    return off[keep]


def sup_convolve(u: GridField, phi: RadiusField | float, nodes: NDArray | None = None,
                 bucket: float | None = None, chunk: int = 4096) -> GridField:
    """``v(x) = max of u over B_{phi(x)}(x)`` for the multilinear interpolant of ``u``.

    A multilinear interpolant is harmonic in each cell, so its maximum over a
    ball is attained at an enclosed node or on the sphere.  Node offsets come
    from radius buckets of width ``h/4`` (rounded down); the sphere is sampled
    at the node's own radius with spacing ``h/2``.  ``nodes`` restricts the
    evaluation (other nodes keep ``u``).
    """
    grid = u.grid
    h = grid.spacing
    d = grid.dim
    bucket = h / 4 if bucket is None else bucket
    rad = phi.phi if isinstance(phi, RadiusField) else np.full(grid.shape, float(phi))
    if np.any(rad < 0):
        raise ValueError("radius must be non-negative")
    sel = np.ones(grid.shape, bool) if nodes is None else np.asarray(nodes, bool)
    idx = np.argwhere(sel)
    x = grid.coords()[sel]
    r = rad[sel]
    lo = np.asarray(grid.origin)
    hi = grid.upper
    per = np.asarray(grid.periodic)
    bad = ~per & ((x - r[:, None] < lo - 1e-12) | (x + r[:, None] > hi + 1e-12))
    if bad.any():
        k = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise ValueError(f"ball exits grid at node {tuple(int(i) for i in idx[k])} "
                         f"(x = {x[k].tolist()}, radius = {r[k]:.4g})")
    out = u.values.copy()
    vals = u.values
    shape = np.asarray(grid.shape)
    b_id = np.floor(r / bucket + 1e-9).astype(np.int64)
    res = np.empty(len(r))
    for b in np.unique(b_id):
        which = np.nonzero(b_id == b)[0]
        offs = _node_offsets(b * bucket, d, h)
        for s in range(0, len(which), chunk):
            w = which[s:s + chunk]
            best = np.full(len(w), -np.inf)
            base = idx[w]
            for o in offs:
                j = base + o
                j = np.where(per, j % shape, j)
                best = np.maximum(best, vals[tuple(j.T)])
            # sphere at each node's exact radius; group by radius for shared samples
            rr = r[w]
            for rv in np.unique(rr):
                m = rr == rv
                sph = _sphere_samples(float(rv), d, h / 2)
                pts = x[w][m][:, None, :] + sph[None, :, :]
                ip = u.interp(pts.reshape(-1, d)).reshape(pts.shape[:2])
                best[m] = np.maximum(best[m], ip.max(axis=1))
            res[w] = best
    out[sel] = res
    return u.with_values(out)


# ---------------------------------------------------------------------------
# parameters

def section_exponents(beta: float, gamma_bar: float) -> dict:
    """Exponents of the flat-to-Lipschitz barrier, determined by ``beta`` and the Hoelder exponent of f.

    Interval constraints are resolved at their midpoints; ``alpha`` is the
    monotonicity gain exponent.
    """
    if not (1.0 < beta < 1.0 + gamma_bar):
        raise ValueError("need 1 < beta < 1 + gamma_bar")
    if not (0.0 < gamma_bar < 1.0):
        raise ValueError("gamma_bar must lie in (0, 1)")
    kappa = (2 - beta) / 8
    gamma1 = max(0.75 + beta / 8, 1 - gamma_bar / 2)
    iota = 5 * kappa
    gamma2 = gamma1 - iota
    a1_lo, a1_hi = 1 - gamma1, 1 - (beta + iota) / 2
    if not a1_lo < a1_hi:
        raise ValueError("alpha_1 interval is empty")
    alpha1 = 0.5 * (a1_lo + a1_hi)
    a2_hi = min(1 - iota, gamma_bar)
    if not alpha1 < a2_hi:
        raise ValueError("alpha_2 interval is empty")
    alpha2 = 0.5 * (alpha1 + a2_hi)
    alpha = 0.5 * min(gamma_bar ** 2 / 2, gamma_bar * (1 - gamma_bar) / 8, (1 - gamma_bar ** 2) / 16)
    gamma3 = min((alpha1 + gamma1 - 1) / 2, gamma2)
    return {"beta": beta, "gamma_bar": gamma_bar, "kappa": kappa, "gamma1": gamma1, "iota": iota,
            "gamma2": gamma2, "alpha1": alpha1, "alpha2": alpha2, "alpha": alpha, "gamma3": gamma3,
            "alpha1_interval": [a1_lo, a1_hi], "alpha2_interval": [alpha1, a2_hi]}


@dataclass
class BarrierParams:
    eps: float
    beta: float = 1.5
    gamma_bar: float = 0.75
    theta: float = 1.1
    j: float = 0.8
    A1: float | None = None
    A2: float = 2.0
    c_star: float = 0.01
    K: float = 1.0
    f_sup: float = 0.0
    eta: float | None = None

    def exponents(self) -> dict:
        return section_exponents(self.beta, self.gamma_bar)

    def A1_value(self, d: int) -> float:
        return float(2 * d) if self.A1 is None else float(self.A1)

    def sigma(self) -> float:
        s = math.sin(self.theta) - (1 - self.j)
        return self.eps * s

    def eta_value(self) -> float:
        """Prescribed ``eta``, else the exact balance if it lands in the admissible window, else its midpoint."""
        if self.eta is not None:
            return float(self.eta)
        lo, hi = self.eta_window()
        ex = self.exponents()
        s = math.sin(self.theta) - (1 - self.j)
        exact = (self.j * math.sin(self.theta) - self.eps ** ex["gamma3"]) / s - 1
        if lo < exact < hi:
            return float(exact)
        return 0.5 * (lo + hi)

    def eta_window(self) -> tuple[float, float]:
        s = math.sin(self.theta) - (1 - self.j)
        gap = self.j * math.sin(self.theta) - s
        return gap / (2 * s), gap / s

    def check(self) -> None:
        s = math.sin(self.theta) - (1 - self.j)
        if not (0.5 < s < 1.0):
            raise ValueError("sigma/eps = sin(theta) - (1 - j) must lie in (1/2, 1)")
        if not (0 < self.j < 1):
            raise ValueError("j must lie in (0, 1)")


# ---------------------------------------------------------------------------
# radius families

def smoothstep(s: NDArray) -> NDArray:
    """C^2 step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s * s)


def differential_residual(phi: NDArray, grid: Grid, A: float) -> NDArray:
    """``phi Delta phi - A |grad phi|^2`` by centred differences (interior nodes; edges NaN)."""
    h = grid.spacing
    lap = np.zeros_like(phi)
    grad2 = np.zeros_like(phi)
    for ax in range(grid.dim):
        fwd = np.roll(phi, -1, axis=ax)
        bwd = np.roll(phi, 1, axis=ax)
        lap += (fwd - 2 * phi + bwd) / h ** 2
        grad2 += ((fwd - bwd) / (2 * h)) ** 2
    out = phi * lap - A * grad2
    for ax in range(grid.dim):
        if not grid.periodic[ax]:
            sl = [slice(None)] * grid.dim
            sl[ax] = 0
            out[tuple(sl)] = np.nan
            sl[ax] = -1
            out[tuple(sl)] = np.nan
    return out


def strip_mask(grid: Grid, front: FrontGraph | None, r: float, pad: float = 0.0,
               g_fn=None, t: float | None = None) -> NDArray:
    """Nodes of ``B_1`` with ``|g(x') - x_d| < 2r + pad``."""
    x = grid.coords()
    g = _graph_values(grid, front, g_fn, t)
    return (np.abs(g - x[..., -1]) < 2 * r + pad) & (np.linalg.norm(x, axis=-1) < 1.0)


def _graph_values(grid: Grid, front: FrontGraph | None, g_fn=None, t=None) -> NDArray:
    x = grid.coords()
    if g_fn is not None:
        return np.asarray(g_fn(x[..., :-1]), float).reshape(grid.shape)
    if front is None:
        return np.zeros(grid.shape)
    if grid.dim != 2:
        raise NotImplementedError("strip from a front graph is implemented for d = 2")
    return front.evaluate(x[..., 0].ravel(), t).reshape(grid.shape)


def build_radius_phi_eta(eta: float, params: BarrierParams, grid: Grid, front: FrontGraph | None = None,
                         g_fn=None, t: float | None = None, max_fail: float = 1e-3) -> RadiusField:
    """Radius family on the strip around the front with the five structural properties.

    ``psi = phi^(1 - A1)`` solves ``-Delta psi = K`` on a slab slightly wider
    than the strip, with data ``P^(1 - A1)`` where ``P = 1 + eta * S`` and ``S``
    is a smooth step from 0 (within ``eps^kappa / 2`` of the unit sphere) to 1
    (beyond ``eps^kappa``).  The step starts two slab widths past
    ``eps^kappa / 2`` because the slab solve spreads data sideways by about
    one width.  Since ``psi`` is superharmonic,
    ``phi Delta phi - A1 |grad phi|^2 = K psi^(2p-1) / (A1 - 1) > 0`` with
    ``p = 1/(1 - A1)``.  The field is time independent, so ``0 <= d_t phi``
    holds trivially.
    """
    if not (0.0 <= eta <= 1.0):
        raise ValueError("eta must lie in [0, 1]")
    ex = params.exponents()
    eps = params.eps
    kappa, g1, g2 = ex["kappa"], ex["gamma1"], ex["gamma2"]
    if not g1 - g2 > 4 * kappa:
        raise ValueError("need gamma1 - gamma2 > 4 kappa")
    A1 = params.A1_value(grid.dim)
    A2 = params.A2
    h = grid.spacing
    r = eps ** g1
    ek = eps ** kappa
    if ek >= 1.0 or ek / 2 < 2 * h:
        raise ScaleError("property bands are not resolved")
    x = grid.coords()
    dist_b = 1.0 - np.linalg.norm(x, axis=-1)
    pad = 3 * h
    lag = 4 * (2 * r + pad)
    if ek / 2 - lag <= 2 * h:
        raise ScaleError("property bands are not resolved")

    def step(db):
        return smoothstep((db - ek / 2 - lag) / (ek / 2 - lag))
    P = 1.0 + eta * step(dist_b)
    strip = strip_mask(grid, front, r, 0.0, g_fn, t)
    if not strip.any():
        raise ValueError("strip empty")
    stencil_ok = np.ones(grid.shape, bool)
    if eta == 0.0:
        phi = np.ones(grid.shape)
    else:
        q = 1.0 - A1
        gval = _graph_values(grid, front, g_fn, t)
        top = x[..., -1] - gval - (2 * r + pad)
        bot = gval - (2 * r + pad) - x[..., -1]
        ball = np.linalg.norm(x, axis=-1) - 1.0

        def data(p):
            return (1.0 + eta * step(1.0 - np.linalg.norm(p, axis=-1))) ** q

        pieces = [BoundaryPiece(top, data, "top"), BoundaryPiece(bot, data, "bottom"),
                  BoundaryPiece(ball, 1.0, "sphere")]
        prob = DirichletProblem(grid, params.K, pieces, fill=P ** q)
        psi = solve_dirichlet(prob, tol=1e-9).field.values
        dom = prob.domain()
        phi = np.where(dom, np.maximum(psi, 1e-300) ** (1.0 / q), P)
        # centred differences at nodes next to the sphere would mix in fill values
        stencil_ok = ndimage.binary_erosion(dom, border_value=0)
    # verification of the five properties on strip nodes
    res = differential_residual(phi, grid, A1)
    inner = strip & stencil_ok & ~np.isnan(res)
    grad = np.linalg.norm(np.stack(np.gradient(phi, h), axis=-1), axis=-1)
    cbar = float(phi[strip].min())
    cap = A2 * eps ** (g2 - g1)
    n = int(strip.sum())
    checks = {
        "bounds": strip & ((phi > 1 + eta + 1e-12) | (phi <= 0)),
        "differential": inner & (res < -1e-9 * np.maximum(1.0, phi * phi)),
        "near_sphere_le_one": strip & (dist_b < ek / 2) & (phi > 1 + 1e-12),
        "interior_lower": strip & (dist_b > ek) & (phi < 1 + eta * (1 - A2 * eps ** g2) - 1e-12),
        "gradient_cap": strip & (grad > cap),
    }
    fails = {k: int(v.sum()) for k, v in checks.items()}
    worst_name = max(fails, key=fails.get)
    ok = all(v <= max_fail * n for v in fails.values())
    wpt = x[checks[worst_name]][0].tolist() if fails[worst_name] else [float("nan")] * grid.dim
    report = DiagnosticsReport("phi_eta", ok,
                               {"failures": fails, "strip_nodes": n, "cbar": cbar, "grad_sup": float(grad[strip].max()),
                                "grad_cap": cap, "min_differential": float(np.nanmin(res[inner])) if inner.any() else 0.0,
                                "eta": eta},
                               wpt, {"property": worst_name},
                               {"A1": A1, "A2": A2, "K": params.K, "eps": eps, "max_fail": max_fail})
    if not ok:
        raise ValueError(f"radius family property '{worst_name}' fails at {fails[worst_name]} of {n} "
                         f"strip nodes; worst node at {wpt}")
    rf = RadiusField(grid, phi, float(grad[strip].max()), (0.0, 0.0), report,
                     {"eta": eta, "r": r, "eps_kappa": ek, "strip": strip})
    return rf


@dataclass
class PhiProfile:
    """Radial profile with ``Phi^(1 - A0)`` harmonic on the annulus ``sin(theta)/10 < r < 1``."""
    A0: float
    theta: float
    d: int
    A_theta: float
    a: float
    b: float
    calibrated: bool
    sup_at_fifth: float

    @property
    def r_in(self) -> float:
        return math.sin(self.theta) / 10

    def psi(self, r):
        r = np.asarray(r, float)
        base = np.log(r) if self.d == 2 else r ** (2.0 - self.d)
        return self.a + self.b * base

    def __call__(self, r):
        return self.psi(r) ** (1.0 / (1.0 - self.A0))

    def derivatives(self, r):
        """``(Phi, Phi', Phi'')`` in closed form."""
        r = np.asarray(r, float)
        p = 1.0 / (1.0 - self.A0)
        if self.d == 2:
            s1, s2 = self.b / r, -self.b / r ** 2
        else:
            k = 2.0 - self.d
            s1, s2 = self.b * k * r ** (k - 1), self.b * k * (k - 1) * r ** (k - 2)
        ps = self.psi(r)
        f = ps ** p
        f1 = p * ps ** (p - 1) * s1
        f2 = p * (p - 1) * ps ** (p - 2) * s1 ** 2 + p * ps ** (p - 1) * s2
        return f, f1, f2


def _profile_coeffs(A0, theta, d, A_theta):
    q = 1.0 - A0
    r1 = math.sin(theta) / 10
    v1, v0 = A_theta ** q, (math.sin(theta) / 2) ** q
    base1 = math.log(r1) if d == 2 else r1 ** (2.0 - d)
    base0 = 0.0 if d == 2 else 1.0
    b = (v1 - v0) / (base1 - base0)
    a = v0 - b * base0
    return a, b


def solve_phi_profile(A0: float, theta: float, d: int = 2, grid: Grid | None = None,
                      target: float = 3.0) -> RadiusField:
    """Closed-form radial profile, with ``A_theta`` raised until ``Phi(1/5) >= target``.

    As ``A_theta -> inf`` the value at radius 1/5 increases to a finite limit;
    when that limit is below ``target`` the profile is returned with
    ``calibrated = False`` and ``A_theta`` at the first value reaching 99% of
    the limit.
    """
    if not A0 > 1:
        raise ValueError("A0 must exceed 1")
    if not (0 < theta < math.pi):
        raise ValueError("theta must lie in (0, pi)")
    q = 1.0 - A0
    r1 = math.sin(theta) / 10
    half = math.sin(theta) / 2
    # limit of Phi(1/5) as A_theta -> inf (psi(r1) -> 0)
    if d == 2:
        rho = math.log(r1 / 0.2) / math.log(r1)
    else:
        k = 2.0 - d
        rho = (r1 ** k - 0.2 ** k) / (r1 ** k - 1.0)
    sup = half * rho ** (1.0 / q)
    A_theta = max(1.0, 2 * half)
    calibrated = sup >= target
    goal = target if calibrated else 0.99 * sup
    for _ in range(400):
        a, b = _profile_coeffs(A0, theta, d, A_theta)
        prof = PhiProfile(A0, theta, d, A_theta, a, b, calibrated, sup)
        if float(prof(0.2)) >= goal:
            break
        A_theta *= 1.25
    else:
        raise RuntimeError("profile calibration did not terminate")
    if grid is None:
        grid = Grid.box(-1.0, 1.0, 64, d)
    rr = np.clip(np.linalg.norm(grid.coords(), axis=-1), prof.r_in, 1.0)
    vals = prof(rr)
    _, d1, _ = prof.derivatives(np.linspace(prof.r_in, 1.0, 2001))
    return RadiusField(grid, vals, float(np.max(np.abs(d1))), (0.0, 0.0), None,
                       {"profile": prof, "A_theta": A_theta, "calibrated": calibrated,
                        "value_at_fifth": float(prof(0.2)), "limit_at_fifth": sup})


def radial_identity_residual(prof: PhiProfile, r) -> NDArray:
    """``(Phi Delta Phi - A0 |Phi'|^2) / (A0 |Phi'|^2)`` from the closed-form radial Laplacian."""
    f, f1, f2 = prof.derivatives(r)
    lap = f2 + (prof.d - 1) / np.asarray(r, float) * f1
    return (f * lap - prof.A0 * f1 ** 2) / (prof.A0 * f1 ** 2)


# ---------------------------------------------------------------------------
# barrier

@dataclass
class BarrierBundle:
    v: GridField
    w1: GridField
    w2: GridField
    vbar: GridField
    params: dict
    ordering: DiagnosticsReport | None = None
    phi: RadiusField | None = None
    domain: NDArray | None = None

    def coefficients(self) -> tuple[float, float, float]:
        p = self.params
        return p["coef_v"], p["coef_w2"], p["coef_w1"]

    def identity_holds(self) -> bool:
        """Recombine the stored fields and compare bitwise with ``vbar``."""
        a, b, c = self.coefficients()
        again = combine(a, self.v.values, b, self.w2.values, c, self.w1.values)
        return bool(np.array_equal(again, self.vbar.values))

    def dump(self, path: str | Path, fmt: str = "binary") -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for name in ("v", "w1", "w2", "vbar"):
            write_field(path / f"{name}.field", getattr(self, name), fmt)
        (path / "params.json").write_text(json.dumps(self.params, sort_keys=True, indent=2))
        return path


def combine(a: float, v: NDArray, b: float, w2: NDArray, c: float, w1: NDArray) -> NDArray:
    return a * v - b * w2 + c * w1


def _signed_distance(u: GridField, band: float) -> NDArray:
    tol = 0.0
    pts, axes = front_crossings(u.values - tol, u.grid)
    grid = u.grid
    if len(pts) == 0:
        raise ValueError("strip empty")
    # crossing normals from the gradient of u (u increases inward)
    g = np.stack([u.with_values(gk, nonnegative=False).interp(pts) for gk in np.gradient(u.values, grid.spacing)], axis=-1)
    nrm = -g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-300)
    return distance_from_samples(grid, pts, nrm, u.values > 0, band)


def dahlberg_ratio(v: GridField, sigma_plus: NDArray, g: NDArray, r: float, ek: float,
                   w1: NDArray) -> float:
    """min of phi / w1 on the sphere of radius ``1 - eps^kappa``, with phi harmonic in the outer annulus.

    ``phi`` takes the data of ``w1`` on the strip bottom inside the annulus
    ``1 - 2 eps^kappa < |x| < 1`` and vanishes elsewhere on its boundary.
    """
    grid = v.grid
    x = grid.coords()
    rad = np.linalg.norm(x, axis=-1)
    ann = sigma_plus & (rad > 1 - 2 * ek)
    if not ann.any():
        return float("nan")
    bot = (g - 2 * r) - x[..., -1]
    inner = (1 - 2 * ek) - rad
    pieces = [BoundaryPiece(bot, lambda p: np.maximum(v.interp(p), 0.0), "bottom"),
              BoundaryPiece(inner, 0.0, "inner"), BoundaryPiece(rad - 1.0, 0.0, "sphere")]
    prob = DirichletProblem(grid, 0.0, pieces, mask=sigma_plus, fill=0.0)
    try:
        phi = solve_dirichlet(prob).field.values
    except SolverError:
        return float("nan")
    ring = ann & (np.abs(rad - (1 - ek)) <= grid.spacing) & (w1 > 1e-14)
    if not ring.any():
        return float("nan")
    return float(np.min(phi[ring] / w1[ring]))


def assemble_barrier(u: GridField, front: FrontGraph | None, params: BarrierParams,
                     g_fn=None, t: float | None = None, check_monotone: bool = True,
                     shift=None) -> BarrierBundle:
    """Build ``v``, ``w1``, ``w2`` and ``vbar`` on the strip and check ``vbar <= u(. - j eps e_d)``.

    ``shift`` maps the grid to the shifted comparison field; by default the
    bilinear interpolant of ``u`` is evaluated at ``x - j eps e_d``.
    """
    params.check()
    grid = u.grid
    h = grid.spacing
    d = grid.dim
    eps = params.eps
    if eps < 4 * h:
        raise ScaleError("scale unresolved: eps < 4h")
    ex = params.exponents()
    if check_monotone:
        from .regularity_diag import MonotoneQuery, check_eps_a_monotone
        from .field_core import Cone
        rep = check_eps_a_monotone(u, MonotoneQuery(Cone.down(params.theta, d), eps, eps ** ex["alpha"]))
        if not rep.passed:
            raise ValueError(f"precondition failed: u is not (eps, a)-monotone (witness {rep.witness_point})")
    eta = params.eta_value()
    phi = build_radius_phi_eta(eta, params, grid, front, g_fn, t)
    r = eps ** ex["gamma1"]
    ek = eps ** ex["kappa"]
    sigma = params.sigma()
    strip = strip_mask(grid, front, r, 0.0, g_fn, t)
    gval = _graph_values(grid, front, g_fn, t)
    x = grid.coords()
    rad = np.linalg.norm(x, axis=-1)
    # v on the strip and one layer of nodes around it (needed for boundary interpolation)
    need = ndimage.binary_dilation(strip, iterations=2) & (rad < 1.0)
    v = sup_convolve(u, phi.scaled(sigma), nodes=need)
    v_vals = np.where(need, v.values, 0.0)
    v = v.with_values(v_vals)
    # Omega_v through the signed distance of u: dist(x, Omega_u) < sigma phi(x)
    sd = _signed_distance(u, band=4 * eps + 2 * r)
    lvl_v = sd - sigma * phi.phi
    top = x[..., -1] - gval - 2 * r
    bot = gval - 2 * r - x[..., -1]
    sph = rad - 1.0
    pieces1 = [BoundaryPiece(lvl_v, 0.0, "front_v"), BoundaryPiece(top, 0.0, "top"),
               BoundaryPiece(bot, lambda p: np.maximum(v.interp(p), 0.0), "bottom"),
               BoundaryPiece(sph, 0.0, "sphere")]
    prob1 = DirichletProblem(grid, 0.0, pieces1, fill=0.0)
    dom = prob1.domain()
    if not dom.any():
        raise ValueError("strip empty")
    w1 = solve_dirichlet(prob1, nonnegative=True).field.values
    pieces2 = [BoundaryPiece(pc.level, 0.0, pc.name) for pc in pieces1]
    prob2 = DirichletProblem(grid, 1.0 + params.f_sup, pieces2, fill=0.0)
    w2 = solve_dirichlet(prob2, nonnegative=True).field.values
    w1 = np.where(dom, w1, 0.0)
    w2 = np.where(dom, w2, 0.0)
    measured_cstar = dahlberg_ratio(v, dom, gval, r, ek, w1)
    c_star = params.c_star
    coef_v = 1.0 + eps ** (ex["alpha"] + 1)
    coef_w2 = eps ** ex["alpha2"]
    coef_w1 = c_star * eps ** ex["alpha1"]
    vv = np.where(dom, v.values, 0.0)
    vbar = combine(coef_v, vv, coef_w2, w2, coef_w1, w1)
    # comparison field
    if shift is None:
        shifted = x.copy()
        shifted[..., -1] -= params.j * eps
        ubar = u.interp(shifted.reshape(-1, d)).reshape(grid.shape)
    else:
        ubar = np.asarray(shift(x), float)
    region = strip & (rad < 1 - ek)
    diff = vbar - ubar
    on_support = region & dom
    min_gap = float(np.min(-diff[on_support])) if on_support.any() else float("nan")
    viol = region & (diff > 1e-13 * max(1.0, float(np.max(np.abs(ubar)))))
    nreg = int(region.sum())
    if nreg:
        k = np.unravel_index(np.argmax(np.where(region, diff, -np.inf)), grid.shape)
    else:
        k = (0,) * d
    ordering = DiagnosticsReport(
        "barrier_ordering", bool(nreg > 0 and not viol.any()),
        {"strip_nodes": nreg, "violations": int(viol.sum()),
         "fraction_ordered": float(1 - viol.sum() / max(nreg, 1)), "max_excess": float(diff[k]),
         "min_gap_on_support": min_gap, "support_nodes": int(on_support.sum()),
         "measured_c_star": measured_cstar},
        x[k], {"vbar": float(vbar[k]), "ubar": float(ubar[k])},
        {"eps": eps, "c_star": c_star, "eta": eta, "sigma": sigma, "j": params.j})
    pdict = {**{k2: v2 for k2, v2 in asdict(params).items()}, **{k2: v2 for k2, v2 in ex.items()},
             "eta": eta, "sigma": sigma, "r": r, "eps_kappa": ek, "coef_v": coef_v, "coef_w2": coef_w2,
             "coef_w1": coef_w1, "measured_c_star": measured_cstar, "A1_used": params.A1_value(d)}
    return BarrierBundle(u.with_values(vv), u.with_values(w1), u.with_values(w2), u.with_values(vbar), pdict, ordering, phi, dom)
