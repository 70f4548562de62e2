"""Uniform grids, sampled fields, cones and free-boundary extraction.

This is the geometry substrate shared by every other module.  Fields are
node-centred arrays indexed ``values[i_1, ..., i_d]`` with node ``i`` located
at ``origin + i * h``; the last axis is the vertical coordinate ``x_d``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist


class GeometryError(ValueError):
    """Raised for ill-posed geometric queries (empty fronts, zero vectors...)."""


@dataclass(frozen=True)
class Grid:
    origin: tuple[float, ...]
    spacing: float
    extents: tuple[int, ...]
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        origin = tuple(float(o) for o in self.origin)
        extents = tuple(int(n) for n in self.extents)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extents", extents)
        if not self.periodic:
            object.__setattr__(self, "periodic", (False,) * len(extents))
        else:
            object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if len(origin) != len(extents) or len(self.periodic) != len(extents):
            raise ValueError("origin, extents and periodic flags must share a dimension")
        if len(extents) not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {len(extents)}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if min(extents) < 4:
            raise ValueError("every axis needs at least 4 nodes")

    @classmethod
    def box(cls, lo: float | Sequence[float], hi: float | Sequence[float], cells: int,
            dim: int = 2, periodic: Sequence[bool] = ()) -> "Grid":
        """Grid over ``[lo, hi]`` with ``cells`` cells along the first axis.

        Other axes reuse the same spacing; their cell count follows from the
        box size (which must be a multiple of the spacing).
        """
        lo_v = np.broadcast_to(np.asarray(lo, float), (dim,))
        hi_v = np.broadcast_to(np.asarray(hi, float), (dim,))
        h = (hi_v[0] - lo_v[0]) / cells
        n = np.rint((hi_v - lo_v) / h).astype(int)
        if np.any(np.abs(n * h - (hi_v - lo_v)) > 1e-9 * max(1.0, float(np.max(np.abs(hi_v))))):
            raise ValueError("box sides must be integer multiples of the spacing")
        return cls(tuple(lo_v), float(h), tuple(int(k) + 1 for k in n), tuple(periodic))

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.extents

    @property
    def upper(self) -> NDArray:
        return np.asarray(self.origin) + self.spacing * (np.asarray(self.extents) - 1)

    def axis(self, k: int) -> NDArray:
        return self.origin[k] + self.spacing * np.arange(self.extents[k])

    def coords(self) -> NDArray:
        """Node coordinates with shape ``extents + (dim,)``."""
        mesh = np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij")
        return np.stack(mesh, axis=-1)

    def node_position(self, idx) -> NDArray:
        idx = np.asarray(idx, float)
        return np.asarray(self.origin) + self.spacing * idx

    def fractional_index(self, points) -> NDArray:
        pts = np.asarray(points, float)
        return (pts - np.asarray(self.origin)) / self.spacing

    def contains(self, points, margin: float = 0.0) -> NDArray:
        pts = np.atleast_2d(np.asarray(points, float))
        lo = np.asarray(self.origin) + margin
        hi = self.upper - margin
        return np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=-1)


@dataclass
class GridField:
    grid: Grid
    values: NDArray
    time: float = 0.0
    nonnegative: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.nonnegative and np.any(self.values < 0):
            raise ValueError("field flagged non-negative has negative values")

    def with_values(self, values, time: float | None = None, nonnegative: bool | None = None) -> "GridField":
        keep = self.nonnegative if nonnegative is None else nonnegative
        return GridField(self.grid, values, self.time if time is None else time, keep)

    def interp(self, points, order: int = 1) -> NDArray:
        """Multilinear (``order=1``) interpolation at arbitrary points."""
        pts = np.asarray(points, float)
        flat = pts.reshape(-1, self.grid.dim)
        idx = self.grid.fractional_index(flat).T
        out = ndimage.map_coordinates(self.values, idx, order=order, mode="nearest")
        return out.reshape(pts.shape[:-1])

    def gradient(self) -> NDArray:
        """Centred differences (one-sided on the box edge); shape ``extents + (dim,)``."""
        g = np.gradient(self.values, self.grid.spacing, edge_order=2)
        if self.grid.dim == 1:
            g = [g]
        return np.stack(g, axis=-1)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class Cone:
    mu: tuple[float, ...]
    theta: float

    def __post_init__(self):
        mu = np.asarray(self.mu, float)
        if abs(np.linalg.norm(mu) - 1.0) > 1e-12:
            raise ValueError("cone axis must be a unit vector")
        # theta = 0 is the ray along mu (monotonicity in one direction)
        if not (0.0 <= self.theta <= np.pi / 2 + 1e-15):
            raise ValueError("cone half-angle must lie in [0, pi/2]")
        object.__setattr__(self, "mu", tuple(float(m) for m in mu))

    @classmethod
    def down(cls, theta: float, dim: int = 2) -> "Cone":
        mu = np.zeros(dim)
        mu[-1] = -1.0
        return cls(tuple(mu), theta)

    def contains(self, p) -> NDArray | bool:
        return cone_contains(self, p)

    def generators(self) -> NDArray:
        """Unit directions on the cone boundary (2 in d=2, 8 in d=3)."""
        mu = np.asarray(self.mu)
        d = mu.size
        basis = _orthonormal_complement(mu)
        if d == 2:
            angles = [0.0, np.pi]
        else:
            angles = np.arange(8) * np.pi / 4
        out = []
        for a in angles:
            if d == 2:
                tdir = basis[0] * np.cos(a)
            else:
                tdir = basis[0] * np.cos(a) + basis[1] * np.sin(a)
            out.append(np.cos(self.theta) * mu + np.sin(self.theta) * tdir)
        return np.array(out)

    def sample_interior(self, count: int, seed: int = 0) -> NDArray:
        """Seeded directions strictly inside the cone."""
        rng = np.random.default_rng(seed)
        mu = np.asarray(self.mu)
        basis = _orthonormal_complement(mu)
        polar = self.theta * np.sqrt(rng.uniform(0.05, 0.95, count))
        if mu.size == 2:
            az = rng.choice([-1.0, 1.0], count)
            tdir = az[:, None] * basis[0][None, :]
        else:
            phi = rng.uniform(0, 2 * np.pi, count)
            tdir = np.cos(phi)[:, None] * basis[0] + np.sin(phi)[:, None] * basis[1]
        return np.cos(polar)[:, None] * mu[None, :] + np.sin(polar)[:, None] * tdir


def _orthonormal_complement(mu: NDArray) -> NDArray:
    d = mu.size
    q, _ = np.linalg.qr(np.column_stack([mu, np.eye(d)]))
    comp = q[:, 1:d].T
    return comp


def cone_contains(cone: Cone, p) -> NDArray | bool:
    """True iff the angle between ``p`` and the cone axis is at most theta."""
    pts = np.asarray(p, float)
    norms = np.linalg.norm(pts, axis=-1)
    if np.any(norms == 0):
        raise GeometryError("undefined angle for the zero vector")
    cosang = np.clip(pts @ np.asarray(cone.mu) / norms, -1.0, 1.0)
    # compare angles with a tiny slack so exact boundary directions count as inside
    inside = np.arccos(cosang) <= cone.theta + 1e-12
    return bool(inside) if inside.ndim == 0 else inside


@dataclass
class PositiveSet:
    grid: Grid
    mask: NDArray
    boundary_nodes: NDArray
    tol_pos: float

    @property
    def boundary_positions(self) -> NDArray:
        return self.grid.node_position(self.boundary_nodes)

    @property
    def empty(self) -> bool:
        return not bool(self.mask.any())


def boundary_of_mask(mask: NDArray, periodic: Sequence[bool] = ()) -> NDArray:
    """Mask nodes with at least one unmasked axis neighbour.

    The box exterior is not a free boundary, so missing neighbours past a
    non-periodic wall are ignored.
    """
    mask = np.asarray(mask, bool)
    periodic = tuple(periodic) or (False,) * mask.ndim
    outside_nb = np.zeros_like(mask)
    for ax in range(mask.ndim):
        for shift in (1, -1):
            nb = np.roll(mask, shift, axis=ax)
            if not periodic[ax]:
                sl = [slice(None)] * mask.ndim
                sl[ax] = 0 if shift == 1 else -1
                nb[tuple(sl)] = True
            outside_nb |= ~nb
    return np.argwhere(mask & outside_nb)


def default_tol_pos(field: GridField) -> float:
    return 1e-12 * max(float(np.max(field.values)), 0.0)


def extract_positive_set(field: GridField, tol_pos: float | None = None) -> PositiveSet:
    if tol_pos is None:
        tol_pos = default_tol_pos(field)
    if tol_pos < 0:
        raise ValueError("tol_pos must be non-negative")
    mask = field.values > tol_pos
    return PositiveSet(field.grid, mask, boundary_of_mask(mask, field.grid.periodic), float(tol_pos))


def positive_set_from_level(level: GridField) -> PositiveSet:
    """Positive set of a level function that is negative inside."""
    mask = level.values < 0
    return PositiveSet(level.grid, mask, boundary_of_mask(mask, level.grid.periodic), 0.0)


def distance_to_front(pset: PositiveSet, x) -> NDArray | float:
    """Euclidean distance from ``x`` to the nearest boundary node."""
    if pset.boundary_nodes.size == 0:
        raise GeometryError("no front")
    tree = cKDTree(pset.boundary_positions)
    d, _ = tree.query(np.asarray(x, float))
    return float(d) if np.ndim(d) == 0 else d


def front_crossings(indicator: NDArray, grid: Grid) -> tuple[NDArray, NDArray]:
    """Sub-grid front points where ``indicator`` changes from positive to non-positive.

    Returns ``(points, axes)``: each crossing on a grid edge is located by
    linear interpolation of the indicator, ``axes`` records the edge direction.
    """
    q = np.asarray(indicator, float)
    pts, axes = [], []
    coords_lo = np.asarray(grid.origin)
    for ax in range(grid.dim):
        n = q.shape[ax]
        a = np.take(q, np.arange(n - 1), axis=ax)
        b = np.take(q, np.arange(1, n), axis=ax)
        for inside, outside, sign in ((a, b, 1.0), (b, a, -1.0)):
            hit = (inside > 0) & (outside <= 0)
            if not hit.any():
                continue
            idx = np.argwhere(hit).astype(float)
            qi = inside[hit]
            qo = outside[hit]
            s = qi / (qi - qo)
            base = idx.copy()
            if sign < 0:
                base[:, ax] += 1.0
            pos = coords_lo + grid.spacing * base
            pos[:, ax] += sign * s * grid.spacing
            pts.append(pos)
            axes.append(np.full(len(pos), ax))
    if not pts:
        return np.empty((0, grid.dim)), np.empty(0, int)
    return np.concatenate(pts), np.concatenate(axes)


def field_front_points(field: GridField, tol_pos: float | None = None,
                       level: GridField | None = None) -> NDArray:
    """Front points of a field (or of its level function when one is supplied)."""
    if level is not None:
        indicator = -level.values
    else:
        if tol_pos is None:
            tol_pos = default_tol_pos(field)
        indicator = field.values - tol_pos
    return front_crossings(indicator, field.grid)[0]


@dataclass
class FrontGraph:
    axis: tuple[float, ...]
    xprime: NDArray
    times: NDArray
    samples: NDArray
    lip_space: float
    lip_time: float
    graph_ok: bool
    grid: Grid | None = None

    def at(self, k: int = -1) -> NDArray:
        return self.samples[k]

    def evaluate(self, xp, t: float | None = None) -> NDArray:
        """Linear interpolation of g in x' (d=2) and in time."""
        xp = np.atleast_1d(np.asarray(xp, float))
        rows = self.samples
        if t is None or len(self.times) == 1:
            row = rows[-1] if t is None else rows[0]
        else:
            k = np.searchsorted(self.times, t) - 1
            k = int(np.clip(k, 0, len(self.times) - 2))
            t0, t1 = self.times[k], self.times[k + 1]
            lam = np.clip((t - t0) / (t1 - t0), 0.0, 1.0)
            row = (1 - lam) * rows[k] + lam * rows[k + 1]
        if self.xprime.shape[1] != 1:
            raise NotImplementedError("graph evaluation implemented for d = 2")
        return np.interp(xp, self.xprime[:, 0], row)


def _column_graph(indicator: NDArray, grid: Grid, up: bool, clipped: bool = False) -> tuple[NDArray, bool]:
    """Graph height per column from a signed indicator (positive inside).

    For ``clipped`` fields (identically zero outside) interpolating towards the
    zero snaps the crossing onto a node, so the zero is extrapolated from the
    two innermost positive nodes instead.
    """
    q = np.moveaxis(indicator, -1, 0)  # vertical axis first
    n = q.shape[0]
    cols = q.reshape(n, -1)
    z = grid.axis(grid.dim - 1)
    h = grid.spacing
    out = np.full(cols.shape[1], np.nan)
    ok = True
    pos = cols > 0
    runs = np.sum(pos[1:] & ~pos[:-1], axis=0) + pos[0]
    if np.any(runs > 1):
        ok = False
    for j in np.nonzero(pos.any(axis=0))[0]:
        col = cols[:, j]
        idx = np.nonzero(col > 0)[0]
        if up:
            k = idx[-1]
            if k == n - 1:
                continue
            s = _crossing(col, k, k + 1, k - 1, clipped)
            out[j] = z[k] + s * h
        else:
            k = idx[0]
            if k == 0:
                continue
            s = _crossing(col, k, k - 1, k + 1, clipped)
            out[j] = z[k] - s * h
    return out, ok


def _crossing(col: NDArray, k: int, out: int, deep: int, clipped: bool) -> float:
    """Fraction of a cell from node ``k`` to the zero of the indicator."""
    if clipped and 0 <= deep < len(col) and col[deep] > col[k]:
        return min(col[k] / (col[deep] - col[k]), 1.0)
    return col[k] / (col[k] - col[out])


def _lip_space(xprime: NDArray, g: NDArray) -> float:
    good = np.isfinite(g)
    if good.sum() < 2:
        return 0.0
    dx = pdist(xprime[good])
    dg = pdist(g[good][:, None], "cityblock")
    return float(np.max(dg / dx))


def _lip_time(times: NDArray, samples: NDArray) -> float:
    if len(times) < 2:
        return 0.0
    best = 0.0
    for k in range(len(times)):
        for l in range(k + 1, len(times)):
            diff = np.abs(samples[l] - samples[k])
            diff = diff[np.isfinite(diff)]
            if diff.size and times[l] > times[k]:
                best = max(best, float(diff.max()) / (times[l] - times[k]))
    return best


def graph_from_samples(axis, xprime, times, samples, grid=None, graph_ok=True) -> FrontGraph:
    times = np.asarray(times, float)
    samples = np.atleast_2d(np.asarray(samples, float))
    lip_s = max((_lip_space(xprime, row) for row in samples), default=0.0)
    return FrontGraph(tuple(axis), np.asarray(xprime), times, samples, lip_s,
                      _lip_time(times, samples), graph_ok, grid)


def extract_front_graph(field: GridField | PositiveSet | Sequence[GridField], axis=None,
                        tol_pos: float | None = None, level: GridField | None = None) -> FrontGraph:
    """Column-wise front graph ``x_d = g(x')``.

    ``axis`` is the graph direction: ``-e_d`` means the positive set lies below
    the graph (the default), ``+e_d`` above.  A sequence of fields produces a
    multi-time graph whose time Lipschitz quotient is also recorded.
    """
    fields = list(field) if isinstance(field, (list, tuple)) else [field]
    grid = fields[0].grid
    d = grid.dim
    if axis is None:
        axis = tuple([0.0] * (d - 1) + [-1.0])
    axis = np.asarray(axis, float)
    if not (np.allclose(np.abs(axis[-1]), 1.0) and np.allclose(axis[:-1], 0.0)):
        raise ValueError("only graphs over the x_d axis are supported")
    up = axis[-1] < 0
    rows, ok_all, times = [], True, []
    for fl in fields:
        if isinstance(fl, PositiveSet):
            ind = np.where(fl.mask, 1.0, -1.0)
            t = 0.0
            clipped = False
        elif level is not None and len(fields) == 1:
            ind = -level.values
            t = fl.time
            clipped = False
        else:
            tol = default_tol_pos(fl) if tol_pos is None else tol_pos
            ind = fl.values - tol
            t = fl.time
            clipped = bool(np.min(fl.values) >= 0.0)
        g, ok = _column_graph(ind, grid, up, clipped)
        rows.append(g)
        times.append(t)
        ok_all &= ok
    samples = np.array(rows)
    if not np.isfinite(samples).any():
        raise GeometryError("front outside domain")
    xprime = np.stack(np.meshgrid(*[grid.axis(k) for k in range(d - 1)], indexing="ij"),
                      axis=-1).reshape(-1, d - 1)
    return graph_from_samples(tuple(axis), xprime, times, samples, grid, ok_all)


# ---------------------------------------------------------------------------
# field dumps

_MAGIC = "# hsdrift field dump v1"


def write_field(path: str | Path, fld: GridField, fmt: str = "ascii") -> Path:
    """Write a field: text header, then an ASCII or little-endian float64 payload."""
    if fmt not in ("ascii", "binary"):
        raise ValueError("format must be 'ascii' or 'binary'")
    g = fld.grid
    header = [
        _MAGIC,
        f"dim {g.dim}",
        "origin " + " ".join(repr(float(o)) for o in g.origin),
        f"spacing {float(g.spacing)!r}",
        "extents " + " ".join(str(n) for n in g.extents),
        "periodic " + " ".join(str(int(p)) for p in g.periodic),
        f"time {float(fld.time)!r}",
        f"nonnegative {int(fld.nonnegative)}",
        f"encoding {fmt}",
        "end",
    ]
    path = Path(path)
    flat = np.ascontiguousarray(fld.values, dtype="<f8").ravel(order="C")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if fmt == "ascii":
            fh.write(("\n".join(repr(float(v)) for v in flat) + "\n").encode("ascii"))
        else:
            fh.write(flat.tobytes())
    return path


def read_field(path: str | Path) -> GridField:
    raw = Path(path).read_bytes()
    stream = io.BytesIO(raw)
    meta: dict[str, str] = {}
    first = stream.readline().decode("ascii").strip()
    if first != _MAGIC:
        raise ValueError(f"{path}: not a field dump")
    while True:
        line = stream.readline().decode("ascii").strip()
        if line == "end":
            break
        if not line:
            raise ValueError(f"{path}: truncated header")
        key, _, rest = line.partition(" ")
        meta[key] = rest
    extents = tuple(int(v) for v in meta["extents"].split())
    grid = Grid(tuple(float(v) for v in meta["origin"].split()), float(meta["spacing"]),
                extents, tuple(bool(int(v)) for v in meta.get("periodic", "").split()))
    count = int(np.prod(extents))
    payload = stream.read()
    if meta["encoding"] == "binary":
        vals = np.frombuffer(payload, dtype="<f8", count=count)
    else:
        vals = np.array([float(v) for v in payload.decode("ascii").split()])
    if vals.size != count:
        raise ValueError(f"{path}: payload has {vals.size} values, expected {count}")
    return GridField(grid, vals.reshape(extents).astype(float), float(meta["time"]),
                     bool(int(meta.get("nonnegative", "0"))))


def ramp_field(grid: Grid, normal=None, time: float = 0.0) -> GridField:
    """(-x.nu)_+ with nu the outward normal (default +e_d): the flat-front fixture."""
    d = grid.dim
    if normal is None:
        normal = np.eye(d)[-1]
    vals = np.maximum(-(grid.coords() @ np.asarray(normal, float)), 0.0)
    return GridField(grid, vals, time, nonnegative=True)


def iter_neighbours(dim: int) -> Iterable[tuple[int, int]]:
    for ax in range(dim):
        for sgn in (-1, 1):
            yield ax, sgn
