"""Experiment specs, scenario presets, the check registry and plot-data extraction.

An experiment is one YAML file::

    name: radial-256
    scenario: radial
    seed: 0
    grid: 256
    flow: {t1: 0.05, dt: 2.5e-4}
    diagnostics:
      - {check: radial_oracle, severity: assert, caps: {rel_tol: 0.02}}
    output_dir: out/radial

Every numeric threshold used by a check is one of its ``caps``; defaults are
listed in :data:`CHECKS` and written back into each report's ``config``.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import __version__
from .reports import SCHEMA_VERSION, DiagnosticsReport

SCENARIOS = ("radial", "flatfront", "cone", "cusp_e1", "gallery_e2", "gallery_e3", "custom")
SEVERITIES = ("assert", "report")


class SpecError(ValueError):
    """Invalid experiment specification (reported before any compute)."""


# ---------------------------------------------------------------------------
# flow presets

FLOW_DEFAULTS = {
    "radial": {"box": [-0.5, 0.5], "r0": 0.1, "R0": 0.2, "pressure": 1.0, "t1": 0.05, "dt": 2.5e-4,
               "scheme": "levelset", "record_every": 20, "obstacle_dt": 2.5e-3, "perturb": 0.0,
               "drift": {"type": "zero"}},
    "flatfront": {"half_width": 0.25, "depth": 0.75, "speed": 1.0, "driver_depth": 0.5, "t1": 0.25,
                  "dt": 2e-3, "scheme": "levelset", "record_every": 25, "drift": {"type": "zero"}},
    "cone": {"theta": math.pi / 3, "L": 1.0, "t1": 0.2, "steps": 4, "scheme": "obstacle"},
    "cusp_e1": {"gamma0": 1.5, "gamma1": 3.0, "C0": None, "record_every": 50},
    "gallery_e2": {"eps": 0.0625, "alpha": 2.0, "kappa": 0.9, "half_width": 0.25, "theta": 0.1},
    "gallery_e3": {"delta": 0.00390625, "n": 0, "half_width": 0.25, "theta": 0.1},
    "custom": {"box": [-0.5, 0.5], "initial": {"type": "disk", "center": [0.0, 0.0], "radius": 0.2},
               "fixed": {"type": "disk", "center": [0.0, 0.0], "radius": 0.1, "value": 1.0},
               "t1": 0.02, "dt": 5e-4, "scheme": "levelset", "record_every": 10, "f": 0.0,
               "drift": {"type": "zero"}},
}

GRID_DEFAULTS = {"radial": 256, "flatfront": 64, "cone": 256, "cusp_e1": 64, "gallery_e2": 1024,
                 "gallery_e3": 1024, "custom": 128}


@dataclass
class ExperimentSpec:
    name: str
    scenario: str
    flow: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    output_dir: str = "out"
    seed: int = 0
    grid: int | None = None
    dim: int = 2
    format: str = "ascii"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentSpec":
        if not isinstance(raw, dict):
            raise SpecError("experiment file must contain a mapping")
        known = {"name", "scenario", "flow", "diagnostics", "output_dir", "seed", "grid", "dim", "format"}
        extra = set(raw) - known
        if extra:
            raise SpecError(f"unknown top-level keys: {sorted(extra)}")
        for key in ("name", "scenario"):
            if key not in raw:
                raise SpecError(f"missing required key '{key}'")
        spec = cls(**{k: copy.deepcopy(v) for k, v in raw.items()})
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise SpecError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(raw)

    def cells(self) -> int:
        return int(self.grid if self.grid is not None else GRID_DEFAULTS[self.scenario])

    def flow_params(self) -> dict:
        out = copy.deepcopy(FLOW_DEFAULTS[self.scenario])
        out.update(self.flow or {})
        return out

    def checks(self) -> list[dict]:
        out = []
        for entry in self.diagnostics:
            if isinstance(entry, str):
                entry = {"check": entry}
            name = entry["check"]
            caps = dict(CHECKS[name].caps)
            caps.update(entry.get("caps") or {})
            out.append({"check": name, "severity": entry.get("severity", "assert"), "caps": caps})
        return out

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise SpecError(f"unknown scenario '{self.scenario}' (choose from {', '.join(SCENARIOS)})")
        if self.dim != 2:
            raise SpecError("simulations and examples run in d = 2 (use cone-table for d = 3)")
        if self.format not in ("ascii", "binary"):
            raise SpecError("format must be 'ascii' or 'binary'")
        if not isinstance(self.flow or {}, dict):
            raise SpecError("flow must be a mapping")
        unknown = set(self.flow or {}) - set(FLOW_DEFAULTS[self.scenario])
        if unknown:
            raise SpecError(f"unknown flow keys for scenario '{self.scenario}': {sorted(unknown)}")
        if self.cells() < 8:
            raise SpecError("grid must have at least 8 cells")
        if not isinstance(self.diagnostics, list):
            raise SpecError("diagnostics must be a list")
        for entry in self.diagnostics:
            name = entry if isinstance(entry, str) else entry.get("check") if isinstance(entry, dict) else None
            if name not in CHECKS:
                raise SpecError(f"unknown check '{name}'")
            chk = CHECKS[name]
            if chk.scenarios and self.scenario not in chk.scenarios:
                raise SpecError(f"check '{name}' is not available for scenario '{self.scenario}'")
            if isinstance(entry, dict):
                sev = entry.get("severity", "assert")
                if sev not in SEVERITIES:
                    raise SpecError(f"severity must be one of {SEVERITIES}")
                bad = set(entry.get("caps") or {}) - set(chk.caps)
                if bad:
                    raise SpecError(f"unknown caps for '{name}': {sorted(bad)}")
        self._check_scales()

    def _check_scales(self) -> None:
        p = self.flow_params()
        n = self.cells()
        if self.scenario in ("gallery_e2", "gallery_e3"):
            h = 2 * p["half_width"] / n
            if self.scenario == "gallery_e3":
                delta, eps = p["delta"], math.sqrt(p["delta"])
            else:
                delta = p["eps"] ** ((p["alpha"] + p["kappa"] + 1) / 2)
                eps = p["eps"]
            if delta < 8 * h:
                raise SpecError(f"grid too coarse: delta = {delta:.4g} < 8h = {8 * h:.4g}")
            if eps < 4 * h:
                raise SpecError(f"grid too coarse: eps = {eps:.4g} < 4h")
        for c in self.checks():
            caps = c["caps"]
            if c["check"] == "barrier_ordering" and caps["eps"] < 4 * 2 * caps["half_length"] / caps["cells"]:
                raise SpecError("barrier eps below 4h")

    def to_dict(self) -> dict:
        return {"name": self.name, "scenario": self.scenario, "flow": self.flow_params(),
                "diagnostics": self.checks(), "output_dir": self.output_dir, "seed": int(self.seed),
                "grid": self.cells(), "dim": self.dim, "format": self.format}

    def spec_hash(self) -> str:
        payload = dict(self.to_dict())
        payload.pop("output_dir")
        payload["version"] = __version__
        text = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class RunManifest:
    name: str
    spec_hash: str
    version: str
    reports: dict
    outcomes: dict
    wall_time: float
    complete: bool
    archive: str | None = None

    @property
    def passed(self) -> bool:
        return all(o["pass"] or o["severity"] != "assert" for o in self.outcomes.values())

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "name": self.name, "spec_hash": self.spec_hash,
                "version": self.version, "reports": self.reports, "outcomes": self.outcomes,
                "wall_time": self.wall_time, "complete": self.complete, "archive": self.archive}

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        raw = json.loads(Path(path).read_text())
        raw.pop("schema_version", None)
        return cls(**raw)


# ---------------------------------------------------------------------------
# scenario construction

def _drift_from(cfg: dict):
    from .streamline import constant_drift, linear_drift, rotation_drift, zero_drift
    kind = (cfg or {}).get("type", "zero")
    if kind == "zero":
        return zero_drift(2)
    if kind == "constant":
        return constant_drift(cfg["value"])
    if kind == "rotation":
        return rotation_drift(cfg.get("lip", 0.5), cfg.get("center", (0.0, 0.0)))
    if kind == "linear":
        return linear_drift(cfg["matrix"])
    raise SpecError(f"unknown drift type '{kind}'")


def _perturbed_disk(center, radius: float, amp: float, seed: int) -> Callable:
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=4) * amp if amp > 0 else np.zeros(4)
    c = np.asarray(center, float)

    def init(x):
        y = x - c
        r = np.linalg.norm(y, axis=-1)
        th = np.arctan2(y[..., 1], y[..., 0])
        pert = (coef[0] * np.cos(2 * th) + coef[1] * np.sin(3 * th) + coef[2] * np.cos(4 * th)
                + coef[3] * np.sin(5 * th))
        return r - radius * (1 + pert)
    return init


def radial_flow(p: dict, cells: int, seed: int = 0, scheme_dt: float | None = None):
    from .evolution import FixedBoundary, FlowSpec
    from .field_core import Grid
    lo, hi = p["box"]
    grid = Grid.box((lo, lo), (hi, hi), cells, 2)
    fixed = FixedBoundary(lambda x: p["r0"] - np.linalg.norm(x, axis=-1), float(p["pressure"]), "inner_circle")
    init = _perturbed_disk((0.0, 0.0), p["R0"], float(p.get("perturb", 0.0)), seed)
    return FlowSpec(grid, init, 0.0, _drift_from(p.get("drift")), fixed, 0.0, p["t1"],
                    scheme_dt if scheme_dt is not None else p["dt"], name="radial",
                    description={"r0": p["r0"], "R0": p["R0"], "pressure": p["pressure"]})


def flatfront_flow(p: dict, cells: int):
    from .evolution import FixedBoundary, FlowSpec
    from .field_core import Grid
    w, dep, v, a = p["half_width"], p["depth"], p["speed"], p["driver_depth"]
    grid = Grid.box((-w, -dep), (w, dep), cells, 2, periodic=(True, False))
    fixed = FixedBoundary(lambda x: -a - x[..., 1], lambda x, t: v * (v * t + a) * np.ones(x.shape[:-1]),
                          "bottom")
    return FlowSpec(grid, lambda x: x[..., 1], 0.0, _drift_from(p.get("drift")), fixed, 0.0, p["t1"], p["dt"],
                    name="flatfront", description={"speed": v})


def custom_flow(p: dict, cells: int, seed: int = 0):
    from .evolution import FixedBoundary, FlowSpec
    from .field_core import Grid
    lo, hi = p["box"]
    grid = Grid.box((lo, lo), (hi, hi), cells, 2)
    ini = p["initial"]
    if ini["type"] == "disk":
        init = _perturbed_disk(ini.get("center", (0, 0)), ini["radius"], float(ini.get("perturb", 0.0)), seed)
    elif ini["type"] == "halfplane":
        nu = np.asarray(ini.get("normal", (0.0, 1.0)), float)
        off = float(ini.get("offset", 0.0))
        init = lambda x: x @ nu - off  # noqa: E731
    else:
        raise SpecError(f"unknown initial type '{ini['type']}'")
    fx = p.get("fixed")
    fixed = None
    if fx:
        c = np.asarray(fx.get("center", (0.0, 0.0)), float)
        fixed = FixedBoundary(lambda x: fx["radius"] - np.linalg.norm(x - c, axis=-1), float(fx.get("value", 1.0)))
    return FlowSpec(grid, init, float(p.get("f", 0.0)), _drift_from(p.get("drift")), fixed, 0.0, p["t1"], p["dt"],
                    name="custom")


class Context:
    """Lazily built scenario state shared by the checks of one experiment."""

    def __init__(self, exp: ExperimentSpec):
        self.exp = exp
        self.p = exp.flow_params()
        self.cells = exp.cells()
        self._run = None
        self.cache: dict = {}

    def flow(self):
        sc = self.exp.scenario
        if sc == "radial":
            return radial_flow(self.p, self.cells, self.exp.seed)
        if sc == "flatfront":
            return flatfront_flow(self.p, self.cells)
        if sc == "custom":
            return custom_flow(self.p, self.cells, self.exp.seed)
        if sc == "cusp_e1":
            from .examples_gallery import cusp_flow_spec
            spec = self.cusp_spec()
            return cusp_flow_spec(spec, self.cusp_C0(), cells=self.cells)
        if sc == "cone":
            from .evolution import cone_window_spec
            return cone_window_spec(self.p["theta"], self.p["L"], self.cells, self.p["t1"], self.p["steps"])
        return None

    def cusp_spec(self):
        from .examples_gallery import CuspSpec
        return CuspSpec(C0=self.p["C0"], gamma0=self.p["gamma0"], gamma1=self.p["gamma1"])

    def cusp_C0(self) -> float:
        from .examples_gallery import cusp_phase1_check
        if self.p["C0"] is not None:
            return float(self.p["C0"])
        return 1.25 * cusp_phase1_check(self.cusp_spec(), C0=0.0).measured["C0_threshold"]

    @property
    def has_run(self) -> bool:
        return self.exp.scenario in ("radial", "flatfront", "custom", "cusp_e1", "cone")

    @property
    def run(self):
        if self._run is None:
            from .evolution import simulate
            spec = self.flow()
            if spec is None:
                raise SpecError(f"scenario '{self.exp.scenario}' has no simulation")
            scheme = self.p.get("scheme", "levelset")
            every = self.p.get("record_every", self.p.get("steps", 1))
            self._run = simulate(spec, scheme, record_every=every)
        return self._run


# ---------------------------------------------------------------------------
# checks

@dataclass
class Check:
    fn: Callable[[Context, dict], DiagnosticsReport]
    caps: dict
    scenarios: tuple = ()
    doc: str = ""


def _with_caps(rep: DiagnosticsReport, caps: dict) -> DiagnosticsReport:
    rep.config = dict(rep.config)
    rep.config["caps"] = dict(caps)
    return rep


def _check_radial_oracle(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .evolution import front_radius, radial_oracle
    run = ctx.run
    p = ctx.p
    fr = run.frames[-1]
    R = front_radius(fr, exclude_below=caps["exclude_factor"] * p["r0"])
    Ro = float(radial_oracle(p["r0"], p["R0"], [fr.time], p["pressure"])[0])
    rel = abs(R - Ro) / Ro
    times = [f.time for f in run.frames]
    radii = [front_radius(f, exclude_below=caps["exclude_factor"] * p["r0"]) for f in run.frames]
    return DiagnosticsReport("radial_oracle", rel <= caps["rel_tol"],
                             {"radius": R, "oracle": Ro, "relative_error": rel, "times": times, "radii": radii,
                              "oracle_radii": radial_oracle(p["r0"], p["R0"], times, p["pressure"]).tolist()},
                             None, {}, {}, run.run_id, len(run.frames) - 1)


def _check_scheme_agreement(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .evolution import front_radius, simulate
    run = ctx.run
    other = "obstacle" if run.scheme == "levelset" else "levelset"
    dt = ctx.p["obstacle_dt"] if other == "obstacle" else ctx.p["dt"]
    spec = radial_flow(ctx.p, ctx.cells, ctx.exp.seed, scheme_dt=dt)
    alt = simulate(spec, other, record_every=10 ** 9)
    cut = caps["exclude_factor"] * ctx.p["r0"]
    a = front_radius(run.frames[-1], exclude_below=cut)
    b = front_radius(alt.frames[-1], exclude_below=cut)
    rel = abs(a - b) / max(a, b)
    return DiagnosticsReport("scheme_agreement", rel <= caps["rel_tol"],
                             {run.scheme: a, other: b, "relative_difference": rel}, None, {}, {},
                             f"{run.run_id}|{alt.run_id}")


def _check_comparison(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .evolution import simulate, verify_comparison
    p = dict(ctx.p)
    p.update({"t1": caps["t1"], "dt": caps["dt"], "perturb": caps["perturb"]})
    per_seed, ok = [], True
    first = None
    for s in range(int(caps["seeds"])):
        seed = ctx.exp.seed + s
        lo = dict(p)
        hi = dict(p, R0=p["R0"] + caps["radius_gap"], pressure=p["pressure"] * caps["pressure_ratio"])
        A = simulate(radial_flow(lo, int(caps["cells"]), seed), "levelset", record_every=int(caps["record_every"]))
        B = simulate(radial_flow(hi, int(caps["cells"]), seed), "levelset", record_every=int(caps["record_every"]))
        rep = verify_comparison(A, B)
        ok &= rep.passed
        per_seed.append({"seed": seed, "pass": rep.passed, **rep.measured})
        if first is None or (not rep.passed and first.passed):
            first = rep
    return DiagnosticsReport("comparison", ok, {"seeds": per_seed}, first.witness_point, first.witness_values,
                             {}, first.run_id)


def _check_support_monotone(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .streamline import support_monotone_check
    return support_monotone_check(ctx.run, tol_cells=caps["tol_cells"], max_samples=int(caps["max_samples"]),
                                  seed=ctx.exp.seed)


def _check_growth_exponent(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .cone_harmonics import cone_harmonic_field
    from .field_core import Grid
    from .regularity_diag import fit_growth_exponent
    n = int(caps["cells"])
    grid = Grid.box((-1.0, -1.0), (1.0, 1.0), n, 2)
    rows, ok = [], True
    for beta in caps["betas"]:
        w = cone_harmonic_field(math.pi / (2 * beta), grid)
        dist = [float(caps["s_max"]) / 2 ** k for k in range(int(caps["count"]))]
        rep = fit_growth_exponent(w, None, (0.0, -1.0), dist, window=caps["window"])
        err = abs(rep.measured["beta"] - beta)
        ok &= err <= caps["tol"]
        rows.append({"beta": beta, "fitted": rep.measured["beta"], "error": err})
    return DiagnosticsReport("growth_exponent", ok, {"rows": rows, "h": grid.spacing})


def _check_expansion(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .evolution import nested_cone_expansion
    return nested_cone_expansion(ctx.p["theta"], caps["t_top"], int(caps["count"]), ctx.cells,
                                 ctx.p["L"], int(ctx.p["steps"]), tol=caps["tol"])


def _check_vertex_sublinear(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .evolution import nondegeneracy_profile
    run = ctx.run
    h = run.spec.grid.spacing
    rep = nondegeneracy_profile(run, (0.0, 0.0), [4 * h * 2 ** k for k in range(int(caps["count"]))], frame=0,
                                sublinear_margin=caps["sublinear_margin"])
    rep.name = "vertex_sublinear"
    rep.passed = bool(rep.measured["sublinear"])
    return rep


def _check_nondegeneracy(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .evolution import front_points, nondegeneracy_profile
    run = ctx.run
    fr = run.frames[-1]
    h = run.spec.grid.spacing
    fp = front_points(fr)
    x0 = np.array([0.0, float(np.median(fp[:, 1]))])
    rep = nondegeneracy_profile(run, x0, [4 * h * 2 ** k for k in range(int(caps["count"]))])
    v = ctx.p["speed"]
    rel = abs(rep.measured["c0"] - v) / v
    rep.measured.update({"exact_speed": v, "relative_error": rel})
    rep.passed = bool(rel <= caps["rel_tol"])
    return rep


def _check_cusp1(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .examples_gallery import cusp_phase1_check
    return cusp_phase1_check(ctx.cusp_spec(), C0=ctx.p["C0"], nr=int(caps["nr"]), nt=int(caps["nt"]))


def _check_cusp2(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .examples_gallery import CuspSpec, cusp_phase2_check
    s = ctx.cusp_spec()
    s = CuspSpec(C0=s.C0, gamma0=s.gamma0, gamma1=s.gamma1, phase2_times=tuple(caps["times"]),
                 c_surrogate=caps["c_surrogate"], x2_min=caps["x2_min"])
    return cusp_phase2_check(s, C0=ctx.p["C0"], h=caps["h"])


def _check_cusp_containment(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .examples_gallery import cusp_containment
    return cusp_containment(ctx.run, ctx.cusp_spec(), caps["tol_cells"])


def _bump_grid(ctx: Context):
    from .field_core import Grid
    w = ctx.p["half_width"]
    return Grid.box((-w, -w), (w, w), ctx.cells, 2)


def _check_e3(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .examples_gallery import PotentialBumpSpec, e3_check
    spec = PotentialBumpSpec(ctx.p["delta"], int(ctx.p["n"]))
    out = e3_check(spec, _bump_grid(ctx), ctx.p["theta"])
    ok = out["scaled"].passed and not out["full"].passed and out["min_dx1"] < 0
    return DiagnosticsReport("e3_properties", ok,
                             {"scaled_monotone": out["scaled"].to_dict(), "full_monotone": out["full"].to_dict(),
                              "min_dx1": out["min_dx1"], "constants": out["constants"], "eps": out["eps"]},
                             out["witness"], {"dx1": out["min_dx1"]})


def _check_e2(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .examples_gallery import PotentialBumpSpec, e2_check
    spec = PotentialBumpSpec.for_scale(ctx.p["eps"], ctx.p["alpha"], ctx.p["kappa"])
    out = e2_check(spec, _bump_grid(ctx), ctx.p["theta"])
    ok = out["bounds_ok"] and out["scaled"].passed and not out["full"].passed and out["min_dx1"] < 0
    return DiagnosticsReport("e2_properties", ok,
                             {"bounds_ok": out["bounds_ok"], "bounds": out["bounds"],
                              "scaled_monotone": out["scaled"].to_dict(), "full_monotone": out["full"].to_dict(),
                              "min_dx1": out["min_dx1"], "constants": out["constants"]},
                             out["witness"], {"dx1": out["min_dx1"]})


def barrier_fixture(caps: dict):
    """Flat front ``u = (-x_d)_+`` on a thin strip padded so the sup-convolution balls stay inside."""
    from .field_core import Grid, GridField
    n = int(caps["cells"])
    half = float(caps["half_length"])
    grid = Grid.box((-half, -caps["half_height"]), (half, caps["half_height"]), n, 2)
    x = grid.coords()
    return GridField(grid, np.maximum(-x[..., 1], 0.0), nonnegative=True)


def _check_barrier(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .supconv import BarrierParams, assemble_barrier
    u = barrier_fixture(caps)
    params = BarrierParams(eps=caps["eps"], c_star=caps["c_star"])
    bundle = assemble_barrier(u, None, params)
    m = dict(bundle.ordering.measured)
    ident = bundle.identity_holds()
    ok = bundle.ordering.passed and m.get("fraction_ordered", 0) >= caps["min_fraction"] and ident
    m.update({"identity_bitwise": ident, "phi_properties": bundle.phi.report.measured})
    return DiagnosticsReport("barrier_ordering", ok, m, bundle.ordering.witness_point,
                             bundle.ordering.witness_values, {"params": bundle.params})


def _check_strip(ctx: Context, caps: dict) -> DiagnosticsReport:
    from .elliptic import StripSpec, flat_graph, sawtooth, strip_comparison, strip_solves
    ratios = []
    for L in caps["lengths"]:
        rep = strip_comparison(StripSpec(sawtooth(caps["c_g"]), float(L), caps["c_g"]), h=caps["h"])
        ratios.append(rep.measured["R"])
    spread = (max(ratios) - min(ratios)) / min(ratios)
    # flat strip: w1 = -x_d and w2 = -x_d (1 + x_d) / 2, so w2 / w1 = (1 + x_d) / 2
    L0 = float(max(caps["lengths"]))
    grid, s1, s2 = strip_solves(StripSpec(flat_graph, L0, 0.0), caps["h"])
    x = grid.coords()
    inner = s1.assembled.domain & (np.abs(x[..., 0]) <= 1.0) & (x[..., 1] < -0.1) & (x[..., 1] > -0.9)
    exact = (1 + x[..., 1][inner]) / 2
    flat_err = float(np.max(np.abs(s2.field.values[inner] / s1.field.values[inner] - exact) / exact))
    ok = spread < caps["spread_tol"] and flat_err <= caps["flat_tol"]
    return DiagnosticsReport("strip_comparison", ok, {"lengths": list(caps["lengths"]), "ratios": ratios,
                                                      "spread": spread, "flat_ratio_error": flat_err})


CHECKS: dict[str, Check] = {
    "radial_oracle": Check(_check_radial_oracle, {"rel_tol": 0.02, "exclude_factor": 1.5}, ("radial",)),
    "scheme_agreement": Check(_check_scheme_agreement, {"rel_tol": 0.03, "exclude_factor": 1.5}, ("radial",)),
    "comparison": Check(_check_comparison, {"seeds": 3, "cells": 128, "t1": 0.03, "dt": 2.5e-4, "perturb": 0.01,
                                            "radius_gap": 0.06, "pressure_ratio": 1.2, "record_every": 20},
                        ("radial",)),
    "support_monotone": Check(_check_support_monotone, {"tol_cells": 2.0, "max_samples": 400},
                              ("radial", "flatfront", "custom", "cusp_e1")),
    "growth_exponent": Check(_check_growth_exponent, {"betas": [1.25, 1.5, 2.0], "cells": 512, "tol": 0.05,
                                                      "s_max": 0.5, "count": 5, "window": 0.1}),
    "expansion_exponent": Check(_check_expansion, {"t_top": 0.2, "count": 5, "tol": 0.2}, ("cone",)),
    "vertex_sublinear": Check(_check_vertex_sublinear, {"count": 5, "sublinear_margin": 0.1}, ("cone",)),
    "nondegeneracy": Check(_check_nondegeneracy, {"count": 4, "rel_tol": 0.1}, ("flatfront",)),
    "cusp_phase1": Check(_check_cusp1, {"nr": 400, "nt": 41}, ("cusp_e1",)),
    "cusp_phase2": Check(_check_cusp2, {"times": [1.0, 1.25, 1.5, 1.75], "h": 1 / 64, "c_surrogate": 100.0,
                                        "x2_min": 0.05}, ("cusp_e1",)),
    "cusp_containment": Check(_check_cusp_containment, {"tol_cells": 2.0}, ("cusp_e1",)),
    "e2_properties": Check(_check_e2, {}, ("gallery_e2",)),
    "e3_properties": Check(_check_e3, {}, ("gallery_e3",)),
    "barrier_ordering": Check(_check_barrier, {"eps": 2.0 ** -7, "c_star": 0.01, "cells": 1088,
                                               "half_length": 1.0625, "half_height": 0.0625,
                                               "min_fraction": 1.0}),
    "strip_comparison": Check(_check_strip, {"c_g": 0.5, "lengths": [2, 4, 8], "h": 1 / 32, "spread_tol": 0.15,
                                             "flat_tol": 0.05}),
}


# ---------------------------------------------------------------------------
# orchestration

def run_experiment(exp: ExperimentSpec, out_dir: str | Path | None = None) -> RunManifest:
    """Run the scenario and its diagnostics in declared order; write reports, archive and manifest."""
    exp.validate()
    out = Path(out_dir if out_dir is not None else exp.output_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    ctx = Context(exp)
    reports, outcomes, written = {}, {}, []
    start = time.perf_counter()
    complete = False
    archive = None
    try:
        for c in exp.checks():
            rep = _with_caps(CHECKS[c["check"]].fn(ctx, c["caps"]), c["caps"])
            path = rep.write(out / "reports" / f"{c['check']}.json")
            reports[c["check"]] = str(path.relative_to(out))
            outcomes[c["check"]] = {"pass": bool(rep.passed), "severity": c["severity"]}
            written.append(rep)
        if ctx.has_run and exp.scenario != "cone" and (ctx._run is not None or not exp.diagnostics):
            from .evolution import write_archive
            spec_text = yaml.safe_dump(exp.to_dict(), sort_keys=True)
            write_archive(ctx.run, out / "archive", exp.format, spec_text)
            archive = "archive"
        complete = True
    finally:
        man = RunManifest(exp.name, exp.spec_hash(), __version__, reports, outcomes,
                          round(time.perf_counter() - start, 3), complete,
                          archive if complete else None)
        man.write(out / "manifest.json")
    return man


PLOT_SELECTORS = ("fronts", "growth", "exponents", "radii", "ladder")


def _csv(path: Path, header: list, rows) -> Path:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def emit_plotdata(manifest_path: str | Path, what=(), out_dir: str | Path | None = None) -> list[Path]:
    """CSV extracts for plotting; an empty selector is a no-op."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    man = RunManifest.load(manifest_path)
    if not man.complete:
        raise ValueError("manifest is incomplete")
    dest = Path(out_dir) if out_dir is not None else root / "plotdata"
    files: list[Path] = []
    for sel in what:
        if sel not in PLOT_SELECTORS:
            raise ValueError(f"unknown selector '{sel}' (choose from {', '.join(PLOT_SELECTORS)})")
    if not what:
        return files
    dest.mkdir(parents=True, exist_ok=True)

    def report(name):
        if name not in man.reports:
            raise FileNotFoundError(f"missing artifact: report '{name}'")
        return json.loads((root / man.reports[name]).read_text())

    for sel in what:
        if sel == "fronts":
            if man.archive is None:
                raise FileNotFoundError("missing artifact: archive (front polylines)")
            from .field_core import front_crossings, read_field
            frames = sorted((root / man.archive / "frames").glob("level_*.field"))
            if not frames:
                raise FileNotFoundError("missing artifact: level frames")
            rows = []
            for k, fp in enumerate(frames):
                fld = read_field(fp)
                pts, _ = front_crossings(-fld.values, fld.grid)
                ang = np.arctan2(pts[:, 1], pts[:, 0])
                for p in pts[np.argsort(ang, kind="stable")]:
                    rows.append([k, fld.time, float(p[0]), float(p[1])])
            files.append(_csv(dest / "fronts.csv", ["frame", "t", "x1", "x2"], rows))
        elif sel == "radii":
            m = report("radial_oracle")["measured"]
            files.append(_csv(dest / "radii.csv", ["t", "radius", "oracle"],
                              zip(m["times"], m["radii"], m["oracle_radii"])))
        elif sel == "growth":
            m = report("growth_exponent")["measured"]
            files.append(_csv(dest / "growth.csv", ["beta", "fitted", "error"],
                              [[r["beta"], r["fitted"], r["error"]] for r in m["rows"]]))
        elif sel in ("exponents", "ladder"):
            m = report("expansion_exponent")["measured"]
            rows = [[t, r, math.log(t), math.log(r) if r > 0 else "nan"] for t, r in zip(m["ladder"], m["radii"])]
            files.append(_csv(dest / "expansion_ladder.csv", ["t", "r", "log_t", "log_r"], rows))
            files.append(_csv(dest / "expansion_fit.csv", ["slope", "target", "relative_error"],
                              [[m["slope"], m["target"], m["relative_error"]]]))
    return files
