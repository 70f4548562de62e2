"""Command line entry point: ``hsdrift <command> ...``.

Exit status: 0 when every assert-severity check passes, 1 when one fails,
2 for invalid input (reported before any compute).  ``HSDRIFT_THREADS`` caps
the worker threads of the compiled kernels.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import yaml

from .experiments import CHECKS, ExperimentSpec, SpecError, emit_plotdata, run_experiment
from .reports import SCHEMA_VERSION

EXAMPLE_PRESETS = {
    "e1": ("cusp_e1", ["cusp_phase1", "cusp_phase2", "cusp_containment"]),
    "e2": ("gallery_e2", ["e2_properties"]),
    "e3": ("gallery_e3", ["e3_properties"]),
}


def _threads() -> None:
    raw = os.environ.get("HSDRIFT_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise SpecError(f"HSDRIFT_THREADS must be an integer, got {raw!r}")
    import numba
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise SpecError(f"parameter {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out[k] = yaml.safe_load(v)
    return out


def _load(args) -> ExperimentSpec:
    if not args.config:
        raise SpecError("--config is required")
    raw = yaml.safe_load(Path(args.config).read_text())
    if not isinstance(raw, dict):
        raise SpecError("experiment file must contain a mapping")
    if getattr(args, "grid", None):
        raw["grid"] = args.grid
    if getattr(args, "format", None):
        raw["format"] = args.format
    if getattr(args, "dim", None):
        raw["dim"] = args.dim
    return ExperimentSpec.from_dict(raw)


def _finish(man, out) -> int:
    for name, o in man.outcomes.items():
        status = "PASS" if o["pass"] else "FAIL"
        print(f"[{status}] {name} ({o['severity']})")
    print(f"manifest: {Path(out) / 'manifest.json'}")
    return 0 if man.passed else 1


def cmd_validate(args) -> int:
    exp = _load(args)
    print(f"ok: {exp.name} ({exp.scenario}, {len(exp.diagnostics)} checks)")
    return 0


def cmd_simulate(args) -> int:
    exp = _load(args)
    out = args.out or exp.output_dir
    return _finish(run_experiment(exp, out), out)


def cmd_verify_example(args) -> int:
    scenario, checks = EXAMPLE_PRESETS[args.example]
    raw = {"name": f"example-{args.example}", "scenario": scenario, "flow": _parse_params(args.params),
           "diagnostics": checks, "output_dir": args.out or f"out/example-{args.example}"}
    if args.grid:
        raw["grid"] = args.grid
    if args.format:
        raw["format"] = args.format
    exp = ExperimentSpec.from_dict(raw)
    man = run_experiment(exp, raw["output_dir"])
    if args.example in ("e2", "e3"):
        _dump_bump_fields(exp, Path(raw["output_dir"]))
    return _finish(man, raw["output_dir"])


def _dump_bump_fields(exp: ExperimentSpec, out: Path) -> None:
    from .examples_gallery import PotentialBumpSpec, _e2_phi, make_e3_field
    from .field_core import Grid, write_field
    p = exp.flow_params()
    w = p["half_width"]
    grid = Grid.box((-w, -w), (w, w), exp.cells(), 2)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    if exp.scenario == "gallery_e3":
        f, phi = make_e3_field(PotentialBumpSpec(p["delta"], int(p["n"])), grid)
        write_field(out / "fields" / "f.field", f, exp.format)
    else:
        phi = _e2_phi(PotentialBumpSpec.for_scale(p["eps"], p["alpha"], p["kappa"]), grid)
    write_field(out / "fields" / "phi.field", phi, exp.format)


def cmd_diagnose(args) -> int:
    from .field_core import Cone, read_field
    from .regularity_diag import (MonotoneQuery, check_eps_a_monotone, check_full_monotone,
                                  fit_growth_exponent)
    fld = read_field(args.field)
    p = _parse_params(args.params)
    mu = tuple(p.get("mu", (0.0, -1.0)))
    cone = Cone(mu, float(p.get("theta", math.pi / 4)))
    if args.check == "eps_monotone":
        rep = check_eps_a_monotone(fld, MonotoneQuery(cone, float(p["eps"]), float(p.get("a", 0.0)),
                                                      p.get("window"), p.get("max_scale")))
    elif args.check == "full_monotone":
        rep = check_full_monotone(fld, cone, p.get("window"))
    else:
        rep = fit_growth_exponent(fld, None, mu, p["distances"], p.get("window"))
    text = rep.to_json()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        rep.write(Path(args.out) / f"{rep.name}.json")
    sys.stdout.write(text)
    return 0 if rep.passed else 1


def cmd_cone_table(args) -> int:
    from .cone_harmonics import cone_table
    thetas = args.thetas or [math.pi / 6, math.pi / 4, math.pi / 3, math.pi / 2]
    rows = cone_table(thetas, args.dim or 2)
    header = ["theta", "lambda1", "beta", "theta_inverse_error"]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    fh = open(Path(args.out) / "cone_table.csv", "w", newline="") if args.out else sys.stdout
    try:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(r[k])) for k in header])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_harnack(args) -> int:
    caps = _parse_params(args.params)
    raw = {"name": "harnack", "scenario": "custom", "output_dir": args.out or "out/harnack",
           "diagnostics": [{"check": "strip_comparison", "caps": caps}]}
    exp = ExperimentSpec.from_dict(raw)
    return _finish(run_experiment(exp, raw["output_dir"]), raw["output_dir"])


def cmd_emit_plotdata(args) -> int:
    what = [w for w in (args.what or "").split(",") if w]
    files = emit_plotdata(args.manifest, what, args.out)
    for f in files:
        print(f)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hsdrift", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="experiment YAML file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--grid", type=int, help="cells along the first axis")
        p.add_argument("--dim", type=int, choices=(2, 3))
        p.add_argument("--format", choices=("ascii", "binary"))

    p = sub.add_parser("validate", help="check an experiment file without running it")
    common(p)
    p.set_defaults(fn=cmd_validate)
    p = sub.add_parser("simulate", help="run an experiment: simulation, diagnostics, archive")
    common(p)
    p.set_defaults(fn=cmd_simulate)
    p = sub.add_parser("diagnose", help="run one monotonicity/growth check on a stored field")
    common(p, config=False)
    p.add_argument("--field", required=True)
    p.add_argument("--check", required=True, choices=("eps_monotone", "full_monotone", "growth"))
    p.add_argument("--params", nargs="*", help="key=value (theta, mu, eps, a, window, distances)")
    p.set_defaults(fn=cmd_diagnose)
    p = sub.add_parser("verify-example", help="run the checks of one worked example")
    common(p, config=False)
    p.add_argument("example", choices=sorted(EXAMPLE_PRESETS))
    p.add_argument("--params", nargs="*", help="key=value flow overrides")
    p.set_defaults(fn=cmd_verify_example)
    p = sub.add_parser("cone-table", help="cone exponents beta(theta) as CSV")
    common(p, config=False)
    p.add_argument("--thetas", type=float, nargs="*")
    p.set_defaults(fn=cmd_cone_table)
    p = sub.add_parser("harnack", help="strip comparison ratios over a length ladder")
    common(p, config=False)
    p.add_argument("--params", nargs="*", help="key=value caps of strip_comparison")
    p.set_defaults(fn=cmd_harnack)
    p = sub.add_parser("emit-plotdata", help="CSV extracts from a finished experiment")
    p.add_argument("--manifest", required=True)
    p.add_argument("--what", default="", help=f"comma separated: {', '.join(['fronts', 'radii', 'growth', 'ladder'])}")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_emit_plotdata)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        _threads()
        if getattr(args, "dim", None) == 3 and args.command != "cone-table":
            raise SpecError("only cone-table supports --dim 3")
        return args.fn(args)
    except (SpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
