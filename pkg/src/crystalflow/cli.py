"""Command line front end: run | step | oracle | verify.

Runs are described by one JSON config. Scalar entries can be overridden
with ``--set section.key=value`` (the value is parsed as JSON when possible).

Exit codes: 0 ok, 1 a check failed, 2 bad config or input, 3 the run was
cut short (margin breach or a step that did not converge).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import oracles
from .anisotropy import Anisotropy, eval_polar, window_distance, wulff_mask
from .fields import Grid, ScalarField, SetMask, VectorField
from .fileio import load_trace, read_field, read_mask, write_field, write_trace
from .flow import FlowParams, FlowTrace, StepRecord, Termination, check_margin, radius_trace, run_flow
from .resolvent import SolverParams, check_optimality, implicit_step
from .verify import SUITES, run_suite

logger = logging.getLogger("crystalflow")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "anisotropy": {"kind": "catalog", "name": "euclidean"},
    "grid": {"shape": [160, 160], "spacing": 1 / 64, "center": [0.0, 0.0]},
    "initial": {"type": "wulff", "center": [0.0, 0.0], "radius": 1.0},
    "flow": {"h": 0.01, "t_max": 0.3, "margin": None, "record_fields": False},
    "solver": {},
    "output": "run",
    "seed": 0,
    "threads": 1,
}

PRESETS = {
    "wulff-shrink": {},
    "square-shrink": {
        "anisotropy": {"kind": "catalog", "name": "ell1"},
        "grid": {"shape": [205, 205], "spacing": 1 / 64, "center": [0.0, 0.0]},
        "flow": {"h": 0.04, "t_max": 0.3},
    },
    "two-disks": {
        "grid": {"shape": [256, 160], "spacing": 1 / 64, "center": [0.0, 0.0]},
        "initial": {"type": "union", "shapes": [
            {"type": "wulff", "center": [-1.0, 0.0], "radius": 0.5},
            {"type": "wulff", "center": [0.9, 0.0], "radius": 0.8}]},
        "flow": {"h": 0.01, "t_max": 0.4},
    },
    "margin-breach": {
        "grid": {"shape": [64, 64], "spacing": 1 / 32, "center": [0.0, 0.0]},
        "initial": {"type": "wulff", "center": [0.0, 0.0], "radius": 0.9},
    },
}


# -- config ----------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "initial":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key.path=value")
    path, value = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = _parse_value(value)


def load_config(path=None, preset=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if path is not None:
        try:
            cfg = _merge(cfg, json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    for o in overrides:
        apply_override(cfg, o)
    return cfg


def build_anisotropy(cfg: dict) -> Anisotropy:
    try:
        return Anisotropy.from_dict(cfg["anisotropy"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"anisotropy: {e}") from e


def build_grid(cfg: dict) -> Grid:
    try:
        return Grid.from_dict(cfg["grid"])
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"grid: {e}") from e


def build_flow(cfg: dict) -> FlowParams:
    fl = cfg.get("flow", {})
    h = fl.get("h")
    if not isinstance(h, (int, float)) or not h > 0:
        raise ConfigError(f"flow.h must be a positive number, got {h!r}")
    t_max = fl.get("t_max")
    if not isinstance(t_max, (int, float)) or not t_max >= 0:
        raise ConfigError(f"flow.t_max must be a nonnegative number, got {t_max!r}")
    return FlowParams(h=float(h), t_max=float(t_max), margin=fl.get("margin"),
                      record_fields=bool(fl.get("record_fields", False)))


def build_solver(cfg: dict) -> SolverParams:
    try:
        return SolverParams(**cfg.get("solver", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"solver: {e}") from e


def _initial_inside(spec: dict, grid: Grid, a: Anisotropy, rng) -> np.ndarray:
    kind = spec.get("type")
    if kind == "wulff":
        R = spec.get("radius")
        if not isinstance(R, (int, float)) or not R > 0:
            raise ConfigError(f"initial.radius must be positive, got {R!r}")
        try:
            return wulff_mask(a, grid, spec.get("center", [0.0] * grid.dim), R, margin=0.0).inside
        except ValueError as e:
            raise ConfigError(f"initial: {e}") from e
    if kind == "union":
        out = np.zeros(grid.shape, dtype=bool)
        for s in spec.get("shapes", []):
            out |= _initial_inside(s, grid, a, rng)
        return out
    if kind == "blobs":
        # seeded union of Wulff shapes inside a centered square region
        count = int(spec.get("count", 3))
        try:
            rmin, rmax = (float(v) for v in spec.get("radius", [0.2, 0.5]))
        except (TypeError, ValueError) as e:
            raise ConfigError("initial.radius for blobs must be a pair [rmin, rmax]") from e
        half = float(spec.get("half_width", 0.6))
        x = grid.coords()
        out = np.zeros(grid.shape, dtype=bool)
        for _ in range(count):
            c = rng.uniform(-half, half, grid.dim)
            out |= eval_polar(a, x - c) <= rng.uniform(rmin, rmax)
        return out
    if kind == "mask":
        try:
            return read_mask(spec["path"], grid).inside
        except (KeyError, OSError, ValueError) as e:
            raise ConfigError(f"initial mask: {e}") from e
    raise ConfigError(f"initial.type must be wulff, union, blobs or mask, got {kind!r}")


def build_initial(cfg: dict, grid: Grid, a: Anisotropy) -> SetMask:
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    return SetMask(grid, _initial_inside(cfg.get("initial", {}), grid, a, rng))


def _format(x: float) -> str:
    return f"{x:.12g}"


# -- commands --------------------------------------------------------------------

def cmd_run(cfg: dict) -> int:
    start = time.perf_counter()
    a = build_anisotropy(cfg)
    grid = build_grid(cfg)
    if a.dim != grid.dim:
        raise ConfigError("anisotropy and grid dimensions differ")
    fp = build_flow(cfg)
    sp = build_solver(cfg)
    E0 = build_initial(cfg, grid, a)
    try:
        margin = fp.resolved_margin(grid.spacing)
    except ValueError as e:
        raise ConfigError(f"flow.margin: {e}") from e
    out = Path(cfg.get("output", "run"))
    out.mkdir(parents=True, exist_ok=True)

    if not check_margin(E0, window_distance(a, grid), margin):
        tr = FlowTrace(params=fp, anisotropy=a, steps=[StepRecord(0, 0.0, E0)],
                       terminated_reason=Termination.MARGIN_BREACH)
    else:
        tr = run_flow(E0, a, fp, sp)

    manifest = write_trace(out, tr, fields=fp.record_fields)
    unconverged = [s.k for s in tr.steps[1:] if not s.converged]
    manifest["unconverged_steps"] = unconverged
    manifest["config"] = cfg
    manifest["solver"] = sp.to_dict()
    manifest["seed"] = int(cfg.get("seed", 0))
    manifest["threads"] = int(cfg.get("threads", 1))

    center = cfg.get("initial", {}).get("center")
    if center is None:
        pts = grid.coords()[E0.inside]
        center = pts.mean(axis=0).tolist() if len(pts) else [0.0] * grid.dim
    with open(out / "radius.csv", "w") as fh:
        fh.write("t,r\n")
        for t, r in radius_trace(tr, a, center):
            fh.write(f"{_format(t)},{_format(r)}\n")

    manifest["timing"] = {"wall_clock_s": time.perf_counter() - start}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info("run finished: %s after %d steps", tr.terminated_reason.value, len(tr.steps) - 1)
    if tr.terminated_reason is Termination.MARGIN_BREACH or unconverged:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_step(cfg: dict, g_path, tol: float | None = None) -> int:
    a = build_anisotropy(cfg)
    h = build_flow(cfg).h
    sp = build_solver(cfg)
    try:
        g = read_field(g_path)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read field {g_path}: {e}") from e
    if not isinstance(g, ScalarField):
        raise ConfigError("step data must be a scalar field")
    if g.grid.dim != a.dim:
        raise ConfigError("anisotropy and field dimensions differ")
    sol = implicit_step(g, h, a, sp)
    tol = sp.gap_tol if tol is None else tol
    rep = check_optimality(sol, g, h, a, tol)
    out = cfg.get("output")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_field(Path(out) / "u.bin", sol.u)
        write_field(Path(out) / "z.bin", sol.z)
    print(json.dumps({"solver": sol.diagnostics(), "optimality": rep.to_dict()}, indent=2))
    return EXIT_OK if rep.passed else EXIT_CHECK


FIELD_ORACLES = {
    "polar": (lambda x, a, p: eval_polar(a, x), ()),
    "tv_flow_f": (lambda x, a, p: oracles.tv_flow_f(x, p["t"], a), ("t",)),
    "tv_flow_zeta": (lambda x, a, p: oracles.tv_flow_zeta(x, p["t"], a), ("t",)),
    "tv_flow_dfdt": (lambda x, a, p: oracles.tv_flow_dfdt(x, p["t"], a), ("t",)),
    "polar_h": (lambda x, a, p: oracles.polar_h(x, p["h"], a), ("h",)),
    "resolvent_wulff": (lambda x, a, p: oracles.resolvent_wulff(x, p["h"], p["R"], a), ("h", "R")),
    "resolvent_wulff_field": (lambda x, a, p: oracles.resolvent_wulff_field(x, p["h"], a), ("h",)),
}

SCALAR_ORACLES = {
    "chi": (lambda p: oracles.chi(p["N"]), ("N",)),
    "radius_recursion": (lambda p: oracles.radius_recursion(p["R"], p["h"], int(p["k"]), p.get("N", 2)),
                         ("R", "h", "k")),
    "continuous_radius": (lambda p: oracles.continuous_radius(p["R"], p["t"], p.get("N", 2)), ("R", "t")),
    "comp_wulff_bound": (lambda p: oracles.comp_wulff_bound(p["R"], p["s"], p.get("N", 2)), ("R", "s")),
    "radius_lower_bound": (lambda p: oracles.radius_lower_bound(p["R"], p["t"], p.get("N", 2)), ("R", "t")),
    "discrete_extinction_time": (lambda p: oracles.discrete_extinction_time(p["R"], p["h"], p.get("N", 2)),
                                 ("R", "h")),
    "continuous_extinction_time": (lambda p: oracles.continuous_extinction_time(p["R"], p.get("N", 2)), ("R",)),
    "extinction_threshold": (lambda p: oracles.extinction_threshold(p["h"], p.get("N", 2)), ("h",)),
}

ORACLE_NAMES = sorted(FIELD_ORACLES) + sorted(SCALAR_ORACLES) + ["radius_table"]


def cmd_oracle(name: str, params: dict, cfg: dict, out_path=None) -> int:
    def need(keys):
        missing = [k for k in keys if k not in params]
        if missing:
            raise ConfigError(f"oracle {name} needs parameter(s) {', '.join(missing)}")

    if name in FIELD_ORACLES:
        fn, keys = FIELD_ORACLES[name]
        need(keys)
        a = build_anisotropy(cfg)
        grid = build_grid(cfg)
        if a.dim != grid.dim:
            raise ConfigError("anisotropy and grid dimensions differ")
        try:
            values = fn(grid.coords(), a, params)
        except ValueError as e:
            raise ConfigError(f"oracle {name}: {e}") from e
        f = VectorField(grid, values) if np.ndim(values) == grid.dim + 1 else ScalarField(grid, values)
        if out_path is None:
            raise ConfigError("field oracles need --out")
        write_field(out_path, f)
        print(json.dumps({"oracle": name, "params": params, "out": str(out_path)}))
        return EXIT_OK
    if name in SCALAR_ORACLES:
        fn, keys = SCALAR_ORACLES[name]
        need(keys)
        try:
            v = fn(params)
        except ValueError as e:
            raise ConfigError(f"oracle {name}: {e}") from e
        value = "Extinct" if oracles.is_extinct(v) else v
        print(json.dumps({"oracle": name, "params": params, "value": value}))
        return EXIT_OK
    if name == "radius_table":
        need(("R", "h"))
        N = int(params.get("N", 2))
        seq = oracles.radius_sequence(params["R"], params["h"], N, params.get("k_max"))
        print("k,t,r")
        for k, r in enumerate(seq):
            print(f"{k},{_format(k * params['h'])},{_format(r)}")
        if params.get("k_max") is None or len(seq) <= params["k_max"]:
            print(f"{len(seq)},{_format(len(seq) * params['h'])},Extinct")
        return EXIT_OK
    raise ConfigError(f"unknown oracle {name!r}; choose from {', '.join(ORACLE_NAMES)}")


def cmd_verify(suite: str, trace_dir) -> int:
    d = Path(trace_dir)
    if not d.is_dir() or not (d / "manifest.json").is_file():
        raise ConfigError(f"{trace_dir} does not hold a run (no manifest.json)")
    try:
        tr = load_trace(d)
        reports = run_suite(tr, tr.anisotropy, suite)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"verify: {e}") from e
    print(json.dumps([r.to_dict() for r in reports], indent=2))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


# -- entry point -----------------------------------------------------------------

def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="JSON config file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="PATH=VALUE",
                   help="override a config entry, e.g. flow.h=0.02")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crystalflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a flow and write manifest, frames and radius.csv")
    _config_args(p)
    p.add_argument("--out", "-o", help="output directory (overrides config 'output')")

    p = sub.add_parser("step", help="one implicit step on a field file, with an optimality report")
    _config_args(p)
    p.add_argument("g", help="scalar field file with the data g")
    p.add_argument("--out", "-o", help="directory for u.bin and z.bin")
    p.add_argument("--tol", type=float, help="optimality tolerance (default: solver gap_tol)")

    p = sub.add_parser("oracle", help="evaluate a closed-form oracle")
    _config_args(p)
    p.add_argument("name", choices=ORACLE_NAMES)
    p.add_argument("--param", "-p", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", "-o", help="field file for grid-valued oracles")

    p = sub.add_parser("verify", help="run a check suite on a run directory")
    p.add_argument("trace_dir")
    p.add_argument("--suite", default="all", choices=("all",) + SUITES)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            return cmd_verify(args.suite, args.trace_dir)
        cfg = load_config(args.config, args.preset, args.overrides)
        if args.command == "run":
            if args.out:
                cfg["output"] = args.out
            return cmd_run(cfg)
        if args.command == "step":
            cfg["output"] = args.out
            return cmd_step(cfg, args.g, args.tol)
        params = {}
        for kv in args.param:
            if "=" not in kv:
                raise ConfigError(f"--param {kv!r} is not KEY=VALUE")
            k, v = kv.split("=", 1)
            params[k] = _parse_value(v)
        return cmd_oracle(args.name, params, cfg, args.out)
    except ConfigError as e:
        print(f"crystalflow: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
