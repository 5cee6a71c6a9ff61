"""Command-line scenario runner.

    hcot distance --x 0,0,0 --y 0,0,1
    hcot wardrop --config scenario.json --out results/
    hcot validate --suite all

Every run writes ``result.json``, any CSV dumps and a ``manifest.json``
(config, seed, library versions, SHA-256 of each output) to the output
directory.  Exit status: 0 success, 2 invalid configuration, 3 numerical
failure or failed validation checks.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, density, geodesy, otcore, validation
from .congestion import graph, lattice, wardrop

log = logging.getLogger("hcot")

COMMANDS = ("distance", "geodesic", "transport", "density", "wardrop", "validate")
OUT_ENV = "HCOT_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# stochastic tasks must carry a seed in the config or on the command line
_STOCHASTIC = {("geodesic", "mcp"), ("density", "interpolation_bound")}

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 3}
_POINTS = {"type": "array", "items": _POINT, "minItems": 1}
_POINT_OR_POINTS = {"oneOf": [_POINT, _POINTS]}
_MEASURE = {"oneOf": [
    {"type": "string"},
    {"type": "object", "required": ["points", "weights"],
     "properties": {"points": _POINTS, "weights": {"type": "array", "items": {"type": "number", "minimum": 0}}}},
]}
_NODE_MEASURE = {"type": "object", "required": ["nodes", "mass"],
                 "properties": {"nodes": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                                "mass": {"type": "array", "items": {"type": "number", "minimum": 0}}}}
_GRID = {"type": "object", "required": ["lo", "hi", "shape"],
         "properties": {"lo": {"type": "array", "items": {"type": "number"}},
                        "hi": {"type": "array", "items": {"type": "number"}},
                        "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}}}}
_POS = {"type": "number", "exclusiveMinimum": 0}

_BASE = {
    "type": "object",
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "dims": {"type": "object", "required": ["n"], "properties": {"n": {"type": "integer", "minimum": 1}}},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "task": {"type": "string"},
    },
}

SCHEMAS = {
    "distance": {"required": ["x", "y"], "properties": {"x": _POINT_OR_POINTS, "y": _POINT_OR_POINTS}},
    "geodesic": {"oneOf": [
        {"required": ["x", "y"],
         "properties": {"task": {"const": "path"}, "x": _POINT, "y": _POINT,
                        "samples": {"type": "integer", "minimum": 2},
                        "t": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}}}},
        {"required": ["task", "center", "radius", "y", "t"],
         "properties": {"task": {"const": "mcp"}, "center": _POINT, "radius": _POS, "y": _POINT,
                        "t": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "samples": {"type": "integer", "minimum": 100}}},
    ]},
    "transport": {"required": ["mu", "nu"],
                  "properties": {"mu": _MEASURE, "nu": _MEASURE,
                                 "cost": {"enum": ["cc", "cc_squared"]},
                                 "secondary": {"type": "boolean"}}},
    "density": {"oneOf": [
        {"required": ["task", "mu", "nu", "t", "p"],
         "properties": {"task": {"const": "interpolation_bound"},
                        "mu": {"type": "object", "required": ["ball", "lo", "hi", "shape"]},
                        "nu": _MEASURE, "p": {"type": "number", "exclusiveMinimum": 1},
                        "t": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                         "exclusiveMaximum": 1}, "minItems": 1},
                        "samples": {"type": "integer", "minimum": 100},
                        "side": {"enum": ["source", "target"]}}},
        {"required": ["task", "mu", "nu", "grid"],
         "properties": {"task": {"const": "transport_density"}, "mu": _MEASURE, "nu": _MEASURE,
                        "grid": _GRID, "steps": {"type": "integer", "minimum": 1}}},
        {"required": ["task"],
         "properties": {"task": {"const": "s0_sweep"}, "n_values": {"type": "array",
                                                                    "items": {"type": "integer", "minimum": 1}}}},
    ]},
    "wardrop": {
        "required": ["sources", "sinks"],
        "oneOf": [{"required": ["lattice"]}, {"required": ["network"]}],
        "properties": {
            "lattice": {"type": "object", "required": ["lo", "hi", "h"],
                        "properties": {"lo": _POINT, "hi": _POINT, "h": _POS}},
            "network": {"enum": ["two_link"]},
            "sources": {"oneOf": [_MEASURE, _NODE_MEASURE]},
            "sinks": {"oneOf": [_MEASURE, _NODE_MEASURE]},
            "congestion": {"type": "object",
                           "properties": {"a": _POS, "b": _POS, "p": {"type": "number", "exclusiveMinimum": 1},
                                          "homog_dim": {"type": ["integer", "null"]}}},
            "mode": {"enum": list(wardrop.MODES)},
            "gamma_bar": {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0}}},
            "tol": _POS,
            "max_iter": {"type": "integer", "minimum": 1},
            "grid": _GRID,
        },
    },
    "validate": {"properties": {"suite": {"enum": list(validation.SUITES) + ["all"]}}},
}


class ConfigError(ValueError):
    """Configuration rejected before any computation ran."""


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, _BASE)
        jsonschema.validate(cfg, SCHEMAS[cfg["command"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    if (cfg["command"], cfg.get("task")) in _STOCHASTIC and "seed" not in cfg:
        raise ConfigError(f"{cfg['command']}/{cfg['task']} is stochastic and needs a seed")


# serialization


def plain(obj):
    """JSON-ready copy: numpy scalars and arrays become Python values, non-finite floats strings."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj if obj is None or isinstance(obj, str) else str(obj)


def dump_json(obj) -> str:
    # float repr is the shortest round-trip decimal, so output is byte-stable
    return json.dumps(plain(obj), indent=2, sort_keys=True) + "\n"


def csv_text(header, rows) -> str:
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(int(v)) if isinstance(v, (np.integer, bool, np.bool_)) else str(v)
    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# command runners; each returns (result dict, {filename: text}, ok flag)


def _load_measure(spec, base: Path):
    if isinstance(spec, str):
        spec = json.loads((base / spec).read_text())
    return otcore.DiscreteMeasure(spec["points"], spec["weights"])


def _vec(text: str) -> list:
    return [float(v) for v in text.split(",")]


def run_distance(cfg, base):
    x, y = np.asarray(cfg["x"], dtype=float), np.asarray(cfg["y"], dtype=float)
    d = geodesy.cc_distance(x, y)
    return {"d": d}, {}, True


def run_geodesic(cfg, base):
    if cfg.get("task") == "mcp":
        rep = geodesy.mcp_ratio(cfg["center"], cfg["radius"], cfg["y"], cfg["t"],
                                samples=cfg.get("samples", 100_000), seed=cfg["seed"])
        return rep.to_dict(), {}, True
    res = geodesy.solve_geodesic(cfg["x"], cfg["y"])
    ts = np.asarray(cfg["t"]) if "t" in cfg else np.linspace(0, 1, cfg.get("samples", 11))
    pts = geodesy.geodesic_point(res.params, ts)
    names = ["t"] + [f"q{k}" for k in range(pts.shape[-1])]
    rows = [[t, *p] for t, p in zip(ts.tolist(), pts.tolist())]
    out = {"params": res.params.to_dict(), "unique": bool(res.unique), "length": res.params.length}
    return out, {"geodesic.csv": csv_text(names, rows)}, True


def run_transport(cfg, base):
    mu, nu = _load_measure(cfg["mu"], base), _load_measure(cfg["nu"], base)
    kind = cfg.get("cost", "cc")
    res = otcore.solve_kantorovich(mu, nu, kind=kind)
    plan = res.plan
    out = {"value": res.value, "dual_value": res.dual_value, "duality_gap": res.duality_gap,
           "marginal_error": plan.marginal_error(), "gamma": plan.gamma,
           "u_source": res.potential.u_source, "u_target": res.potential.u_target}
    if cfg.get("secondary"):
        sec = otcore.solve_secondary(mu, nu)
        out["secondary_gamma"] = sec.gamma
        out["secondary_value"] = sec.cost(otcore.cost_matrix(mu, nu, "cc_squared"))
        plan = sec
    rows = [[int(i), int(j), plan.gamma[i, j], res.cost[i, j]] for i, j in plan.support]
    return out, {"plan.csv": csv_text(["i", "j", "mass", "cost"], rows)}, True


def run_density(cfg, base):
    task = cfg["task"]
    if task == "interpolation_bound":
        m = cfg["mu"]
        mu = density.ball_field(m["ball"]["center"], m["ball"]["radius"], m["lo"], m["hi"], m["shape"])
        nu = _load_measure(cfg["nu"], base)
        reps = [density.interpolation_bound_check(mu, nu, t, cfg["p"], samples=cfg.get("samples", 100_000),
                                                  seed=cfg["seed"], side=cfg.get("side", "source"))
                for t in cfg["t"]]
        return {"reports": [r.to_dict() for r in reps]}, {}, True
    if task == "transport_density":
        mu, nu = _load_measure(cfg["mu"], base), _load_measure(cfg["nu"], base)
        res = otcore.solve_kantorovich(mu, nu)
        g = cfg["grid"]
        field = density.transport_density(res.plan, density.GridField(g["lo"], g["hi"], g["shape"]),
                                          steps=cfg.get("steps", 1024))
        out = {"grid": field.header(), "mass": field.mass(), "transport_cost": res.value,
               "mass_identity_error": abs(field.mass() - res.value)}
        return out, {"density.csv": field.to_csv()}, True
    reps = [density.s0_lower_bound_sweep(n) for n in cfg.get("n_values", [1, 2, 3])]
    out = {"sweeps": [{"n": r.n, "threshold": str(r.threshold), "checked": r.checked,
                       "violations": len(r.violations), "equality_points": len(r.equality),
                       "equality_only_at_p2_one": r.equality_only_at_p2_one} for r in reps]}
    return out, {}, all(r.ok for r in reps)


def _node_measure(spec, lat, base):
    if isinstance(spec, dict) and "nodes" in spec:
        return lattice.NodeMeasure(np.asarray(spec["nodes"], dtype=np.int64), np.asarray(spec["mass"], dtype=float))
    if lat is None:
        raise ConfigError("point marginals need a lattice")
    return lattice.snap_measure(lat, _load_measure(spec, base))


def run_wardrop(cfg, base):
    if "lattice" in cfg:
        L = cfg["lattice"]
        lat = lattice.build_lattice(L["lo"], L["hi"], L["h"])
        net, where = lat.network, lat
    else:
        lat, net = None, graph.two_link_network()
        where = net
    src, snk = _node_measure(cfg["sources"], lat, base), _node_measure(cfg["sinks"], lat, base)
    try:
        cf = wardrop.CongestionFunction(**cfg.get("congestion", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"congestion: {exc}") from None
    mode = cfg.get("mode", "long_term")
    ta = wardrop.solve_wardrop(where, cf, src, snk, mode=mode, gamma_bar=cfg.get("gamma_bar"),
                               tol=cfg.get("tol", 1e-6), max_iter=cfg.get("max_iter", 5000),
                               seed=cfg.get("seed"))
    cert = wardrop.equilibrium_certificate(where, cf, ta, mode=mode, gamma_bar=cfg.get("gamma_bar"))
    out = {"summary": ta.summary(), "certificate": cert.to_dict(),
           "sources": {"nodes": src.nodes, "mass": src.mass}, "sinks": {"nodes": snk.nodes, "mass": snk.mass}}
    rows = [[int(net.tail[e]), int(net.head[e]), ta.edge_flows[e]] for e in range(net.n_edges)]
    files = {"edge_flows.csv": csv_text(["node_from", "node_to", "flow"], rows)}
    if "grid" in cfg and lat is not None:
        g = cfg["grid"]
        field = wardrop.intensity_to_field(lat, ta, density.GridField(g["lo"], g["hi"], g["shape"]))
        files["intensity.csv"] = field.to_csv()
        out["intensity_grid"] = field.header()
    return out, files, bool(ta.converged)


def run_validate(cfg, base):
    results = validation.run_suite(cfg.get("suite", "all"))
    out = {"suite": cfg.get("suite", "all"), "passed": all(r.passed for r in results),
           "checks": [r.to_dict() for r in results]}
    rows = [[r.suite, r.name, r.passed, r.measured, r.tolerance] for r in results]
    return out, {"checks.csv": csv_text(["suite", "check", "passed", "measured", "tolerance"], rows)}, out["passed"]


RUNNERS = {"distance": run_distance, "geodesic": run_geodesic, "transport": run_transport,
           "density": run_density, "wardrop": run_wardrop, "validate": run_validate}


def versions() -> dict:
    out = {"hcot": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "numba", "jsonschema"):
        out[dist] = metadata.version(dist)
    return out


def run(cfg: dict, out_dir, base: Path | None = None) -> int:
    """Validate ``cfg``, execute it and write artifacts plus a manifest into ``out_dir``."""
    out_dir = Path(out_dir)
    base = base or Path.cwd()
    manifest = {"command": cfg.get("command"), "config": cfg, "seed": cfg.get("seed"),
                "versions": versions(), "outputs": {}}
    try:
        validate_config(cfg)
        result, files, ok = RUNNERS[cfg["command"]](cfg, base)
        code = EXIT_OK if ok else EXIT_NUMERIC
        manifest["status"] = "ok" if ok else "check_failed"
    except ConfigError as exc:
        code, result, files = EXIT_CONFIG, None, {}
        manifest.update(status="invalid_config", diagnostics=str(exc))
        log.error("invalid configuration: %s", exc)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        code, result, files = EXIT_NUMERIC, None, {}
        manifest.update(status="numerical_failure", diagnostics=f"{type(exc).__name__}: {exc}")
        log.error("numerical failure: %s", exc)
    out_dir.mkdir(parents=True, exist_ok=True)
    if result is not None:
        files = {"result.json": dump_json(result), **files}
    for name, text in files.items():
        (out_dir / name).write_text(text)
        manifest["outputs"][name] = hashlib.sha256(text.encode()).hexdigest()
    manifest["config_sha256"] = hashlib.sha256(dump_json(cfg).encode()).hexdigest()
    manifest["exit_code"] = code
    (out_dir / "manifest.json").write_text(dump_json(manifest))
    if result is not None:
        sys.stdout.write(json.dumps(plain(result)) + "\n")
    return code


def bundled_scenario(name: str) -> dict:
    """Load one of the JSON scenarios shipped with the package."""
    text = resources.files("hcot").joinpath("scenarios", f"{name}.json").read_text()
    return json.loads(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hcot", description="Heisenberg-group transport scenarios.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="scenario JSON file, or bundled:<name>")
    ap.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./hcot_out)")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for shortest-path batches")
    ap.add_argument("--suite", help="validate: group, geodesy, ot, density, congestion or all")
    ap.add_argument("--x", type=_vec, help="distance/geodesic: comma-separated start point")
    ap.add_argument("--y", type=_vec, help="distance/geodesic: comma-separated end point")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    base = Path.cwd()
    cfg: dict = {}
    try:
        if args.config:
            if args.config.startswith("bundled:"):
                cfg = bundled_scenario(args.config.split(":", 1)[1])
            else:
                path = Path(args.config)
                cfg = json.loads(path.read_text())
                base = path.parent
    except (OSError, json.JSONDecodeError) as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_CONFIG
    if not isinstance(cfg, dict):
        log.error("config must be a JSON object")
        return EXIT_CONFIG
    if cfg.get("command", args.command) != args.command:
        log.error("config is for %r, not %r", cfg.get("command"), args.command)
        return EXIT_CONFIG
    cfg["command"] = args.command
    for key in ("x", "y", "suite", "seed"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    if args.threads < 1:
        log.error("--threads must be positive")
        return EXIT_CONFIG
    graph.set_workers(args.threads)
    out = args.out or cfg.get("out") or os.environ.get(OUT_ENV) or "hcot_out"
    return run(cfg, out, base)


if __name__ == "__main__":
    sys.exit(main())
