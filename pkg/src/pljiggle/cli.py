"""Command line front end.

Every invocation is turned into a RunConfig dictionary, validated against
``RUN_CONFIG_SCHEMA`` and executed by :func:`run`.  A RunConfig can also be
given directly as a JSON file with ``--config``.

Exit status: 0 on success, 1 on usage or input errors, 2 when a map fails
verification or jiggling cannot certify its output.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from . import __version__
from .complex import coloring_violations, greedy_color, lambda_coeff, rmax, rmin
from .demos import DEMOS
from .io import (
    FormatError, complex_from_json, complex_to_json, map_from_json, map_to_json,
    read_json, to_off, write_json, write_text,
)
from .jiggling import (
    JigglingConfig, JigglingError, cell_margins, jiggle_linear, jiggle_relative, jiggle_triangulation,
)
from .maps import PiecewiseMap, linearize
from .regions import region_from_json
from .relations import (
    RelationError, distribution_from_json, relation_from_json, verify_general_position,
)
from .subdivision import LMAX_DEFAULT, color_bound_crystalline, crystalline_subdivide, generalized_subdivide

CERT_ENV = "PLJIGGLE_CERTIFICATION"
EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2

COMMANDS = ["subdivide", "color", "metrics", "linearize", "jiggle", "jiggle-triangulation",
            "verify", "demo"]

_XI = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["vectors"],
         "properties": {"kind": {"const": "constant"},
                        "vectors": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}}},
        {"type": "object", "additionalProperties": False, "required": ["kind", "name", "rank"],
         "properties": {"kind": {"const": "registry"}, "name": {"type": "string"},
                        "params": {"type": "array"}, "rank": {"type": "integer", "minimum": 0},
                        "dim": {"type": "integer", "minimum": 1}, "L_xi": {"type": "number", "minimum": 0}}},
    ]
}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": COMMANDS},
        "input": {"type": "string"},
        "output": {"type": "string"},
        "report": {"type": "string"},
        "emit_off": {"type": "string"},
        "level": {"type": "integer", "minimum": 0},
        "levels": {"type": "integer", "minimum": 0},
        "cone_off": {"type": "string"},
        "l0": {"type": "integer", "minimum": 0},
        "l1": {"type": "integer", "minimum": 0},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "relative": {"type": "string"},
        "demo": {"enum": sorted(DEMOS)},
        "seed": {"type": "integer"},
        "lmax": {"type": "integer", "minimum": 0},
        "relation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["relation"],
            "properties": {
                "relation": {"enum": ["transverse", "maxrank", "contact3d", "verygenpos"]},
                "xi": _XI,
                "certification": {"enum": ["sampled", "lipschitz"]},
                "L_xi": {"type": "number", "minimum": 0},
            },
        },
        "xi": {"oneOf": [_XI, {"type": "array", "items": _XI, "minItems": 1}]},
        "jiggling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "level": {"oneOf": [{"const": "auto"}, {"type": "integer", "minimum": 0}]},
                "eps_shrink": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "max_retries": {"type": "integer", "minimum": 0},
                "certification": {"enum": ["sampled", "lipschitz"]},
                "budget_rule": {"enum": ["retention", "displacement"]},
                "max_cells": {"type": "integer", "minimum": 1},
            },
        },
    },
}

# inputs each command needs
_REQUIRED = {
    "subdivide": ["input"], "color": ["input"], "metrics": ["input"], "linearize": ["input", "level"],
    "jiggle": ["input", "relation"], "jiggle-triangulation": ["input", "xi"],
    "verify": ["input", "relation"], "demo": ["demo"],
}


class UsageError(ValueError):
    pass


def validate_config(config: dict) -> None:
    try:
        jsonschema.validate(config, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"invalid run config at {where}: {exc.message}") from None
    missing = [k for k in _REQUIRED[config["command"]] if k not in config]
    if missing:
        raise UsageError(f"{config['command']} needs {', '.join(missing)}")
    if "cone_off" in config and not {"l0", "l1", "delta"} <= set(config):
        raise UsageError("cone_off needs l0, l1 and delta")


def default_certification() -> str:
    mode = os.environ.get(CERT_ENV, "sampled")
    if mode not in ("sampled", "lipschitz"):
        raise UsageError(f"{CERT_ENV} must be 'sampled' or 'lipschitz', got {mode!r}")
    return mode


# ---------------------------------------------------------------------------
# helpers


def _emit(config: dict, key: str, data) -> None:
    if key in config:
        write_json(config[key], data)


def _jiggling_config(config: dict, relation_block: dict | None = None) -> JigglingConfig:
    block = dict(config.get("jiggling", {}))
    block.setdefault("epsilon", 0.1)
    cert = (relation_block or {}).get("certification")
    block.setdefault("certification", cert or default_certification())
    if "lmax" in config:
        block["lmax"] = config["lmax"]
    if "seed" in config:
        block["seed"] = config["seed"]
    return JigglingConfig(**block)


def _relation(block: dict, m: int, n: int, k):
    data = dict(block)
    xi = data.get("xi")
    if xi is not None and xi.get("kind") == "registry" and "L_xi" in data:
        data["xi"] = {**xi, "L_xi": data["L_xi"]}
    return relation_from_json(data, m, n, k)


def _load_map(path: str) -> PiecewiseMap:
    data = read_json(path)
    if "complex" in data:
        return map_from_json(data)
    k = complex_from_json(data)  # a bare complex stands for its inclusion
    return PiecewiseMap.pl(k, k.coords)


def _say(text: str) -> None:
    print(text)


# ---------------------------------------------------------------------------
# commands


def cmd_subdivide(config: dict) -> int:
    k = complex_from_json(read_json(config["input"]))
    if "cone_off" in config:
        region = region_from_json(read_json(config["cone_off"]))
        gs = generalized_subdivide(k, region, config["delta"], config["l0"], config["l1"])
        out = gs.complex
        _say(f"cells {len(out.cells)} color_bound {gs.color_bound}")
    else:
        out = crystalline_subdivide(k, config.get("level", 1))
        _say(f"cells {len(out.cells)}")
    _emit(config, "output", complex_to_json(out))
    if "emit_off" in config:
        write_text(config["emit_off"], to_off(out))
    return EXIT_OK


def cmd_color(config: dict) -> int:
    k = complex_from_json(read_json(config["input"]))
    if "level" in config:
        k = crystalline_subdivide(k, config["level"])
    coloring = greedy_color(k)
    bad = coloring_violations(k, coloring)
    bound = color_bound_crystalline(k)
    data = {"n_colors": coloring.n_colors, "bound": bound,
            "colors": [coloring.colors[c] for c in k.cells],
            "violations": [[list(a), list(b)] for a, b in bad]}
    _emit(config, "output", data)
    _say(f"colors {coloring.n_colors} bound {bound} violations {len(bad)}")
    return EXIT_FAIL if bad else EXIT_OK


def metrics_table(k, levels: int) -> list[dict]:
    rows = []
    for level in range(levels + 1):
        kl = crystalline_subdivide(k, level)
        pts = [kl.points(c) for c in kl.cells]
        r_max = max(rmax(p) for p in pts)
        r_min = min(rmin(p) for p in pts)
        lam = max(lambda_coeff(p) for p in pts)
        row = {"level": level, "cells": len(kl.cells), "rmax": r_max, "rmin": r_min, "lambda": lam,
               "rmax_lambda": max(rmax(p) * lambda_coeff(p) for p in pts)}
        if rows:
            row["rmax_ratio"] = r_max / rows[-1]["rmax"]
            row["rmin_ratio"] = r_min / rows[-1]["rmin"]
        rows.append(row)
    return rows


def cmd_metrics(config: dict) -> int:
    k = complex_from_json(read_json(config["input"]))
    rows = metrics_table(k, config.get("levels", 3))
    _say(f"{'level':>5} {'cells':>7} {'rmax':>12} {'rmin':>12} {'lambda':>12} {'rmax ratio':>10}")
    for r in rows:
        ratio = f"{r['rmax_ratio']:10.6f}" if "rmax_ratio" in r else f"{'':>10}"
        _say(f"{r['level']:5d} {r['cells']:7d} {r['rmax']:12.6g} {r['rmin']:12.6g} {r['lambda']:12.6g} {ratio}")
    _emit(config, "output", {"rows": rows})
    return EXIT_OK


def cmd_linearize(config: dict) -> int:
    s = _load_map(config["input"])
    out = linearize(s, config["level"])
    _emit(config, "output", map_to_json(out))
    _say(f"cells {len(out.complex.cells)}")
    return EXIT_OK


def _cells(k, data, name: str) -> list:
    cells = [tuple(sorted(int(v) for v in c)) for c in data.get(name, [])]
    for c in cells:
        if c not in k.top_index:
            raise UsageError(f"{name}: {list(c)} is not a top simplex of the input complex")
    return cells


def cmd_jiggle(config: dict) -> int:
    s = _load_map(config["input"])
    k = s.complex
    rel = _relation(config["relation"], k.dim, s.target_dim, k)
    cfg = _jiggling_config(config, config["relation"])
    if "relative" in config:
        data = read_json(config["relative"])
        unknown = set(data) - {"solution", "frozen", "u_solution", "u_frozen"}
        if unknown:
            raise UsageError(f"relative spec: unknown keys {sorted(unknown)}")
        regions = {key: region_from_json(data[key]) if key in data else None
                   for key in ("u_solution", "u_frozen")}
        out, report = jiggle_relative(s, rel, _cells(k, data, "solution"), _cells(k, data, "frozen"),
                                      regions["u_solution"], regions["u_frozen"], cfg)
    else:
        out, report = jiggle_linear(s, rel, cfg)
    _emit(config, "output", map_to_json(out))
    _emit(config, "report", report.to_json())
    _say(f"ok {report.ok} level {report.level} colors {report.colors} "
         f"min_margin {report.min_margin:.6g} c1_distance {report.c1_distance:.6g}")
    return EXIT_OK if report.ok else EXIT_FAIL


def _xis(config: dict) -> list:
    xi = config["xi"]
    return [distribution_from_json(x) for x in (xi if isinstance(xi, list) else [xi])]


def cmd_jiggle_triangulation(config: dict) -> int:
    k = complex_from_json(read_json(config["input"]))
    cfg = _jiggling_config(config)
    xis = _xis(config)
    t, report = jiggle_triangulation(k, xis if len(xis) > 1 else xis[0], cfg)
    _emit(config, "output", complex_to_json(t))
    _emit(config, "report", report.to_json())
    _say(f"ok {report.ok} level {report.level} triangles {len(t.cells)}")
    return EXIT_OK if report.ok else EXIT_FAIL


def verify_map(s: PiecewiseMap, block: dict, certification: str) -> dict:
    """Margins of s for the relation block, with the offending cells."""
    k = s.complex
    if block["relation"] == "verygenpos":
        xi = distribution_from_json(block.get("xi", {}), s.target_dim)
        gp = verify_general_position(s, xi)
        return {"ok": gp.ok, "relation": "verygenpos", "min_margin": gp.min_margin,
                "failures": [{"cell": list(c), "face": list(f)} for c, f in gp.failures()]}
    rel = _relation(block, k.dim, s.target_dim, k)
    margins = cell_margins(s, rel, certification=certification)
    bad = np.flatnonzero(margins <= 0)
    return {"ok": not bad.size, "relation": block["relation"], "min_margin": float(margins.min()),
            "margins": margins, "failures": [{"cell": list(k.cells[i])} for i in bad]}


def cmd_verify(config: dict) -> int:
    s = _load_map(config["input"])
    cert = config["relation"].get("certification") or default_certification()
    result = verify_map(s, config["relation"], cert)
    _emit(config, "report", result)
    _say(f"ok {result['ok']} min_margin {result['min_margin']:.6g} failures {len(result['failures'])}")
    for f in result["failures"][:10]:
        _say(f"  fails on {json.dumps(f)}")
    return EXIT_OK if result["ok"] else EXIT_FAIL


def cmd_demo(config: dict) -> int:
    kwargs = {}
    if "jiggling" in config and "epsilon" in config["jiggling"]:
        kwargs["epsilon"] = config["jiggling"]["epsilon"]
    if "lmax" in config:
        kwargs["lmax"] = config["lmax"]
    result = DEMOS[config["demo"]](**kwargs)
    out = result.output
    _emit(config, "output", complex_to_json(out) if hasattr(out, "cells") else map_to_json(out))
    _emit(config, "report", {"demo": result.name, "ok": result.ok, "summary": result.summary,
                             "jiggling": result.report.to_json()})
    _say(f"{result.name}: {'ok' if result.ok else 'FAILED'} {json.dumps(result.summary, sort_keys=True)}")
    return EXIT_OK if result.ok else EXIT_FAIL


HANDLERS = {
    "subdivide": cmd_subdivide, "color": cmd_color, "metrics": cmd_metrics, "linearize": cmd_linearize,
    "jiggle": cmd_jiggle, "jiggle-triangulation": cmd_jiggle_triangulation, "verify": cmd_verify,
    "demo": cmd_demo,
}


def run(config: dict) -> int:
    """Validate and execute one RunConfig; returns the exit status."""
    try:
        validate_config(config)
        return HANDLERS[config["command"]](config)
    except JigglingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, FormatError, RelationError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


# ---------------------------------------------------------------------------
# argument parsing


def _json_arg(text: str):
    """Inline JSON or a path to a JSON file."""
    if Path(text).is_file():
        return read_json(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"{text!r} is neither a file nor inline JSON") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pljiggle", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="run a RunConfig JSON file instead of a subcommand")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="reserved; runs are deterministic")
    common.add_argument("--lmax", type=int, help=f"largest subdivision level tried (default {LMAX_DEFAULT})")
    sub = p.add_subparsers(dest="command")

    def command(name, help_text, inp=True):
        c = sub.add_parser(name, help=help_text, parents=[common])
        if inp:
            c.add_argument("input", help="input JSON")
        return c

    def jig_flags(c):
        c.add_argument("--epsilon", type=float, default=0.1)
        c.add_argument("--level", type=int, help="fixed subdivision level (default: automatic)")
        c.add_argument("--mode", choices=["sampled", "lipschitz"], help=f"certification (default ${CERT_ENV} or sampled)")
        c.add_argument("--budget-rule", choices=["retention", "displacement"])
        c.add_argument("--out")
        c.add_argument("--report")

    def rel_flags(c):
        c.add_argument("--relation", required=True, choices=["transverse", "maxrank", "contact3d", "verygenpos"])
        c.add_argument("--xi", type=_json_arg, help="distribution JSON (inline or file)")
        c.add_argument("--L-xi", dest="L_xi", type=float, help="Lipschitz constant of a registry distribution")

    c = command("subdivide", "crystalline or generalized crystalline subdivision")
    c.add_argument("--level", type=int, default=1)
    c.add_argument("--cone-off", help="region JSON: refine to --l1 away from it, keep --l0 on it")
    c.add_argument("--l0", type=int)
    c.add_argument("--l1", type=int)
    c.add_argument("--delta", type=float, default=1.0)
    c.add_argument("--out")
    c.add_argument("--emit-off")

    c = command("color", "greedy star coloring")
    c.add_argument("--level", type=int)
    c.add_argument("--out")

    c = command("metrics", "rmax, rmin and lambda per subdivision level")
    c.add_argument("--levels", type=int, default=3)
    c.add_argument("--out")

    c = command("linearize", "linearize a map on its level-l subdivision")
    c.add_argument("--level", type=int, required=True)
    c.add_argument("--out")

    c = command("jiggle", "jiggle a map into a PL solution")
    rel_flags(c)
    jig_flags(c)
    c.add_argument("--relative", help="JSON with solution/frozen cells and their regions")

    c = command("jiggle-triangulation", "move a triangulation into general position")
    c.add_argument("--xi", type=_json_arg, required=True, help="distribution JSON or a list of them")
    jig_flags(c)

    c = command("verify", "check a map (or a bare complex) against a relation")
    rel_flags(c)
    c.add_argument("--mode", choices=["sampled", "lipschitz"])
    c.add_argument("--report")

    c = command("demo", "built-in scenarios", inp=False)
    c.add_argument("demo", choices=sorted(DEMOS))
    c.add_argument("--epsilon", type=float)
    c.add_argument("--out")
    c.add_argument("--report")
    return p


def config_from_args(ns: argparse.Namespace) -> dict:
    cmd = ns.command
    cfg: dict = {"command": cmd}
    a = vars(ns)

    def copy(src, dst=None):
        if a.get(src) is not None:
            cfg[dst or src] = a[src]

    for name in ("input", "seed", "lmax", "relative", "demo", "report", "levels", "l0", "l1", "emit_off"):
        copy(name)
    copy("out", "output")
    if cmd == "subdivide":
        copy("level")
        if a.get("cone_off") is not None:
            cfg["cone_off"] = a["cone_off"]
            cfg["delta"] = a["delta"]
    elif cmd in ("color", "linearize"):
        copy("level")
    if cmd in ("jiggle", "verify"):
        block = {"relation": a["relation"]}
        if a.get("xi") is not None:
            block["xi"] = a["xi"]
        if a.get("L_xi") is not None:
            block["L_xi"] = a["L_xi"]
        if a.get("mode") is not None:
            block["certification"] = a["mode"]
        cfg["relation"] = block
    if cmd == "jiggle-triangulation":
        cfg["xi"] = a["xi"]
    if cmd in ("jiggle", "jiggle-triangulation", "demo"):
        jig = {}
        if a.get("epsilon") is not None:
            jig["epsilon"] = a["epsilon"]
        if cmd != "demo":
            if a.get("level") is not None:
                jig["level"] = a["level"]
            if a.get("mode") is not None:
                jig["certification"] = a["mode"]
            if a.get("budget_rule") is not None:
                jig["budget_rule"] = a["budget_rule"]
        if jig:
            cfg["jiggling"] = jig
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; map to 1
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if ns.config:
        if ns.command:
            print("error: --config replaces the subcommand", file=sys.stderr)
            return EXIT_USAGE
        try:
            config = read_json(ns.config)
        except (FormatError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        return run(config)
    if not ns.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    return run(config_from_args(ns))


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
