"""JSON serialization of complexes, maps, relations and reports; OFF export.

Floats are written with Python's shortest round-trip repr, so reading back a
written artifact reproduces it bit for bit.  Non-finite floats, which JSON
lacks, are written as the strings ``"nan"``, ``"inf"`` and ``"-inf"``.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .complex import Lineage, SimplicialComplex
from .functions import REGISTRY, SmoothFunction
from .maps import AffinePiece, BlendPiece, ComposedPiece, PiecewiseMap, SmoothPiece

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# plain values


def jsonable(obj: Any) -> Any:
    """Convert numpy values and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def to_float(x) -> float:
    if x is None:
        return math.nan
    return float(x)  # float("inf") and float("nan") parse the string forms


def dumps(data: Any) -> str:
    return json.dumps(jsonable(data), indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    """Write through a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, data: Any) -> None:
    write_text(path, dumps(data))


def read_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# complexes


def _key_to_json(key) -> list:
    return [[vid, str(c)] for vid, c in key]


def _key_from_json(data) -> tuple:
    return tuple((int(vid), Fraction(c)) for vid, c in data)


def _is_root_keyed(k: SimplicialComplex) -> bool:
    return all(key == ((i, Fraction(1)),) for i, key in enumerate(k.keys))


def complex_to_json(k: SimplicialComplex) -> dict:
    out = {"ambient_dim": k.ambient_dim, "vertices": k.coords.tolist(),
           "simplices": [list(c) for c in k.cells]}
    if not _is_root_keyed(k):
        out["keys"] = [_key_to_json(key) for key in k.keys]
    if k.lineage is not None:
        out["lineage"] = [{"parent": list(ln.parent), "level": ln.level, "kind": ln.kind}
                          for ln in k.lineage]
    if k.root is not None:
        out["root"] = complex_to_json(k.root)
    return out


def complex_from_json(data: dict) -> SimplicialComplex:
    try:
        n = int(data["ambient_dim"])
        coords = np.array(data["vertices"], float).reshape(-1, n)
        simplices = [[int(v) for v in s] for s in data["simplices"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed complex: {exc}") from None
    if any(len(s) == 0 for s in simplices):
        raise FormatError("empty simplex in complex")
    extra = {"keys", "lineage", "root"} & set(data)
    if not extra:
        k = SimplicialComplex.from_simplices(coords, simplices)
        given = [tuple(s) for s in simplices]
        if sorted(given) == list(k.cells):
            # already a list of maximal simplices: keep the written order
            k = SimplicialComplex(k.coords, tuple(given))
        return k
    keys = tuple(_key_from_json(key) for key in data["keys"]) if "keys" in data else None
    lineage = None
    if "lineage" in data:
        lineage = tuple(Lineage(tuple(int(v) for v in ln["parent"]), int(ln["level"]),
                                ln.get("kind", "crystalline")) for ln in data["lineage"])
    root = complex_from_json(data["root"]) if "root" in data else None
    return SimplicialComplex(coords, tuple(tuple(s) for s in simplices), keys, lineage, root)


def complexes_equal(a: SimplicialComplex, b: SimplicialComplex) -> bool:
    if a.coords.shape != b.coords.shape or not np.array_equal(a.coords, b.coords):
        return False
    if a.cells != b.cells or a.keys != b.keys:
        return False
    la = None if a.lineage is None else [(x.parent, x.level, x.kind) for x in a.lineage]
    lb = None if b.lineage is None else [(x.parent, x.level, x.kind) for x in b.lineage]
    if la != lb:
        return False
    if (a.root is None) != (b.root is None):
        return False
    return a.root is None or complexes_equal(a.root, b.root)


# ---------------------------------------------------------------------------
# pieces and maps


def _function_to_json(fn: SmoothFunction) -> dict:
    return {"name": fn.name, "params": jsonable(list(fn.params)), "in_dim": fn.in_dim}


def _function_from_json(data: dict) -> SmoothFunction:
    return REGISTRY.create(data["name"], data.get("params", []), int(data["in_dim"]))


def piece_to_json(piece) -> dict | None:
    if piece is None:
        return None
    if isinstance(piece, AffinePiece):
        return {"kind": "affine", "origin": piece.origin, "value": piece.value0, "slope": piece.slope}
    if isinstance(piece, SmoothPiece):
        return {"kind": "smooth", "function": _function_to_json(piece.fn)}
    if isinstance(piece, BlendPiece):
        return {"kind": "blend", "grad": piece.grad, "offset": piece.offset,
                "first": piece_to_json(piece.first), "second": piece_to_json(piece.second)}
    if isinstance(piece, ComposedPiece):
        return {"kind": "composed", "outer": _function_to_json(piece.outer),
                "inner": piece_to_json(piece.inner)}
    raise FormatError(f"cannot serialize piece of type {type(piece).__name__}")


def piece_from_json(data: dict | None):
    if data is None:
        return None
    kind = data.get("kind")
    if kind == "affine":
        return AffinePiece(np.array(data["origin"], float), np.array(data["value"], float),
                           np.atleast_2d(np.array(data["slope"], float)))
    if kind == "smooth":
        return SmoothPiece(_function_from_json(data["function"]))
    if kind == "blend":
        return BlendPiece(np.array(data["grad"], float), float(data["offset"]),
                          piece_from_json(data["first"]), piece_from_json(data["second"]))
    if kind == "composed":
        return ComposedPiece(_function_from_json(data["outer"]), piece_from_json(data["inner"]))
    raise FormatError(f"unknown piece kind {kind!r}")


def map_to_json(f: PiecewiseMap) -> dict:
    """PL maps store vertex values; other maps add one entry per cell.

    A map whose cells all share one registry function is written in the
    compact form ``{"function": {...}}``.
    """
    out: dict = {"complex": complex_to_json(f.complex), "target_dim": f.target_dim}
    if f.pieces is not None:
        first = f.pieces[0]
        if (isinstance(first, SmoothPiece) and f.values is None
                and all(p is first for p in f.pieces)):
            out["function"] = _function_to_json(first.fn)
            return out
        out["pieces"] = [piece_to_json(p) for p in f.pieces]
    if f.values is not None:
        out["values"] = f.values.tolist()
    return out


def map_from_json(data: dict) -> PiecewiseMap:
    if "complex" not in data:
        raise FormatError("map JSON needs a 'complex' entry")
    k = complex_from_json(data["complex"])
    if "function" in data:
        fn = _function_from_json({"in_dim": k.ambient_dim, **data["function"]})
        if "target_dim" in data and int(data["target_dim"]) != fn.out_dim:
            raise FormatError("target_dim does not match the function")
        return PiecewiseMap.smooth(k, fn)
    values = data.get("values")
    if values is not None:
        values = np.array(values, float)
        if values.ndim == 1:
            values = values[:, None]
        if len(values) != k.n_vertices:
            raise FormatError(f"{len(values)} value rows for {k.n_vertices} vertices")
    n = int(data.get("target_dim", values.shape[1] if values is not None else 0))
    pieces = data.get("pieces")
    if pieces is not None:
        pieces = tuple(piece_from_json(p) for p in pieces)
    return PiecewiseMap(k, n, values, pieces)


def maps_equal(f: PiecewiseMap, g: PiecewiseMap) -> bool:
    if f.target_dim != g.target_dim or not complexes_equal(f.complex, g.complex):
        return False
    if (f.values is None) != (g.values is None):
        return False
    if f.values is not None and not np.array_equal(f.values, g.values):
        return False
    pf = None if f.pieces is None else [piece_to_json(p) for p in f.pieces]
    pg = None if g.pieces is None else [piece_to_json(p) for p in g.pieces]
    return jsonable(pf) == jsonable(pg)


# ---------------------------------------------------------------------------
# reports


def report_from_json(data: dict):
    from .jiggling import JigglingReport

    margins = np.array([to_float(x) for x in data["margins"]], float)
    return JigglingReport(
        epsilon=to_float(data["epsilon"]), level=int(data["level"]), colors=int(data["colors"]),
        margins=margins, c0_distance=to_float(data["c0_distance"]),
        c1_distance=to_float(data["c1_distance"]), retries=list(data.get("retries", [])),
        restarts=int(data.get("restarts", 0)), eps0=to_float(data.get("eps0", 0.0)),
        perturbed_cells=int(data.get("perturbed_cells", 0)),
        budget_use=to_float(data.get("budget_use", 0.0)), fixed_hash=data.get("fixed_hash"),
        notes=list(data.get("notes", [])))


# ---------------------------------------------------------------------------
# OFF export


def to_off(k: SimplicialComplex, coords: np.ndarray | None = None) -> str:
    """OFF text of the complex; edges and tetrahedra are written as their faces.

    Vertices are padded with zeros to three coordinates.  Tetrahedra
    contribute their four triangles, edges are written as two-vertex faces.
    """
    pts = k.coords if coords is None else np.asarray(coords, float)
    if pts.shape[1] > 3:
        raise FormatError("OFF export supports ambient dimension at most 3")
    pts = np.hstack([pts, np.zeros((len(pts), 3 - pts.shape[1]))])
    polys: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    for c in k.cells:
        if len(c) <= 3:
            cand = [c]
        else:
            cand = [tuple(v for j, v in enumerate(c) if j != drop) for drop in range(len(c))]
        for f in cand:
            if f not in seen:
                seen.add(f)
                polys.append(f)
    lines = ["OFF", f"{len(pts)} {len(polys)} 0"]
    lines += [" ".join(repr(float(x)) for x in p) for p in pts]
    lines += [" ".join(str(v) for v in (len(f),) + f) for f in polys]
    return "\n".join(lines) + "\n"
