"""Built-in demo scenarios with embedded fixtures.

``thurston2d``: a square grid triangulation moved into general position with
respect to the horizontal line field, so that no edge ends up horizontal.

``contact``: the 1-form dz on the unit cube, which is not contact, jiggled
into a piecewise linear contact form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .complex import SimplicialComplex, signed_volume
from .jiggling import JigglingConfig, JigglingReport, cell_margins, jiggle_linear, jiggle_triangulation
from .io import complex_from_json
from .maps import PiecewiseMap, linearize
from .relations import Distribution, contact3d_relation, orthonormal_frame

ANGLE_TOL = 1e-6

# unit cube cut into the six tetrahedra around its main diagonal
CUBE = {
    "ambient_dim": 3,
    "vertices": [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1],
                 [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]],
    "simplices": [[0, 1, 3, 7], [0, 1, 5, 7], [0, 2, 3, 7],
                  [0, 2, 6, 7], [0, 4, 5, 7], [0, 4, 6, 7]],
}

DZ = [0.0, 0.0, 1.0]  # coefficients of dz
HORIZONTAL = {"kind": "constant", "vectors": [[1.0, 0.0]]}


def square_grid(n: int = 4, size: float = 1.0) -> dict:
    """n x n squares, each cut along its anti-diagonal, as complex JSON."""
    h = size / n
    verts = [[i * h, j * h] for j in range(n + 1) for i in range(n + 1)]
    cells = []
    for j in range(n):
        for i in range(n):
            a, b = j * (n + 1) + i, j * (n + 1) + i + 1
            c, d = a + n + 1, b + n + 1
            cells += [[a, b, c], [b, c, d]]
    return {"ambient_dim": 2, "vertices": verts, "simplices": sorted(cells)}


def edge_angles(k: SimplicialComplex, xi: Distribution, coords: np.ndarray | None = None
                ) -> dict[tuple[int, int], float]:
    """Angle between every edge and the plane of a constant distribution."""
    pts = k.coords if coords is None else coords
    basis = orthonormal_frame(xi.basis) if xi.rank else np.zeros((xi.dim, 0))
    out = {}
    for cell in k.cells:
        for a in cell:
            for b in cell:
                if a < b and (a, b) not in out:
                    d = pts[b] - pts[a]
                    d = d / np.linalg.norm(d)
                    inside = np.linalg.norm(basis.T @ d)
                    out[(a, b)] = float(np.arctan2(np.linalg.norm(d - basis @ (basis.T @ d)), inside))
    return out


@dataclass
class DemoResult:
    name: str
    ok: bool
    summary: dict
    output: object  # SimplicialComplex or PiecewiseMap
    report: JigglingReport
    failures: list = field(default_factory=list)


def thurston2d(epsilon: float = 0.05, n: int = 4, level: int | str = 0,
               lmax: int | None = None) -> DemoResult:
    k = complex_from_json(square_grid(n))
    xi = Distribution.constant(HORIZONTAL["vectors"])
    cfg = JigglingConfig(epsilon, level=level) if lmax is None else JigglingConfig(epsilon, level=level, lmax=lmax)
    t, report = jiggle_triangulation(k, xi, cfg)
    fine = linearize(PiecewiseMap.pl(k, k.coords), report.level).complex
    angles = edge_angles(t, xi)
    flat = sorted(e for e, a in angles.items() if a <= ANGLE_TOL)
    before = np.sign([signed_volume(fine.points(c)) for c in fine.cells])
    after = np.sign([signed_volume(t.points(c)) for c in t.cells])
    flipped = [c for c, u, v in zip(t.cells, before, after) if u != v]
    disp = float(np.linalg.norm(t.coords - fine.coords, axis=1).max())
    ok = not flat and not flipped and disp < epsilon
    summary = {"triangles": len(t.cells), "min_edge_angle": min(angles.values()),
               "max_displacement": disp, "orientation_kept": not flipped,
               "horizontal_edges": [list(e) for e in flat]}
    return DemoResult("thurston2d", ok, summary, t, report, flat + flipped)


def contact(epsilon: float = 0.1, level: int | str = "auto", lmax: int | None = None) -> DemoResult:
    k = complex_from_json(CUBE)
    s = PiecewiseMap.pl(k, np.tile(DZ, (k.n_vertices, 1)))
    rel = contact3d_relation()
    cfg = JigglingConfig(epsilon, level=level) if lmax is None else JigglingConfig(epsilon, level=level, lmax=lmax)
    out, report = jiggle_linear(s, rel, cfg)
    margins = cell_margins(out, rel)
    bad = [out.complex.cells[i] for i in np.flatnonzero(margins <= 0)]
    ok = not bad and report.c1_distance < epsilon
    summary = {"cells": len(out.complex.cells), "min_margin": float(margins.min()),
               "c1_distance": report.c1_distance, "level": report.level}
    return DemoResult("contact", ok, summary, out, report, bad)


DEMOS = {"thurston2d": thurston2d, "contact": contact}
