"""Jiggling: perturb a piecewise map color by color into a PL solution of an open relation.

The a-priori constants of the existence proof are replaced by an adaptive
loop with verification after every color.  Two rules protect the cells
certified by earlier colors:

* ``retention`` (default): each such cell keeps at least three quarters of
  its margin, the consequence of a displacement below a quarter of it;
* ``displacement``: each such cell moves, in jet distance, by less than a
  quarter of its margin divided by the relation's Lipschitz factor.  Step
  sizes are capped a priori, which makes them shrink geometrically with the
  number of colors; it is practical only for few colors.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .complex import (
    Coloring,
    Simplex,
    SimplicialComplex,
    greedy_color,
    rmax,
    signed_volume,
)
from .functions import SmoothFunction
from .maps import (
    AffinePiece,
    BlendPiece,
    ComposedPiece,
    PiecewiseMap,
    affine_from_vertices,
    barycentric_grid,
    c0_c1_distance,
    c1_distance_per_cell,
    join_parameter,
    linearize,
    transfer,
)
from .regions import Region
from .relations import (
    RANK_TOL,
    THETA,
    CellChart,
    Distribution,
    FiberPerturbError,
    Jet1,
    RelationOracle,
    cell_chart,
    linear_extension,
    verify_general_position,
    verygenpos_relation,
)
from .subdivision import LMAX_DEFAULT, InsufficientLevelError, crystalline_subdivide

MIN_STEP = 64 * RANK_TOL


class JigglingError(RuntimeError):
    pass


@dataclass
class JigglingConfig:
    epsilon: float
    level: int | str = "auto"
    eps_shrink: float = 0.5
    max_retries: int = 30
    certification: str = "sampled"
    seed: int = 0  # reserved, the sweeps are deterministic
    lmax: int = LMAX_DEFAULT
    budget_rule: str = "retention"
    max_cells: int = 50_000  # automatic level search stops before exceeding this

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.eps_shrink < 1:
            raise ValueError("eps_shrink must lie in (0, 1)")
        if self.certification not in ("sampled", "lipschitz"):
            raise ValueError("certification must be 'sampled' or 'lipschitz'")
        if self.level != "auto" and (not isinstance(self.level, int) or self.level < 0):
            raise ValueError("level must be 'auto' or a nonnegative integer")
        if self.budget_rule not in ("retention", "displacement"):
            raise ValueError("budget_rule must be 'retention' or 'displacement'")
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")
        if self.max_cells < 1:
            raise ValueError("max_cells must be positive")


@dataclass
class JigglingReport:
    epsilon: float
    level: int
    colors: int
    margins: np.ndarray  # per output cell, nan where no certificate is required
    c0_distance: float
    c1_distance: float
    retries: list = field(default_factory=list)
    restarts: int = 0
    eps0: float = 0.0
    perturbed_cells: int = 0
    budget_use: float = 0.0  # largest single-color displacement / budget over certified cells
    fixed_hash: str | None = None
    notes: list = field(default_factory=list)

    @property
    def certified(self) -> np.ndarray:
        return ~np.isnan(self.margins)

    @property
    def min_margin(self) -> float:
        m = self.margins[self.certified]
        return float(m.min()) if m.size else np.inf

    @property
    def ok(self) -> bool:
        return bool(self.min_margin > 0 and self.c1_distance < self.epsilon)

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "epsilon": self.epsilon,
            "level": self.level,
            "colors": self.colors,
            "min_margin": self.min_margin,
            "certified_cells": int(self.certified.sum()),
            "margins": [None if np.isnan(x) else float(x) for x in self.margins],
            "c0_distance": self.c0_distance,
            "c1_distance": self.c1_distance,
            "retries": list(self.retries),
            "restarts": self.restarts,
            "eps0": self.eps0,
            "perturbed_cells": self.perturbed_cells,
            "budget_use": self.budget_use,
            "fixed_hash": self.fixed_hash,
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# single simplex and single color


def _oracle(relation: RelationOracle, k: SimplicialComplex, cell: Simplex) -> RelationOracle:
    return relation.for_cell(k, cell)


def _anchor_jet(k: SimplicialComplex, cell: Simplex, values: np.ndarray, chart: CellChart) -> Jet1:
    pts = k.points(cell)
    a = min(cell)
    slope = chart.slope_to_chart(affine_from_vertices(pts, values[list(cell)]).slope)
    return Jet1(chart.to_chart(k.coords[a])[0], values[a], slope)


def slope_perturb_simplex(s: PiecewiseMap, cell: Simplex, relation: RelationOracle, eps: float
                          ) -> tuple[AffinePiece, float]:
    """Linear extension over the cell of the fibre perturbation of the jet at its lowest vertex."""
    k = s.complex
    cell = tuple(cell)
    i = k.top_index[cell]
    if s.piece_or_none(i) is not None:
        raise ValueError("slope_perturb_simplex needs a map that is affine on the cell")
    chart = cell_chart(k.points(cell))
    oracle = _oracle(relation, k, cell)
    out = oracle.fiber_perturb(_anchor_jet(k, cell, s.vertex_values, chart), eps)
    return linear_extension(out, chart), oracle.margin(out)


def _check_disjoint_stars(k: SimplicialComplex, cells: Sequence[Simplex]):
    seen: set[int] = set()
    for c in cells:
        verts = {v for j in k.cells_touching(c) for v in k.cells[j]}
        if verts & seen:
            raise ValueError(f"stars of same-color cells overlap at {c}")
        seen |= verts


def slope_perturb_color(s: PiecewiseMap, coloring: Coloring, color: int, relation: RelationOracle,
                        eps: float) -> PiecewiseMap:
    """Perturb every cell of one color; the neighbours follow through their shared vertices.

    For PL maps the join over the star of a cell is the PL map with the new
    values on the cell's vertices and the old ones elsewhere.
    """
    if not s.is_pl:
        raise ValueError("slope_perturb_color needs a PL map")
    cells = coloring.color_class(color)
    if not cells:
        return s
    k = s.complex
    _check_disjoint_stars(k, cells)
    values = np.array(s.vertex_values)
    for cell in cells:
        piece, _ = slope_perturb_simplex(s, cell, relation, eps)
        moved = [v for v in cell if v != min(cell)]
        values[moved] = piece.value(k.coords[moved])
    return s.with_values(values)


def cell_margins(f: PiecewiseMap, relation: RelationOracle, samples_per_edge: int = 3,
                 certification: str = "sampled") -> np.ndarray:
    """Sampled margin of f on every top cell, independent of how f was produced.

    Affine cells are sampled at their vertices and barycenter, other cells on
    a barycentric grid.  In "lipschitz" mode value-dependent relations lose
    lip * |slope| * rmax as in the engine.
    """
    k = f.complex
    grid = np.vstack([barycentric_grid(k.dim, samples_per_edge),
                      np.full((1, k.dim + 1), 1.0 / (k.dim + 1))])
    out = np.empty(len(k.cells))
    for i, cell in enumerate(k.cells):
        pts = k.points(cell)
        chart = cell_chart(pts)
        oracle = _oracle(relation, k, cell)
        piece = f.piece(i)
        x = np.vstack([pts, pts.mean(axis=0)]) if f.piece_or_none(i) is None else grid @ pts
        if f.piece_or_none(i) is None and not oracle.value_dependent:
            x = x[-1:]
        vals, slopes = piece.value(x), chart.slope_to_chart(piece.jacobian(x))
        jets = [Jet1(b, v, d) for b, v, d in zip(chart.to_chart(x), vals, slopes)]
        mu = min(oracle.margin(j) for j in jets)
        if certification == "lipschitz" and oracle.value_dependent and mu > 0:
            lip = max(oracle.lipschitz(j) for j in jets)
            norm = max(np.linalg.norm(d, 2) for d in slopes)
            mu = max(mu - lip * norm * rmax(pts), 0.0)
        out[i] = mu
    return out


# ---------------------------------------------------------------------------
# engine


class _ColorFailure(Exception):
    def __init__(self, message: str, color: int):
        super().__init__(message)
        self.color = color


@dataclass
class _Ring:
    grad: np.ndarray
    offset: float
    base: object  # piece


class _Engine:
    """Colour-by-colour perturbation of the PL part of a map on one complex.

    ``values`` hold the PL data; ``ring`` cells blend a fixed piece with the
    PL data; cells in ``process`` are perturbed; cells in ``initial`` are
    certified at entry; cells in ``certify`` must hold a certificate at the end.
    """

    def __init__(self, k: SimplicialComplex, values: np.ndarray, relation: RelationOracle,
                 cfg: JigglingConfig, process: np.ndarray, certify: np.ndarray,
                 initial: np.ndarray | None = None, ring: dict | None = None):
        self.k, self.cfg, self.relation = k, cfg, relation
        self.values = np.array(values, float)
        self.process, self.certify = process, certify
        self.initial = np.zeros(len(k.cells), bool) if initial is None else initial
        self.ring = ring or {}
        self.verts = k.cell_array
        c, mp1 = self.verts.shape
        self.m = mp1 - 1
        self.charts: list[CellChart | None] = [None] * c
        self.oracles: list[RelationOracle | None] = [None] * c
        self._einv: dict[int, np.ndarray] = {}
        self.budget = np.zeros(c)
        self.use = 0.0
        self.cert = np.zeros(c, bool)
        self.margins = np.full(c, np.nan)
        self.retries: list[int] = []
        self.perturbed = 0
        self.grid = barycentric_grid(self.m, 3)

    # -- geometry -------------------------------------------------------------
    def chart(self, i: int) -> CellChart:
        if self.charts[i] is None:
            self.charts[i] = cell_chart(self.k.coords[self.verts[i]])
        return self.charts[i]

    def oracle(self, i: int) -> RelationOracle:
        if self.oracles[i] is None:
            self.oracles[i] = _oracle(self.relation, self.k, self.k.cells[i])
        return self.oracles[i]

    def einv(self, i: int) -> np.ndarray:
        """Inverse of the chart edge matrix; rows are barycentric gradients."""
        if i not in self._einv:
            pts = self.k.coords[self.verts[i]]
            e = self.chart(i).slope_to_chart(pts[1:] - pts[0])  # (m, m), rows are edges
            self._einv[i] = np.linalg.inv(e.T)
        return self._einv[i]

    def grad_norms(self, i: int) -> np.ndarray:
        g = self.einv(i)
        return np.linalg.norm(np.vstack([-g.sum(axis=0), g]), axis=1)

    def slope(self, i: int) -> np.ndarray:
        v = self.values[self.verts[i]]
        return (v[1:] - v[0]).T @ self.einv(i)

    # -- jets -------------------------------------------------------------------
    def piece(self, i: int):
        cell = self.k.cells[i]
        aff = affine_from_vertices(self.k.points(cell), self.values[list(cell)])
        r = self.ring.get(i)
        return aff if r is None else BlendPiece(r.grad, r.offset, r.base, aff)

    def samples(self, i: int):
        """(chart points, values, chart slopes) at the certification samples of a cell."""
        pts = self.k.coords[self.verts[i]]
        chart = self.chart(i)
        if i in self.ring:
            x = np.vstack([self.grid @ pts, pts.mean(axis=0)])
            piece = self.piece(i)
            return chart.to_chart(x), piece.value(x), chart.slope_to_chart(piece.jacobian(x))
        x = np.vstack([pts, pts.mean(axis=0)])
        vals = self.values[self.verts[i]]
        vals = np.vstack([vals, vals.mean(axis=0)])
        slopes = np.broadcast_to(self.slope(i), (len(x),) + (vals.shape[1], self.m))
        return chart.to_chart(x), vals, slopes

    def margin(self, i: int) -> tuple[float, float]:
        """(certified margin, Lipschitz factor) of a cell in the current state."""
        oracle = self.oracle(i)
        base, vals, slopes = self.samples(i)
        idx = range(len(base)) if (oracle.value_dependent or i in self.ring) else [len(base) - 1]
        jets = [Jet1(base[j], vals[j], slopes[j]) for j in idx]
        mu = min(oracle.margin(j) for j in jets)
        lip = max(oracle.lipschitz(j) for j in jets)
        if self.cfg.certification == "lipschitz" and oracle.value_dependent and mu > 0:
            norm = max(np.linalg.norm(s, 2) for s in slopes)
            # values vary by at most |slope| * rmax across the cell
            mu -= lip * norm * rmax(self.k.coords[self.verts[i]])
            mu = max(mu, 0.0)
        return mu, lip

    def displacement(self, i: int, before) -> float:
        _, v0, s0 = before
        _, v1, s1 = self.samples(i)
        dv = float(np.linalg.norm(v1 - v0, axis=1).max())
        ds = float(np.linalg.norm(s1 - s0, ord=2, axis=(1, 2)).max())
        return max(dv, ds)

    # -- perturbation -----------------------------------------------------------
    def _gain(self, i: int, c: int) -> float:
        """Bound on the jet displacement of cell c per unit slope change on cell i."""
        a = int(min(self.verts[i]))
        chart = self.chart(i)
        y = {int(v): float(np.linalg.norm(chart.to_chart(self.k.coords[v]) - chart.to_chart(self.k.coords[a])))
             for v in self.verts[i] if v != a}
        g = self.grad_norms(c)
        local = {int(v): j for j, v in enumerate(self.verts[c])}
        shared = [v for v in y if v in local]
        if not shared:
            return 0.0
        ymax = max(y[v] for v in shared)
        tgrad = float(np.linalg.norm(self.ring[c].grad)) if c in self.ring else 0.0
        return sum(y[v] * g[local[v]] for v in shared) + ymax * (1.0 + tgrad)

    def perturb(self, i: int, eps: float) -> tuple[bool, str | None]:
        cell = self.k.cells[i]
        a = min(cell)
        moved = [v for v in cell if v != a]
        limit = eps
        strict = self.cfg.budget_rule == "displacement"
        for c in (self.k.cells_touching(moved) if strict else ()):
            if self.cert[c]:
                room = self.budget[c] / 4.0
                gain = self._gain(i, c)
                if gain > 0:
                    limit = min(limit, room / gain)
        oracle = self.oracle(i)
        chart = self.chart(i)
        jet = _anchor_jet(self.k, cell, self.values, chart)
        if limit < MIN_STEP:
            if oracle.margin(jet) > 0:
                return False, None
            return False, f"cell {cell}: neighbour budgets leave a step of {limit:.3g}"
        try:
            out = oracle.fiber_perturb(jet, limit)
        except FiberPerturbError as exc:
            return False, f"cell {cell}: {exc}"
        if out is jet:
            return False, None
        base = chart.to_chart(self.k.coords[a])[0]
        y = chart.to_chart(self.k.coords[moved]) - base
        self.values[moved] = self.values[a] + y @ out.slope.T
        return True, None

    # -- colours ----------------------------------------------------------------
    def certify_initial(self):
        for i in np.flatnonzero(self.initial):
            mu, lip = self.margin(i)
            if mu <= 0:
                raise JigglingError(f"entry margin is 0 on cell {self.k.cells[i]}")
            self.cert[i], self.budget[i], self.margins[i] = True, mu / lip, mu

    def run_color(self, color: int, cells: list[int], eps0: float):
        k = self.k
        moved = sorted({v for i in cells for v in k.cells[i] if v != min(k.cells[i])})
        touched = sorted(k.cells_touching(moved))
        watch = [c for c in touched if self.cert[c]]
        before = {c: self.samples(c) for c in watch}
        snapshot = self.values.copy()
        problem = "no attempt"
        for retry in range(self.cfg.max_retries + 1):
            eps = eps0 * self.cfg.eps_shrink ** retry
            self.values[:] = snapshot
            changed, problem = 0, None
            for i in cells:
                did, problem = self.perturb(i, eps)
                if problem:
                    break
                changed += did
            if problem is None:
                problem = self._verify(cells, watch, before)
            if problem is None:
                self.retries.append(retry)
                self.perturbed += changed
                for c in watch:
                    self.use = max(self.use, self.displacement(c, before[c]) / self.budget[c])
                for i in list(cells) + watch:
                    mu, lip = self.margin(i)
                    self.cert[i], self.budget[i], self.margins[i] = True, mu / lip, mu
                return
        self.values[:] = snapshot
        raise _ColorFailure(f"color {color}: retries exhausted; last problem: {problem}", color)

    def _verify(self, cells, watch, before) -> str | None:
        for i in cells:
            if self.margin(i)[0] <= 0:
                return f"cell {self.k.cells[i]} has margin 0 after its perturbation"
        for c in watch:
            mu = self.margin(c)[0]
            if mu <= 0:
                return f"certified cell {self.k.cells[c]} lost its margin"
            if self.cfg.budget_rule == "retention":
                if mu < 0.75 * self.margins[c]:
                    return (f"certified cell {self.k.cells[c]} kept margin {mu:.3g} "
                            f"of {self.margins[c]:.3g}")
                continue
            step = self.displacement(c, before[c])
            room = self.budget[c]
            if step >= room / 4.0 * (1 + 1e-9) + 1e-15:
                return (f"certified cell {self.k.cells[c]} moved {step:.3g}, "
                        f"more than a quarter of its budget {room:.3g}")
        return None

    def run(self, eps0: float) -> Coloring:
        self.certify_initial()
        cells = [self.k.cells[i] for i in np.flatnonzero(self.process)]
        coloring = greedy_color(self.k, cells) if cells else Coloring({})
        for color in range(coloring.n_colors):
            members = [self.k.top_index[c] for c in coloring.color_class(color)]
            self.run_color(color, members, eps0)
        for i in np.flatnonzero(self.certify):
            if not self.cert[i]:
                mu, lip = self.margin(i)
                self.cert[i], self.budget[i], self.margins[i] = mu > 0, mu / lip, mu
            else:
                self.margins[i] = self.margin(i)[0]
        return coloring

    def budget_use(self) -> float:
        return self.use

    def final_margins(self) -> np.ndarray:
        out = np.full(len(self.k.cells), np.nan)
        out[self.certify] = self.margins[self.certify]
        return out


# ---------------------------------------------------------------------------
# jiggling of maps


def _colors_bound(k: SimplicialComplex, process: np.ndarray) -> int:
    cells = [k.cells[i] for i in np.flatnonzero(process)]
    return greedy_color(k, cells).n_colors if cells else 0


def _top_level(k: SimplicialComplex, cfg: JigglingConfig) -> int:
    """Largest automatic level: at most lmax and at most max_cells cells."""
    level = 0
    while level < cfg.lmax and len(k.cells) * 2 ** ((level + 1) * k.dim) <= cfg.max_cells:
        level += 1
    return level


def _level_candidates(cfg: JigglingConfig, start: int, k: SimplicialComplex) -> range:
    if cfg.level == "auto":
        return range(start, _top_level(k, cfg) + 1)
    return range(int(cfg.level), int(cfg.level) + 1)


def _linearization_level(s: PiecewiseMap, cfg: JigglingConfig) -> tuple[int, PiecewiseMap, float]:
    """Smallest level whose linearization is within epsilon / 2 in C^1."""
    best = None
    top = _top_level(s.complex, cfg)
    for level in _level_candidates(cfg, 0, s.complex):
        lin = linearize(s, level)
        d1 = 0.0 if s.is_pl else c0_c1_distance(s, lin)[1]
        best = (level, lin, d1)
        if d1 < cfg.epsilon / 2:
            return best
    if cfg.level == "auto":
        raise InsufficientLevelError(
            f"linearization C^1 error {best[2]:.3g} is not below {cfg.epsilon / 2:.3g} at level {top}",
            top)
    return best


def jiggle_linear(s: PiecewiseMap, relation: RelationOracle, cfg: JigglingConfig
                  ) -> tuple[PiecewiseMap, JigglingReport]:
    """Epsilon-jiggling of s into a PL solution on a crystalline subdivision."""
    level, lin, _ = _linearization_level(s, cfg)
    notes: list[str] = []
    restarts = 0
    while True:
        k = lin.complex
        every = np.ones(len(k.cells), bool)
        probe = _Engine(k, lin.vertex_values, relation, cfg, every, every)
        margins = np.array([probe.margin(i)[0] for i in range(len(k.cells))])
        if np.all(margins > 0):
            # already a solution: no perturbation
            c0, c1 = c0_c1_distance(s, lin)
            if c1 < cfg.epsilon:
                return lin, JigglingReport(cfg.epsilon, level, 0, margins, c0, c1, notes=notes)
        eps0 = cfg.epsilon / (4 * (_colors_bound(k, every) + 1))
        for attempt in range(cfg.max_retries + 1):
            engine = _Engine(k, lin.vertex_values, relation, cfg, every, every)
            try:
                coloring = engine.run(eps0)
            except _ColorFailure as exc:
                notes.append(f"level {level}: {exc}")
                break
            out = PiecewiseMap(k, lin.target_dim, engine.values)
            c0, c1 = c0_c1_distance(s, out)
            margins = engine.final_margins()
            if c1 < cfg.epsilon and np.all(margins > 0):
                return out, JigglingReport(cfg.epsilon, level, coloring.n_colors, margins, c0, c1,
                                           engine.retries, restarts, eps0, engine.perturbed,
                                           engine.budget_use(), None, notes)
            notes.append(f"level {level}: C^1 distance {c1:.3g} with eps0 {eps0:.3g}; shrinking")
            restarts += 1
            eps0 *= cfg.eps_shrink
        if cfg.level != "auto" or level >= _top_level(s.complex, cfg):
            raise JigglingError("; ".join(notes[-3:]) or "jiggling failed")
        level += 1
        lin = linearize(s, level)


# ---------------------------------------------------------------------------
# relative jiggling


def _vertex_set(k: SimplicialComplex, mask: np.ndarray) -> set[int]:
    return {int(v) for v in k.cell_array[mask].ravel()}


def _cells_touching_mask(k: SimplicialComplex, verts: set[int]) -> np.ndarray:
    out = np.zeros(len(k.cells), bool)
    out[list(k.cells_touching(verts))] = True
    return out


def _star_mask(k: SimplicialComplex, mask: np.ndarray, times: int = 1) -> np.ndarray:
    out = mask.copy()
    for _ in range(times):
        out |= _cells_touching_mask(k, _vertex_set(k, out))
    return out


def _inside(k: SimplicialComplex, mask: np.ndarray, region: Region) -> bool:
    verts = sorted(_vertex_set(k, mask))
    return bool(np.all(region.contains(k.coords[verts]))) if verts else True


def fixed_region_hash(k: SimplicialComplex, s: PiecewiseMap, verts: Sequence[int]) -> str:
    h = hashlib.sha256()
    vals = s.vertex_values
    for v in sorted(verts):
        key = k.keys[v] if k.keys is not None else tuple(k.coords[v])
        h.update(repr(key).encode())
        h.update(np.ascontiguousarray(vals[v], dtype=np.float64).tobytes())
    return h.hexdigest()


def _root_mask(k: SimplicialComplex, root_cells: set) -> np.ndarray:
    return np.array([k.parent_of(c) in root_cells for c in k.cells], bool)


def _ring_data(k: SimplicialComplex, frozen: np.ndarray, base: PiecewiseMap) -> tuple[np.ndarray, dict]:
    fverts = _vertex_set(k, frozen)
    ring_mask = _cells_touching_mask(k, fverts) & ~frozen
    ring = {}
    for i in np.flatnonzero(ring_mask):
        cell = k.cells[i]
        b = [j for j, v in enumerate(cell) if v in fverts]
        grad, offset = join_parameter(k.points(cell), b)
        ring[int(i)] = _Ring(grad, offset, base.piece(int(i)))
    return ring_mask, ring


def _assemble(k: SimplicialComplex, n: int, values: np.ndarray, frozen: np.ndarray,
              base: PiecewiseMap, ring: dict, engine: _Engine | None) -> PiecewiseMap:
    pieces = []
    for i, cell in enumerate(k.cells):
        if frozen[i]:
            pieces.append(base.piece_or_none(i) if base.piece_or_none(i) is not None else base.piece(i))
        elif i in ring:
            pieces.append(engine.piece(i) if engine is not None else base.piece(i))
        else:
            pieces.append(None)
    return PiecewiseMap(k, n, values, pieces)


def jiggle_relative(s: PiecewiseMap, relation: RelationOracle, solution: Sequence[Simplex],
                    frozen: Sequence[Simplex], u_solution: Region | None, u_frozen: Region | None,
                    cfg: JigglingConfig) -> tuple[PiecewiseMap, JigglingReport]:
    """Jiggle s away from a solution part and a frozen part, which are kept exactly.

    ``solution`` and ``frozen`` are top cells of s's complex; the output
    equals s on them, is a solution outside ``u_frozen`` and PL outside the
    two neighborhoods.
    """
    root = s.complex
    sol, frz = set(map(tuple, solution)), set(map(tuple, frozen))
    for c in sol | frz:
        if c not in root.top_index:
            raise ValueError(f"{c} is not a top cell of the complex")
    if sol & frz:
        raise ValueError("solution and frozen parts must be disjoint")
    if sol | frz == set(root.cells):
        k = root
        margins = np.full(len(k.cells), np.nan)
        return s, JigglingReport(cfg.epsilon, 0, 0, margins, 0.0, 0.0,
                                 fixed_hash=fixed_region_hash(k, s, range(k.n_vertices)))
    if not sol and not frz:
        return jiggle_linear(s, relation, cfg)
    if u_solution is not None and u_frozen is not None:
        probe = root.coords
        if np.any(u_solution.contains(probe) & u_frozen.contains(probe)):
            raise ValueError("the two neighborhoods must be disjoint")

    notes: list[str] = []
    start = 0
    for level in _level_candidates(cfg, start, root):
        k = crystalline_subdivide(root, level)
        f_sol, f_frz = _root_mask(k, sol), _root_mask(k, frz)
        ok = (not sol or u_solution is None or _inside(k, _star_mask(k, f_sol, 2), u_solution)) and \
             (not frz or u_frozen is None or _inside(k, _star_mask(k, f_frz, 2), u_frozen))
        if not ok:
            notes.append(f"level {level}: double star of the fixed part leaves its neighborhood")
            continue
        base = transfer(s, k)
        lin = linearize(s, level)
        fixed = f_sol | f_frz
        work = ~fixed
        c1_lin = c1_distance_per_cell(lin, s)[work].max() if work.any() else 0.0
        if c1_lin >= cfg.epsilon / 2:
            notes.append(f"level {level}: linearization C^1 error {c1_lin:.3g}")
            continue
        values = np.array(base.vertex_values)
        ring_mask, ring = _ring_data(k, fixed, base)
        jmask = work & ~ring_mask
        near_sol = ring_mask & _cells_touching_mask(k, _vertex_set(k, f_sol)) if sol else np.zeros_like(fixed)
        certify = jmask | near_sol
        eps0 = cfg.epsilon / (4 * (_colors_bound(k, jmask) + 1))
        # entry check on the solution part with s itself
        if sol:
            entry = _Engine(k, values, relation, cfg, jmask, certify,
                            ring={i: _Ring(np.zeros(k.ambient_dim), 1.0, base.piece(i))
                                  for i in np.flatnonzero(f_sol)})
            for i in np.flatnonzero(f_sol):
                if entry.margin(int(i))[0] <= 0:
                    raise JigglingError(f"entry margin is 0 on {k.cells[i]} inside the solution region")
        restarts = 0
        failed = False
        for attempt in range(cfg.max_retries + 1):
            engine = _Engine(k, values, relation, cfg, jmask, certify, initial=near_sol, ring=ring)
            try:
                coloring = engine.run(eps0)
            except (_ColorFailure, JigglingError) as exc:
                notes.append(f"level {level}: {exc}")
                failed = True
                break
            out = _assemble(k, s.target_dim, engine.values, fixed, base, ring, engine)
            c0, c1 = c0_c1_distance(s, out)
            margins = engine.final_margins()
            if c1 < cfg.epsilon and np.all(margins[certify] > 0):
                fverts = sorted(_vertex_set(k, fixed))
                report = JigglingReport(cfg.epsilon, level, coloring.n_colors, margins, c0, c1,
                                        engine.retries, restarts, eps0, engine.perturbed,
                                        engine.budget_use(), fixed_region_hash(k, out, fverts), notes)
                return out, report
            notes.append(f"level {level}: C^1 distance {c1:.3g}; shrinking")
            restarts += 1
            eps0 *= cfg.eps_shrink
        if not failed and cfg.level != "auto":
            break
    raise JigglingError("relative jiggling failed: " + "; ".join(notes[-3:]))


# ---------------------------------------------------------------------------
# bundles


@dataclass
class BundleChart:
    """Root cells handled in this chart and the fibre chart map with its inverse."""

    cells: Sequence[Simplex]
    phi: SmoothFunction | None = None
    phi_inv: SmoothFunction | None = None
    domain: Region | None = None

    @property
    def trivial(self) -> bool:
        return self.phi is None or self.phi.name == "identity"

    def to_chart(self, piece):
        return piece if self.trivial else ComposedPiece(self.phi, piece)

    def from_chart(self, piece):
        return piece if self.trivial else ComposedPiece(self.phi_inv, piece)

    def values_to_chart(self, y: np.ndarray) -> np.ndarray:
        return y if self.trivial else self.phi.value(y)

    def values_from_chart(self, y: np.ndarray) -> np.ndarray:
        return y if self.trivial else self.phi_inv.value(y)


def _in_chart(s: PiecewiseMap, chart: BundleChart) -> PiecewiseMap:
    if chart.trivial:
        return s
    pieces = tuple(chart.to_chart(s.piece(i)) for i in range(len(s.complex.cells)))
    return PiecewiseMap(s.complex, s.target_dim, chart.values_to_chart(s.vertex_values), pieces)


def jiggle_bundle(s: PiecewiseMap, charts: Sequence[BundleChart], relation: RelationOracle,
                  cfg: JigglingConfig) -> tuple[PiecewiseMap, JigglingReport]:
    """Chart by chart jiggling of a section; margins and distances are measured in each chart."""
    root = s.complex
    covered = set()
    for ch in charts:
        cells = set(map(tuple, ch.cells))
        if ch.domain is not None:
            mask = _root_mask(root, cells)
            if not _inside(root, _star_mask(root, mask, 2), ch.domain):
                raise ValueError("chart containment violated: the double star leaves the chart domain")
        covered |= cells
    if covered != set(root.cells):
        raise ValueError("charts must cover every top cell")

    notes: list[str] = []
    level = max(_linearization_level(_in_chart(s, ch), cfg)[0] for ch in charts)
    scale = 1.0
    for attempt in range(cfg.max_retries + 1):
        try:
            out, report = _bundle_pass(s, charts, relation, cfg, level, scale, notes)
        except (_ColorFailure, JigglingError) as exc:
            notes.append(str(exc))
            if cfg.level != "auto" or level >= _top_level(s.complex, cfg):
                raise JigglingError("bundle jiggling failed: " + "; ".join(notes[-3:])) from exc
            level += 1
            continue
        if report.ok:
            report.restarts = attempt
            return out, report
        notes.append(f"C^1 distance {report.c1_distance:.3g}; shrinking")
        scale *= cfg.eps_shrink
    raise JigglingError("bundle jiggling failed: " + "; ".join(notes[-3:]))


def _bundle_pass(s, charts, relation, cfg, level, scale, notes):
    root = s.complex
    k = crystalline_subdivide(root, level)
    cur = transfer(s, k)
    cert = np.zeros(len(k.cells), bool)
    cert_chart = np.full(len(k.cells), -1)
    retries, perturbed, colors, budget_use = [], 0, 0, 0.0
    nc = len(charts)
    root_star_cache = {}
    for j, ch in enumerate(charts):
        own = set(map(tuple, ch.cells))
        rmask = _root_mask(root, own)
        star_root = {root.cells[i] for i in np.flatnonzero(_star_mask(root, rmask))}
        root_star_cache[j] = star_root
        inside = _root_mask(k, own)
        work = _root_mask(k, star_root)
        # previously certified cells whose whole vertex star is certified stay frozen
        star_ok = np.array([all(cert[c] for c in k.cells_touching(cell)) for cell in k.cells])
        frozen = ~work | (cert & star_ok)
        local = _in_chart(cur, ch)
        values = np.array(local.vertex_values)
        ring_mask, ring = _ring_data(k, frozen, local)
        jmask = ~frozen & ~ring_mask
        process = jmask & inside & ~cert
        initial = ~frozen & cert
        certify = ~frozen & (inside | cert)
        eps0 = scale * cfg.epsilon / (4 * (_colors_bound(k, process) + 1) * nc)
        engine = _Engine(k, values, relation, cfg, process, certify, initial=initial, ring=ring)
        coloring = engine.run(eps0)
        retries += engine.retries
        perturbed += engine.perturbed
        colors = max(colors, coloring.n_colors)
        budget_use = max(budget_use, engine.budget_use())
        new_values = np.array(cur.vertex_values)
        changed = sorted(_vertex_set(k, ~frozen) - _vertex_set(k, frozen))
        new_values[changed] = ch.values_from_chart(engine.values[changed])
        pieces = list(cur.pieces) if cur.pieces is not None else [None] * len(k.cells)
        for i in np.flatnonzero(~frozen):
            pieces[i] = ch.from_chart(engine.piece(int(i)))
            if ch.trivial and i not in ring:
                pieces[i] = None
        cur = PiecewiseMap(k, s.target_dim, new_values, pieces)
        cert |= certify
        cert_chart[certify] = j
    # final verification, each cell in the chart that last certified it
    margins = np.full(len(k.cells), np.nan)
    c1 = c0 = 0.0
    for j, ch in enumerate(charts):
        cells = np.flatnonzero(cert_chart == j)
        if not len(cells):
            continue
        local = _in_chart(cur, ch)
        probe = _Engine(k, local.vertex_values, relation, cfg, np.zeros(len(k.cells), bool),
                        np.zeros(len(k.cells), bool),
                        ring={int(i): _Ring(np.zeros(k.ambient_dim), 1.0, local.piece(int(i))) for i in cells})
        for i in cells:
            margins[i] = probe.margin(int(i))[0]
        src = _in_chart(s, ch)
        d1 = c1_distance_per_cell(local, src)[cells]
        c1 = max(c1, float(d1.max()))
        c0 = max(c0, c0_c1_distance(src, local)[0])
    missing = np.flatnonzero(cert_chart < 0)
    if len(missing):
        raise JigglingError(f"{len(missing)} cells were never certified")
    report = JigglingReport(cfg.epsilon, level, colors, margins, c0, c1, retries, 0, 0.0,
                            perturbed, budget_use, None, notes)
    return cur, report


# ---------------------------------------------------------------------------
# triangulations


def _orientations(k: SimplicialComplex, coords: np.ndarray) -> np.ndarray:
    if k.dim != k.ambient_dim:
        return np.ones(len(k.cells))
    return np.array([np.sign(signed_volume(coords[list(c)])) for c in k.cells])


def jiggle_triangulation(k: SimplicialComplex, xi: Distribution | Sequence[Distribution],
                         cfg: JigglingConfig) -> tuple[SimplicialComplex, JigglingReport]:
    """Move the vertices of a crystalline subdivision of k into general position with respect to xi."""
    xis = [xi] if isinstance(xi, Distribution) else list(xi)
    rels = [verygenpos_relation(k, d) for d in xis]
    relation = all_of(rels)
    s = PiecewiseMap.pl(k, k.coords)
    eps = cfg.epsilon
    notes = []
    for attempt in range(cfg.max_retries + 1):
        sub = dataclasses.replace(cfg, epsilon=eps)
        out, report = jiggle_linear(s, relation, sub)
        fine = out.complex
        new = np.array(out.vertex_values)
        if np.array_equal(_orientations(fine, fine.coords), _orientations(fine, new)):
            t = SimplicialComplex(new, fine.cells)
            tmap = PiecewiseMap.pl(t, t.coords)
            bad = [d for d in xis if not verify_general_position(tmap, d).ok]
            if not bad:
                report.epsilon = cfg.epsilon
                report.notes = notes + report.notes
                return t, report
            notes.append(f"epsilon {eps:.3g}: general position check failed")
        else:
            notes.append(f"epsilon {eps:.3g}: orientation flip")
        eps *= cfg.eps_shrink
    raise JigglingError("triangulation jiggling failed: " + "; ".join(notes[-3:]))


class _AllOf(RelationOracle):
    """Intersection of finitely many relations; margin is the minimum."""

    def __init__(self, parts: Sequence[RelationOracle]):
        self.parts = list(parts)
        self.name = "+".join(p.name for p in self.parts)
        self.value_dependent = any(p.value_dependent for p in self.parts)

    def for_cell(self, k, cell):
        return _AllOf([p.for_cell(k, cell) for p in self.parts])

    def margin(self, jet):
        return min(p.margin(jet) for p in self.parts)

    def lipschitz(self, jet):
        return max(p.lipschitz(jet) for p in self.parts)

    def directions(self, jet):
        out = []
        for p in self.parts:
            out.extend(p.directions(jet))
        return out


def all_of(parts: Sequence[RelationOracle]) -> RelationOracle:
    return parts[0] if len(parts) == 1 else _AllOf(parts)
