"""Crystalline subdivision, barycentric cone off and generalized subdivision.

A level-``l`` crystalline child of an ordered simplex ``<v_0..v_m>`` is
described by integer barycentric numerators over ``2**l``.  The inclusion
into the cube sends ``v_j`` to ``(0^j, 1^(m-j))``, so the image of the
simplex is the order region ``x_1 <= ... <= x_m`` and the barycentric
coordinates of a cube point ``x`` are

    b_0 = x_1,  b_k = x_(k+1) - x_k,  b_m = 1 - x_m.

Kuhn simplices of the dyadic cube grid are pairs (corner, permutation); the
ones whose path stays in the order region are exactly the children.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .complex import (
    ComplexError,
    Lineage,
    Simplex,
    SimplicialComplex,
    Subcomplex,
    VertexKey,
    closure,
    combine_keys,
    is_degenerate,
    is_nice,
    max_subcomplex_in,
    rmax,
)
from .regions import Everything, Region

LMAX_DEFAULT = 12

Bary = tuple[Fraction, ...]


class SubdivisionError(ValueError):
    pass


class InsufficientLevelError(SubdivisionError):
    def __init__(self, message: str, level: int):
        super().__init__(message)
        self.level = level


# ---------------------------------------------------------------------------
# Kuhn templates


@dataclass(frozen=True)
class KuhnTemplate:
    dim: int
    level: int
    points: np.ndarray  # (P, dim+1) integer barycentric numerators over 2**level
    children: np.ndarray  # (C, dim+1) point indices, increasing cube sum along the path

    @property
    def denom(self) -> int:
        return 2**self.level


def _bary_from_cube(x: np.ndarray, n: int) -> np.ndarray:
    """Integer barycentric numerators of integer cube points (..., m)."""
    m = x.shape[-1]
    if m == 0:
        return np.full(x.shape[:-1] + (1,), n, dtype=np.int64)
    first = x[..., :1]
    mid = np.diff(x, axis=-1)
    last = n - x[..., -1:]
    return np.concatenate([first, mid, last], axis=-1)


@lru_cache(maxsize=None)
def kuhn_template(dim: int, level: int) -> KuhnTemplate:
    n = 2**level
    if dim == 0:
        return KuhnTemplate(0, level, np.array([[n]]), np.array([[0]]))
    pts = np.array([c for c in itertools.combinations_with_replacement(range(n + 1), dim)],
                   dtype=np.int64)
    codes = pts @ (n + 1) ** np.arange(dim)[::-1]
    order = np.argsort(codes)
    pts, codes = pts[order], codes[order]
    corners = np.array([c for c in itertools.combinations_with_replacement(range(n), dim)],
                       dtype=np.int64)
    perms = np.array(list(itertools.permutations(range(dim))), dtype=np.int64)
    # steps[p, t] = unit vector e_{perm[p][t]}
    steps = np.eye(dim, dtype=np.int64)[perms]  # (P, dim, dim)
    offsets = np.concatenate([np.zeros((len(perms), 1, dim), np.int64),
                              np.cumsum(steps, axis=1)], axis=1)  # (P, dim+1, dim)
    paths = corners[:, None, None, :] + offsets[None]  # (C, P, dim+1, dim)
    ok = np.all(np.diff(paths, axis=-1) >= 0, axis=(-1, -2))
    sel = paths[ok]  # (children, dim+1, dim)
    sel_codes = sel @ (n + 1) ** np.arange(dim)[::-1]
    idx = np.searchsorted(codes, sel_codes)
    children = idx[np.lexsort(idx.T[::-1])]
    return KuhnTemplate(dim, level, _bary_from_cube(pts, n), children)


# ---------------------------------------------------------------------------
# crystalline subdivision


def _key_of(weights: Sequence[int], denom: int, parent_keys: Sequence[VertexKey]) -> VertexKey:
    return combine_keys([Fraction(int(w), int(denom)) for w in weights], parent_keys)


def crystalline_subdivide(k: SimplicialComplex, level: int) -> SimplicialComplex:
    """The level-``level`` crystalline subdivision of every cell of ``k``.

    Old vertices keep their ids.  New vertices are appended in lexicographic
    order of their exact (rational) coordinates, so the result is again an
    ordered complex and the lexicographic cell order is a raster scan.
    """
    if level < 0:
        raise SubdivisionError("level must be nonnegative")
    if level == 0:
        return k
    if not k.is_pure:
        raise ComplexError("crystalline subdivision requires a pure complex")
    m = k.dim
    tpl = kuhn_template(m, level)
    denom = tpl.denom
    # local identity of a child vertex: sparse weights over vertices of k
    local: dict[tuple, int] = {}
    new_local: list[tuple] = []
    cell_rows = []
    for cell in k.cells:
        ids = np.empty(len(tpl.points), dtype=np.int64)
        for p, w in enumerate(tpl.points):
            nz = np.nonzero(w)[0]
            if len(nz) == 1:
                ids[p] = cell[nz[0]]
                continue
            lk = tuple((cell[j], int(w[j])) for j in nz)
            if lk not in local:
                local[lk] = -1 - len(new_local)
                new_local.append(lk)
            ids[p] = local[lk]
        cell_rows.append(ids[tpl.children])
    exact = [[Fraction(float(x)) for x in row] for row in k.coords]

    def exact_point(lk):
        acc = [Fraction(0)] * k.ambient_dim
        for v, w in lk:
            for j, x in enumerate(exact[v]):
                acc[j] += w * x
        return tuple(acc)

    order = sorted(range(len(new_local)), key=lambda i: exact_point(new_local[i]))
    nv = k.n_vertices
    remap = np.empty(len(new_local), dtype=np.int64)
    for rank, i in enumerate(order):
        remap[i] = nv + rank
    coords = np.empty((nv + len(new_local), k.ambient_dim))
    coords[:nv] = k.coords
    keys = list(k.keys)
    for i in order:
        lk = new_local[i]
        vids = [v for v, _ in lk]
        ws = np.array([w for _, w in lk], dtype=float) / denom
        coords[remap[i]] = ws @ k.coords[vids]
        keys.append(_key_of([w for _, w in lk], denom, [k.keys[v] for v in vids]))
    cells = []
    lineage = []
    for cell, rows in zip(k.cells, cell_rows):
        if len(remap):
            rows = np.where(rows < 0, remap[-1 - np.minimum(rows, -1)], rows)
        rows.sort(axis=1)
        parent = k.parent_of(cell)
        lvl = k.level_of(cell) + level
        for r in rows:
            cells.append(tuple(int(v) for v in r))
            lineage.append(Lineage(parent, lvl))
    order_cells = sorted(range(len(cells)), key=cells.__getitem__)
    return SimplicialComplex(coords, tuple(cells[i] for i in order_cells), tuple(keys),
                             tuple(lineage[i] for i in order_cells), root=k.root_complex)


# ---------------------------------------------------------------------------
# exact barycentric bookkeeping relative to a root cell


def root_bary(key: VertexKey, parent: Simplex) -> Bary:
    w = dict(key)
    if any(v not in parent for v in w):
        raise SubdivisionError("vertex is not carried by the given root cell")
    return tuple(w.get(v, Fraction(0)) for v in parent)


def bary_key(b: Bary, parent: Simplex) -> VertexKey:
    return tuple((v, c) for v, c in zip(parent, b) if c != 0)


def cube_sum(b: Bary) -> Fraction:
    """Sum of the cube coordinates of a point given by root barycentrics."""
    m = len(b) - 1
    return sum((c * (m - j) for j, c in enumerate(b)), Fraction(0))


def path_order(bs: Sequence[Bary]) -> list[int]:
    """Indices of a Kuhn cell's vertices, in the order that reproduces its refinement."""
    return sorted(range(len(bs)), key=lambda i: cube_sum(bs[i]), reverse=True)


def kuhn_refine(bs: Sequence[Bary]) -> list[tuple[Bary, ...]]:
    """One more crystalline level inside a Kuhn cell (or a face of one)."""
    order = path_order(bs)
    ws = [bs[i] for i in order]
    k = len(bs) - 1
    tpl = kuhn_template(k, 1)
    pts = []
    for p in tpl.points:
        acc = [Fraction(0)] * len(bs[0])
        for c, w in zip(p, ws):
            if c:
                for j, x in enumerate(w):
                    acc[j] += Fraction(int(c), 2) * x
        pts.append(tuple(acc))
    return [tuple(pts[i] for i in row) for row in tpl.children]


def barycenter(bs: Sequence[Bary]) -> Bary:
    n = len(bs)
    return tuple(sum(col, Fraction(0)) / n for col in zip(*bs))


def cone_pattern(bs: Sequence[Bary], inside: Iterable[int]) -> list[tuple[Bary, ...]]:
    """Recursive barycentric cone off of a Kuhn cell whose ``inside`` vertices are kept.

    Faces spanned by kept vertices stay as they are, faces without kept
    vertices are refined once, and every other face is coned from its
    barycenter over the subdivision of its boundary.  Decisions only depend on
    the face, so neighbouring cells treated this way glue to a complex.
    """
    keep = frozenset(tuple(bs[i]) for i in inside)
    memo: dict[frozenset, list[tuple[Bary, ...]]] = {}

    def sub(face: tuple[Bary, ...]) -> list[tuple[Bary, ...]]:
        fk = frozenset(face)
        if fk in memo:
            return memo[fk]
        flags = [p in keep for p in face]
        if all(flags):
            out = [face]
        elif not any(flags):
            out = kuhn_refine(face)
        else:
            b = barycenter(face)
            out = []
            for i in range(len(face)):
                facet = face[:i] + face[i + 1:]
                out.extend(s + (b,) for s in sub(facet))
        memo[fk] = out
        return out

    return sub(tuple(tuple(b) for b in bs))


# ---------------------------------------------------------------------------
# cone off of a single simplex


def cone_off(points, boundary: SimplicialComplex) -> SimplicialComplex:
    """Join the barycenter of the simplex ``points`` with a subdivision of its boundary.

    The boundary vertices keep their ids and the barycenter is appended.
    """
    pts = np.asarray(points, dtype=float)
    m = len(pts) - 1
    if m < 1 or boundary.ambient_dim != pts.shape[1]:
        raise SubdivisionError("need a simplex of dimension >= 1 in the boundary's space")
    if boundary.dim != m - 1 or not boundary.is_pure:
        raise SubdivisionError("boundary subdivision must be pure of dimension m - 1")
    e = (pts[1:] - pts[0]).T
    pinv = np.linalg.pinv(e)
    lam = (boundary.coords - pts[0]) @ pinv.T
    bary = np.column_stack([1 - lam.sum(axis=1), lam])
    recon = pts[0] + lam @ e.T
    scale = rmax(pts)
    if np.abs(recon - boundary.coords).max() > 1e-9 * scale or bary.min() < -1e-9:
        raise SubdivisionError("boundary vertices do not lie on the simplex")
    from .complex import unsigned_volume

    covered = np.zeros(m + 1)
    for c in boundary.cells:
        b = bary[list(c)]
        zero = np.nonzero(np.all(np.abs(b) <= 1e-9, axis=0))[0]
        if len(zero) != 1:
            raise SubdivisionError(f"boundary cell {c} is not contained in a single facet")
        covered[zero[0]] += unsigned_volume(boundary.points(c))
    for i in range(m + 1):
        want = unsigned_volume(np.delete(pts, i, axis=0))
        if abs(covered[i] - want) > 1e-9 * max(want, 1e-300):
            raise SubdivisionError(f"facet opposite vertex {i} is not covered exactly")
    b_id = boundary.n_vertices
    coords = np.vstack([boundary.coords, pts.mean(axis=0)])
    cells = tuple(sorted(c + (b_id,) for c in boundary.cells))
    return SimplicialComplex(coords, cells)


def simplex_boundary(points) -> SimplicialComplex:
    pts = np.asarray(points, dtype=float)
    m = len(pts) - 1
    return SimplicialComplex(pts, tuple(itertools.combinations(range(m + 1), m)))


# ---------------------------------------------------------------------------
# model catalog


def _normal_form(bs: Sequence[Bary]) -> tuple[tuple, Fraction]:
    """Translation and scale free exact key of a simplex in root barycentrics."""
    base = min(bs)
    diffs = [tuple(x - y for x, y in zip(b, base)) for b in bs]
    scale = max(abs(x) for d in diffs for x in d)
    return tuple(sorted(tuple(x / scale for x in d) for d in diffs)), scale


@dataclass(frozen=True)
class Model:
    parent: Simplex
    vertices: tuple[Bary, ...]
    level: int  # level whose scale the stored vertices are at
    kind: str


@dataclass
class ModelCatalog:
    models: list[Model] = field(default_factory=list)
    index: dict = field(default_factory=dict)  # (parent, normal form) -> (model id, scale)

    def __len__(self):
        return len(self.models)

    def add(self, parent: Simplex, bs: Sequence[Bary], level: int, kind: str) -> int:
        nf, scale = _normal_form(bs)
        key = (parent, nf)
        if key not in self.index:
            self.index[key] = (len(self.models), scale)
            self.models.append(Model(parent, tuple(bs), level, kind))
        return self.index[key][0]

    def match_bary(self, parent: Simplex, bs: Sequence[Bary]) -> tuple[int, int] | None:
        """(model id, level) with the cell = model translated and scaled by a power of 2."""
        nf, scale = _normal_form(bs)
        hit = self.index.get((parent, nf))
        if hit is None:
            return None
        mid, mscale = hit
        ratio = mscale / scale
        lvl = _log2_exact(ratio)
        if lvl is None:
            return None
        return mid, self.models[mid].level + lvl

    def match(self, k: SimplicialComplex, cell: Simplex) -> tuple[int, int] | None:
        parent = k.parent_of(cell)
        return self.match_bary(parent, [root_bary(k.keys[v], parent) for v in cell])

    def model_points(self, mid: int, root: SimplicialComplex) -> np.ndarray:
        mdl = self.models[mid]
        w = np.array([[float(x) for x in b] for b in mdl.vertices])
        return w @ root.coords[list(mdl.parent)]

    @property
    def distinct_shapes(self) -> int:
        return len(self.models)


def _log2_exact(r: Fraction) -> int | None:
    if r <= 0:
        return None
    num, den = r.numerator, r.denominator
    if num & (num - 1) or den & (den - 1):
        return None
    return num.bit_length() - den.bit_length()


def catalog_level(m: int) -> int:
    """Level from which every Kuhn cell type of the order region has appeared."""
    return max(1, math.ceil(math.log2(m))) if m > 1 else 1


def _template_barys(m: int, level: int) -> list[tuple[Bary, ...]]:
    tpl = kuhn_template(m, level)
    pts = [tuple(Fraction(int(x), tpl.denom) for x in p) for p in tpl.points]
    return [tuple(pts[i] for i in row) for row in tpl.children]


@lru_cache(maxsize=None)
def _model_patterns(m: int, with_cone_offs: bool) -> tuple:
    """(normal form, scale, vertices, level, kind) for every model shape of dimension m."""
    out: dict = {}

    def add(bs, lvl, kind):
        nf, scale = _normal_form(bs)
        if nf not in out:
            out[nf] = (nf, scale, tuple(bs), lvl, kind)
            return True
        return False

    shapes = []
    for lvl in range(0, catalog_level(m) + 2):
        for bs in _template_barys(m, lvl):
            if add(bs, lvl, "crystalline"):
                shapes.append((bs, lvl))
    if with_cone_offs:
        for bs, lvl in shapes:
            for r in range(1, m + 1):
                for inside in itertools.combinations(range(m + 1), r):
                    for cell in cone_pattern(bs, inside):
                        add(cell, lvl, "cone")
    return tuple(out.values())


def model_simplices(k: SimplicialComplex, with_cone_offs: bool = True) -> ModelCatalog:
    """Model simplices of all crystalline and generalized subdivisions of ``k``.

    Kuhn cell shapes are collected from the children up to one level past
    ``catalog_level``, and each shape is closed under the cone off patterns
    used by ``generalized_subdivide``.  Shapes live in root barycentric
    coordinates, so they are shared by all top cells of the root.
    """
    if not k.is_pure:
        raise ComplexError("model catalog requires a pure complex")
    cat = ModelCatalog()
    patterns = _model_patterns(k.dim, with_cone_offs)
    for parent in sorted({k.parent_of(c) for c in k.cells}):
        for nf, scale, bs, lvl, kind in patterns:
            cat.index[(parent, nf)] = (len(cat.models), scale)
            cat.models.append(Model(parent, bs, lvl, kind))
    return cat


# ---------------------------------------------------------------------------
# generalized crystalline subdivision


def color_bound_crystalline(k: SimplicialComplex) -> int:
    m = k.dim
    a = len({k.parent_of(c) for c in k.cells})
    return (3**m - 1) * math.factorial(m) * a


def cone_cell_bound(m: int) -> int:
    """Largest number of cells a single cone off pattern produces."""
    bs = _template_barys(m, 0)[0]
    return max(len(cone_pattern(bs, inside))
               for r in range(1, m + 1)
               for inside in itertools.combinations(range(m + 1), r))


def required_level(k: SimplicialComplex, region: Region, delta: float,
                   lmax: int = LMAX_DEFAULT) -> int:
    """Smallest L with rmax <= delta/8 on all level-L children of cells meeting B(region, delta).

    Halving the size once more than the ring construction needs keeps every
    cone off inside the next shell.
    """
    target = delta / 8
    near = region.neighborhood(delta)
    cells = [c for c in k.cells
             if near.distance(k.points(c)).min() <= rmax(k.points(c))]
    for lvl in range(lmax + 1):
        tpl = kuhn_template(k.dim, lvl)
        w = tpl.points[tpl.children] / tpl.denom  # (C, m+1, m+1)
        worst = 0.0
        for c in cells:
            pts = w @ k.points(c)
            diff = pts[:, :, None, :] - pts[:, None, :, :]
            worst = max(worst, float(np.sqrt((diff**2).sum(-1)).max()))
        if worst <= target:
            return lvl
    raise InsufficientLevelError("no level up to the maximum meets the size bound", lmax)


@dataclass
class GeneralizedSubdivision:
    complex: SimplicialComplex
    catalog: ModelCatalog
    color_bound: int
    required_level: int
    shells: list[float]


class _Builder:
    def __init__(self, root: SimplicialComplex):
        self.root = root
        self.keys: list[VertexKey] = []
        self.coords: list[np.ndarray] = []
        self.index: dict[VertexKey, int] = {}

    def add_all(self, keys: Iterable[VertexKey]) -> None:
        fresh = sorted({k for k in keys if k not in self.index})
        for key in fresh:
            self.index[key] = len(self.keys)
            self.keys.append(key)
            vids = [v for v, _ in key]
            w = np.array([float(c) for _, c in key])
            self.coords.append(w @ self.root.coords[vids])


def generalized_subdivide(k: SimplicialComplex, region: Region, delta: float, l0: int, l1: int,
                          check_level: bool = True) -> GeneralizedSubdivision:
    """Subdivision agreeing with K_l0 on ``region`` and with K_l1 outside B(region, delta).

    Starting from K_l0, step ``i`` keeps the cells inside the shell
    ``B_i = B(region, rho_i)``, ``rho_i = s * sum_{j<=i} 2**-j`` with
    ``s = delta / 4``, refines cells away from the star of those by one
    level and cones off the ring cells.
    """
    if not k.is_pure:
        raise ComplexError("generalized subdivision requires a pure complex")
    if l1 < l0:
        raise SubdivisionError("need l1 >= l0")
    lreq = required_level(k, region, delta)
    if check_level and l0 < lreq:
        raise InsufficientLevelError(f"l0 = {l0} is below the required level L = {lreq}", lreq)
    s = delta / 4
    base = crystalline_subdivide(k, l0)
    root = base.root_complex
    m = base.dim
    # working state: cells as key tuples with lineage
    cells: list[tuple[tuple[VertexKey, ...], Lineage]] = [
        (tuple(base.keys[v] for v in c), base.lineage[i] if base.lineage else Lineage(c, 0))
        for i, c in enumerate(base.cells)]
    builder = _Builder(root)
    builder.add_all(base.keys)
    shells = []
    for i in range(l1 - l0):
        rho = s * sum(2.0**-j for j in range(i + 1))
        shells.append(rho)
        shell = region.neighborhood(rho)
        coords = np.array(builder.coords)
        inside = shell.contains(coords)
        qkeys = {builder.keys[j] for j in np.nonzero(inside)[0]}
        new_cells = []
        for ckeys, lin in cells:
            flags = [key in qkeys for key in ckeys]
            bs = [root_bary(key, lin.parent) for key in ckeys]
            if all(flags):
                new_cells.append((ckeys, lin))
                continue
            if lin.kind != "crystalline" or lin.level != l0 + i:
                raise SubdivisionError("cone cell left its shell; the size bound is violated")
            if not any(flags):
                parts = kuhn_refine(bs)
                kind, lvl = "crystalline", lin.level + 1
            else:
                parts = cone_pattern(bs, [j for j, f in enumerate(flags) if f])
                kind, lvl = "cone", lin.level
            for part in parts:
                new_cells.append((tuple(bary_key(b, lin.parent) for b in part),
                                  Lineage(lin.parent, lvl, kind)))
        cells = new_cells
        builder.add_all(key for c, _ in cells for key in c)
    builder.add_all(key for c, _ in cells for key in c)
    rows = []
    for ckeys, lin in cells:
        rows.append((tuple(sorted(builder.index[key] for key in ckeys)), lin))
    rows.sort(key=lambda r: r[0])
    out = SimplicialComplex(np.array(builder.coords), tuple(r for r, _ in rows),
                            tuple(builder.keys), tuple(lin for _, lin in rows), root=root)
    catalog = model_simplices(k)
    bound = color_bound_crystalline(k) * cone_cell_bound(m)
    return GeneralizedSubdivision(out, catalog, bound, lreq, shells)


# ---------------------------------------------------------------------------
# nice covers


@dataclass
class NiceCover:
    level: int
    complex: SimplicialComplex
    pieces: list[Subcomplex]


def nice_cover(k: SimplicialComplex, regions: Sequence[Region], lmax: int = LMAX_DEFAULT
               ) -> NiceCover:
    """Smallest level at which the pieces K_l ∩ U_i cover every top cell of K_l."""
    for lvl in range(lmax + 1):
        kl = crystalline_subdivide(k, lvl)
        pieces = [max_subcomplex_in(kl, u) for u in regions]
        if all(any(c in p for p in pieces) for c in kl.cells):
            return NiceCover(lvl, kl, pieces)
    raise SubdivisionError("insufficient Lebesgue margin: cover not achieved up to lmax")


def interior_disjoint_pairs(k: SimplicialComplex) -> list[tuple[Simplex, Simplex]]:
    """Pairs of top cells whose interiors overlap (validation helper)."""
    from .complex import validate_complex

    return validate_complex(k).bad_intersections


__all__ = [
    "KuhnTemplate", "kuhn_template", "crystalline_subdivide", "cone_off", "simplex_boundary",
    "ModelCatalog", "model_simplices", "generalized_subdivide", "GeneralizedSubdivision",
    "nice_cover", "NiceCover", "required_level", "cone_pattern", "kuhn_refine", "path_order",
    "root_bary", "catalog_level", "color_bound_crystalline", "InsufficientLevelError",
    "SubdivisionError", "Everything", "is_nice", "is_degenerate", "closure",
]
