"""Piecewise smooth and piecewise linear maps over the polyhedron of a complex.

A :class:`PiecewiseMap` stores, per top cell of its complex, either a piece
(anything with ``value``/``jacobian`` on ambient points) or ``None``.  Cells
with ``None`` are affine and determined by the vertex value array, so a map
whose pieces are all ``None`` is piecewise linear and fully described by its
vertex values.

Derivatives are taken in ambient coordinates and restricted to the tangent
plane of each cell: the slope of an affine piece on a cell with edge matrix
``E`` and vertex differences ``D`` is ``D E^+``.  This metric is invariant
under subdivision, which is what lets maps on different subdivisions of the
same complex be compared.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Protocol, Sequence

import numpy as np

from .complex import ComplexError, Simplex, SimplicialComplex, faces
from .functions import SmoothFunction
from .regions import Region
from .subdivision import InsufficientLevelError, crystalline_subdivide

SAMPLES_PER_EDGE = 5


class Piece(Protocol):
    def value(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class AffinePiece:
    origin: np.ndarray  # (N,)
    value0: np.ndarray  # (n,)
    slope: np.ndarray  # (n, N), zero on the normal space of the cell

    def value(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return self.value0 + (x - self.origin) @ self.slope.T

    def jacobian(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.broadcast_to(self.slope, (len(x),) + self.slope.shape).copy()


@dataclass(frozen=True, eq=False)
class SmoothPiece:
    fn: SmoothFunction

    def value(self, x) -> np.ndarray:
        return self.fn.value(np.atleast_2d(np.asarray(x, float)))

    def jacobian(self, x) -> np.ndarray:
        return self.fn.jacobian(np.atleast_2d(np.asarray(x, float)))


@dataclass(frozen=True, eq=False)
class BlendPiece:
    """t(x) * first(x) + (1 - t(x)) * second(x) with t affine."""

    grad: np.ndarray  # (N,)
    offset: float
    first: Piece
    second: Piece

    def weight(self, x: np.ndarray) -> np.ndarray:
        return self.offset + x @ self.grad

    def value(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        t = self.weight(x)[:, None]
        return t * self.first.value(x) + (1.0 - t) * self.second.value(x)

    def jacobian(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        t = self.weight(x)[:, None, None]
        diff = self.first.value(x) - self.second.value(x)
        return (t * self.first.jacobian(x) + (1.0 - t) * self.second.jacobian(x)
                + diff[:, :, None] * self.grad[None, None, :])


@dataclass(frozen=True, eq=False)
class ComposedPiece:
    """outer o inner, used to move a piece into another fibre chart."""

    outer: SmoothFunction
    inner: Piece

    def value(self, x) -> np.ndarray:
        return self.outer.value(self.inner.value(x))

    def jacobian(self, x) -> np.ndarray:
        y = self.inner.value(x)
        return np.einsum("kij,kjl->kil", self.outer.jacobian(y), self.inner.jacobian(x))


def affine_from_vertices(points, values) -> AffinePiece:
    """The affine map on the simplex spanned by ``points`` with the given vertex values."""
    pts = np.asarray(points, float)
    vals = np.atleast_2d(np.asarray(values, float))
    if len(vals) != len(pts):
        raise ValueError("one value per vertex is required")
    e = (pts[1:] - pts[0]).T
    d = (vals[1:] - vals[0]).T
    slope = d @ np.linalg.pinv(e) if len(pts) > 1 else np.zeros((vals.shape[1], pts.shape[1]))
    return AffinePiece(pts[0].copy(), vals[0].copy(), slope)


@dataclass(frozen=True, eq=False)
class PiecewiseMap:
    complex: SimplicialComplex
    target_dim: int
    values: np.ndarray | None = None  # (n_vertices, n)
    pieces: tuple | None = None  # per cell: piece or None (affine from values)

    def __post_init__(self):
        k = self.complex
        if not k.is_pure:
            raise ComplexError("piecewise maps live on pure complexes")
        if self.values is not None:
            vals = np.array(self.values, dtype=float).reshape(k.n_vertices, self.target_dim)
            vals.setflags(write=False)
            object.__setattr__(self, "values", vals)
        if self.pieces is not None:
            pieces = tuple(self.pieces)
            if len(pieces) != len(k.cells):
                raise ComplexError("one piece per cell is required")
            if all(p is None for p in pieces):
                pieces = None
            object.__setattr__(self, "pieces", pieces)
        if self.values is None and (self.pieces is None or any(p is None for p in self.pieces)):
            raise ComplexError("affine cells need vertex values")

    # -- constructors ---------------------------------------------------------
    @classmethod
    def pl(cls, k: SimplicialComplex, values) -> "PiecewiseMap":
        vals = np.asarray(values, float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return cls(k, vals.shape[1], vals)

    @classmethod
    def smooth(cls, k: SimplicialComplex, fn: SmoothFunction) -> "PiecewiseMap":
        if fn.in_dim != k.ambient_dim:
            raise ValueError(f"function expects R^{fn.in_dim}, complex lives in R^{k.ambient_dim}")
        piece = SmoothPiece(fn)
        return cls(k, fn.out_dim, None, tuple(piece for _ in k.cells))

    # -- structure --------------------------------------------------------------
    @property
    def is_pl(self) -> bool:
        return self.pieces is None

    def piece_or_none(self, i: int):
        return None if self.pieces is None else self.pieces[i]

    def piece(self, i: int) -> Piece:
        p = self.piece_or_none(i)
        if p is not None:
            return p
        cell = self.complex.cells[i]
        return affine_from_vertices(self.complex.points(cell), self.values[list(cell)])

    @cached_property
    def vertex_values(self) -> np.ndarray:
        if self.values is not None:
            return self.values
        k = self.complex
        out = np.empty((k.n_vertices, self.target_dim))
        first = {}
        for i, c in enumerate(k.cells):
            for v in c:
                first.setdefault(v, i)
        by_piece: dict[int, list[int]] = {}
        for v, i in first.items():
            by_piece.setdefault(id(self.pieces[i]), []).append(v)
        for vs in by_piece.values():
            p = self.pieces[first[vs[0]]]
            out[vs] = p.value(k.coords[vs])
        out.setflags(write=False)
        return out

    def with_values(self, values) -> "PiecewiseMap":
        return PiecewiseMap(self.complex, self.target_dim, values, self.pieces)

    @cached_property
    def pl_slopes(self) -> np.ndarray:
        """Slopes (c, n, N) of the affine interpolants of the vertex values."""
        return pl_slopes(self.complex, self.vertex_values)

    def evaluate(self, i: int, x) -> np.ndarray:
        return self.piece(i).value(np.atleast_2d(np.asarray(x, float)))

    def jacobian(self, i: int, x) -> np.ndarray:
        return self.piece(i).jacobian(np.atleast_2d(np.asarray(x, float)))

    def continuity_defect(self) -> float:
        """Largest mismatch of neighbouring pieces at shared vertices and face barycentres."""
        k = self.complex
        worst = 0.0
        vals = self.vertex_values
        for i, c in enumerate(k.cells):
            if self.piece_or_none(i) is None:
                continue
            got = self.piece(i).value(k.points(c))
            worst = max(worst, float(np.abs(got - vals[list(c)]).max()))
        shared: dict[Simplex, list[int]] = {}
        for i, c in enumerate(k.cells):
            for f in faces(c, k.dim - 1):
                shared.setdefault(f, []).append(i)
        for f, owners in shared.items():
            if len(owners) < 2 or all(self.piece_or_none(i) is None for i in owners):
                continue
            x = k.points(f).mean(axis=0, keepdims=True)
            ys = [self.piece(i).value(x) for i in owners]
            for a, b in itertools.combinations(ys, 2):
                worst = max(worst, float(np.abs(a - b).max()))
        return worst


def pl_slopes(k: SimplicialComplex, values: np.ndarray) -> np.ndarray:
    _, _, einv = k.cell_geometry
    v = np.asarray(values, float)[k.cell_array]  # (c, m+1, n)
    d = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)  # (c, n, m)
    return d @ einv


def operator_norms(mats: np.ndarray) -> np.ndarray:
    mats = np.asarray(mats, float)
    if mats.size == 0:
        return np.zeros(mats.shape[:-2])
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


# ---------------------------------------------------------------------------
# relating a complex to one of its subdivisions


def host_cells(coarse: SimplicialComplex, fine: SimplicialComplex) -> np.ndarray:
    """Index of the coarse cell containing each fine cell."""
    if coarse is fine:
        return np.arange(len(fine.cells))
    if fine.root_complex is not coarse.root_complex:
        raise ComplexError("incomparable complexes: no common root")
    root = fine.root_complex
    by_root: dict[Simplex, list[int]] = {}
    for i, c in enumerate(coarse.cells):
        by_root.setdefault(coarse.parent_of(c), []).append(i)
    _, _, einv = coarse.cell_geometry
    origins = coarse.cell_geometry[0]
    out = np.empty(len(fine.cells), dtype=np.int64)
    for j, c in enumerate(fine.cells):
        parent = fine.parent_of(c) if fine is not root else c
        cand = by_root.get(parent)
        if not cand:
            raise ComplexError(f"incomparable complexes: fine cell {c} has no coarse host")
        x = fine.points(c)
        best, best_i = -np.inf, -1
        for i in cand:
            lam = (x - origins[i]) @ einv[i].T
            score = min(lam.min(), (1.0 - lam.sum(axis=1)).min())
            if score > best:
                best, best_i = score, i
        if best < -1e-9:
            raise ComplexError(f"incomparable complexes: fine cell {c} lies in no coarse cell")
        out[j] = best_i
    return out


def _common_refinement(f: PiecewiseMap, g: PiecewiseMap):
    kf, kg = f.complex, g.complex
    if kf is kg:
        idx = np.arange(len(kf.cells))
        return kf, idx, idx
    try:
        return kg, host_cells(kf, kg), np.arange(len(kg.cells))
    except ComplexError:
        pass
    try:
        return kf, np.arange(len(kf.cells)), host_cells(kg, kf)
    except ComplexError as exc:
        raise ComplexError("incomparable complexes: neither subdivides the other") from exc


def barycentric_grid(m: int, per_edge: int = SAMPLES_PER_EDGE) -> np.ndarray:
    """Barycentric points with ``per_edge`` samples along every edge."""
    q = max(per_edge - 1, 1)
    rows = [c for c in itertools.product(range(q + 1), repeat=m) if sum(c) <= q]
    return np.array([(q - sum(c),) + c for c in rows], float) / q


def _sample(fmap: PiecewiseMap, hosts: np.ndarray, x: np.ndarray):
    """Values (c, s, n) and ambient jacobians (c, s, n, N) of fmap at points x (c, s, N)."""
    c, s, big_n = x.shape
    n = fmap.target_dim
    vals = np.empty((c, s, n))
    jacs = np.empty((c, s, n, big_n))
    groups: dict[int, list[int]] = {}
    affine_rows = []
    for j, h in enumerate(hosts):
        p = fmap.piece_or_none(int(h))
        if p is None:
            affine_rows.append(j)
        else:
            groups.setdefault(id(p), []).append(j)
    if affine_rows:
        rows = np.array(affine_rows)
        hs = hosts[rows]
        slopes = fmap.pl_slopes[hs]  # (r, n, N)
        origin_vals = fmap.vertex_values[fmap.complex.cell_array[hs, 0]]  # (r, n)
        origins = fmap.complex.cell_geometry[0][hs]
        vals[rows] = origin_vals[:, None, :] + np.einsum("rij,rsj->rsi", slopes,
                                                         x[rows] - origins[:, None, :])
        jacs[rows] = slopes[:, None]
    for rows in groups.values():
        p = fmap.pieces[int(hosts[rows[0]])]
        pts = x[rows].reshape(-1, big_n)
        vals[rows] = p.value(pts).reshape(len(rows), s, n)
        jacs[rows] = p.jacobian(pts).reshape(len(rows), s, n, big_n)
    return vals, jacs


def tangent_projectors(k: SimplicialComplex) -> np.ndarray:
    _, e, einv = k.cell_geometry
    return e @ einv  # (c, N, N)


def c0_c1_distance(f: PiecewiseMap, g: PiecewiseMap, samples_per_edge: int = SAMPLES_PER_EDGE
                   ) -> tuple[float, float]:
    """Sup distances of values and of tangential derivatives (operator norm).

    Both maps are compared on the finer of their complexes.  Sampling uses
    a barycentric grid that contains the vertices, so for two PL maps the
    value distance is exact and the slope distance is exact per cell.
    """
    if f.target_dim != g.target_dim:
        raise ValueError("maps have different targets")
    k, hf, hg = _common_refinement(f, g)
    if len(k.cells) == 0:
        return 0.0, 0.0
    both_pl = f.is_pl and g.is_pl
    grid = barycentric_grid(k.dim, 2 if both_pl else samples_per_edge)
    pts = np.einsum("sv,cvN->csN", grid, k.coords[k.cell_array])
    vf, jf = _sample(f, hf, pts)
    vg, jg = _sample(g, hg, pts)
    c0 = float(np.abs(vf - vg).max()) if vf.size else 0.0
    proj = tangent_projectors(k)
    diff = np.einsum("csij,cjk->csik", jf - jg, proj)
    c1 = float(operator_norms(diff).max()) if diff.size else 0.0
    return c0, c1


def c1_distance_per_cell(f: PiecewiseMap, g: PiecewiseMap, samples_per_edge: int = SAMPLES_PER_EDGE
                         ) -> np.ndarray:
    """Per-cell C^1 distance on f's complex, which must refine g's or equal it."""
    hg = host_cells(g.complex, f.complex)
    k = f.complex
    grid = barycentric_grid(k.dim, 2 if (f.is_pl and g.is_pl) else samples_per_edge)
    pts = np.einsum("sv,cvN->csN", grid, k.coords[k.cell_array])
    _, jf = _sample(f, np.arange(len(k.cells)), pts)
    _, jg = _sample(g, hg, pts)
    diff = np.einsum("csij,cjk->csik", jf - jg, tangent_projectors(k))
    return operator_norms(diff).max(axis=1)


# ---------------------------------------------------------------------------
# moving maps to subdivisions


def _values_at_vertices(s: PiecewiseMap, fine: SimplicialComplex, hosts: np.ndarray) -> np.ndarray:
    coarse = s.complex
    out = np.empty((fine.n_vertices, s.target_dim))
    cell_of: dict[int, int] = {}
    for j, c in enumerate(fine.cells):
        for v in c:
            cell_of.setdefault(v, j)
    known = coarse.key_index
    src_vals = s.vertex_values
    groups: dict[int, list[int]] = {}
    affine: list[int] = []
    for v in range(fine.n_vertices):
        old = known.get(fine.keys[v])
        if old is not None:
            out[v] = src_vals[old]
            continue
        h = int(hosts[cell_of[v]])
        p = s.piece_or_none(h)
        if p is None:
            affine.append(v)
        else:
            groups.setdefault(id(p), []).append(v)
    if affine:
        vs = np.array(affine)
        hs = hosts[[cell_of[v] for v in affine]]
        if coarse.root is None and fine.root_complex is coarse:
            # exact dyadic weights over the vertices of the host cell
            for v, h in zip(vs, hs):
                w = fine.keys[v]
                out[v] = sum(float(c) * src_vals[u] for u, c in w)
        else:
            origins, _, einv = coarse.cell_geometry
            lam = np.einsum("rmN,rN->rm", einv[hs], fine.coords[vs] - origins[hs])
            bary = np.hstack([1.0 - lam.sum(axis=1, keepdims=True), lam])
            out[vs] = np.einsum("rv,rvn->rn", bary, src_vals[coarse.cell_array[hs]])
    for vs in groups.values():
        h = int(hosts[cell_of[vs[0]]])
        out[vs] = s.pieces[h].value(fine.coords[vs])
    return out


def transfer(s: PiecewiseMap, fine: SimplicialComplex) -> PiecewiseMap:
    """The same function, viewed as piecewise with respect to a subdivision."""
    if fine is s.complex:
        return s
    hosts = host_cells(s.complex, fine)
    vals = _values_at_vertices(s, fine, hosts)
    if s.is_pl:
        return PiecewiseMap(fine, s.target_dim, vals)
    pieces = tuple(s.piece_or_none(int(h)) for h in hosts)
    if any(p is None for p in pieces):
        # affine coarse pieces stay affine on the fine cells
        pieces = tuple(p if p is not None else s.piece(int(h)) for p, h in zip(pieces, hosts))
    return PiecewiseMap(fine, s.target_dim, vals, pieces)


def linearize(s: PiecewiseMap, level: int) -> PiecewiseMap:
    """PL map on the level-th crystalline subdivision agreeing with s at its vertices."""
    fine = crystalline_subdivide(s.complex, level)
    if fine is s.complex:
        return PiecewiseMap(fine, s.target_dim, s.vertex_values)
    hosts = host_cells(s.complex, fine)
    return PiecewiseMap(fine, s.target_dim, _values_at_vertices(s, fine, hosts))


# ---------------------------------------------------------------------------
# interpolation and join over a single simplex


def _split(points, a: Sequence[int], b: Sequence[int]) -> tuple[np.ndarray, list[int], list[int]]:
    pts = np.asarray(points, float)
    a, b = sorted(int(i) for i in a), sorted(int(i) for i in b)
    if not a or not b or set(a) & set(b) or sorted(a + b) != list(range(len(pts))):
        raise ValueError("A and B must be nonempty opposite faces partitioning the vertices")
    return pts, a, b


def join_parameter(points, b: Sequence[int]) -> tuple[np.ndarray, float]:
    """(grad, offset) of the affine function that is 1 on the vertices in b and 0 elsewhere."""
    pts = np.asarray(points, float)
    einv = np.linalg.pinv((pts[1:] - pts[0]).T)  # (m, N)
    grad = np.zeros(pts.shape[1])
    for i in b:
        grad += einv[i - 1] if i > 0 else -einv.sum(axis=0)
    offset = (1.0 if 0 in b else 0.0) - float(pts[0] @ grad)
    return grad, offset


def _as_piece(obj) -> Piece:
    if isinstance(obj, SmoothFunction):
        return SmoothPiece(obj)
    return obj


def interpolate(points, a: Sequence[int], b: Sequence[int], s_a, s_b, swap: bool = False
                ) -> BlendPiece:
    """x -> t(x) s_a(x) + (1 - t(x)) s_b(x), with t the join parameter (0 on A, 1 on B).

    With ``swap`` the weights are exchanged, so the result restricts to s_a on A.
    """
    pts, a, b = _split(points, a, b)
    grad, offset = join_parameter(pts, b)
    first, second = _as_piece(s_a), _as_piece(s_b)
    if swap:
        first, second = second, first
    return BlendPiece(grad, offset, first, second)


def join_map(points, a: Sequence[int], b: Sequence[int], s_a, s_b) -> AffinePiece:
    """The affine map on the simplex agreeing with s_a on face A and with s_b on face B."""
    pts, a, b = _split(points, a, b)

    def on(src, idx):
        if callable(getattr(src, "value", None)):
            return np.atleast_2d(src.value(pts[idx]))
        vals = np.atleast_2d(np.asarray(src, float))
        if len(vals) != len(idx):
            raise ValueError("vertex value array does not match the face")
        return vals

    va, vb = on(s_a, a), on(s_b, b)
    vals = np.empty((len(pts), va.shape[1]))
    vals[a], vals[b] = va, vb
    return affine_from_vertices(pts, vals)


# ---------------------------------------------------------------------------
# relative linearization


def cells_inside(k: SimplicialComplex, region: Region) -> np.ndarray:
    """Boolean mask of cells with every vertex in ``region``."""
    inside = region.contains(k.coords)
    return inside[k.cell_array].all(axis=1)


def linearize_relative(s: PiecewiseMap, sub: Iterable[Simplex], regions: Sequence[Region],
                       level: int) -> PiecewiseMap:
    """Linearize s over the cells ``sub`` of its complex, leaving it alone away from them.

    The regions are convex neighbourhoods of |sub|.  They are processed in the
    given order: on the cells of the level-th subdivision inside a region the
    current map is replaced by its linearization, and on the cells meeting the
    region only partially it is blended with the current map.
    """
    sub = set(sub)
    unknown = sub - set(s.complex.cells)
    if unknown:
        raise ComplexError(f"not cells of the complex: {sorted(unknown)[:5]}")
    fine = crystalline_subdivide(s.complex, level)
    cur = transfer(s, fine)
    if not sub:
        return cur
    hosts = host_cells(s.complex, fine)
    in_sub = np.array([s.complex.cells[int(h)] in sub for h in hosts])
    sub_vertices = np.unique(fine.cell_array[in_sub])
    covered = np.zeros(fine.n_vertices, bool)
    masks = [cells_inside(fine, u) for u in regions]
    for u in regions:
        covered |= u.contains(fine.coords)
    if not covered[sub_vertices].all():
        bad = int(sub_vertices[~covered[sub_vertices]][0])
        raise ValueError(f"regions do not cover the subcomplex (vertex {fine.keys[bad]})")
    touching = np.isin(fine.cell_array, sub_vertices).any(axis=1)
    housed = np.any(masks, axis=0) if masks else np.zeros(len(fine.cells), bool)
    if not housed[touching].all():
        bad = fine.cells[int(np.nonzero(touching & ~housed)[0][0])]
        raise InsufficientLevelError(
            f"level {level} too small: cell {bad} meets the subcomplex but lies in no region", level)
    for mask in masks:
        cur = _linearize_on(cur, mask)
    return cur


def _linearize_on(cur: PiecewiseMap, inside: np.ndarray) -> PiecewiseMap:
    k = cur.complex
    vals = cur.vertex_values
    in_verts = np.zeros(k.n_vertices, bool)
    in_verts[k.cell_array[inside].ravel()] = True
    pieces = list(cur.pieces) if cur.pieces is not None else [None] * len(k.cells)
    for i, c in enumerate(k.cells):
        if pieces[i] is None:
            continue
        if inside[i]:
            pieces[i] = None
            continue
        flags = in_verts[list(c)]
        if not flags.any():
            continue
        a = [j for j, f in enumerate(flags) if f]
        b = [j for j, f in enumerate(flags) if not f]
        pts = k.points(c)
        lin = affine_from_vertices(pts, vals[list(c)])
        pieces[i] = interpolate(pts, a, b, pieces[i], lin)
    return PiecewiseMap(k, cur.target_dim, vals, tuple(pieces))
