"""Embedded, ordered, finite simplicial complexes.

Vertices are identified by their index; the index order is the vertex order
of the complex.  Simplices are strictly increasing tuples of vertex ids, so
every simplex carries the induced ordering.  Besides its coordinates, each
vertex carries an exact *key*: a rational barycentric combination of the
vertices of the root complex it was subdivided from.  Shared vertices of
neighbouring subdivided simplices are identified through these keys, never
through floating point comparison.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .regions import Region

Simplex = tuple[int, ...]
VertexKey = tuple[tuple[int, Fraction], ...]

INDEP_TOL = 1e-9
GEOM_TOL = 1e-9


class DegenerateSimplexError(ValueError):
    pass


class ComplexError(ValueError):
    pass


def root_key(vid: int) -> VertexKey:
    return ((vid, Fraction(1)),)


def combine_keys(weights: Sequence[Fraction], keys: Sequence[VertexKey]) -> VertexKey:
    """Exact key of the point sum_k weights[k] * keys[k]."""
    acc: dict[int, Fraction] = defaultdict(Fraction)
    for w, key in zip(weights, keys):
        if w == 0:
            continue
        for vid, c in key:
            acc[vid] += w * c
    return tuple(sorted((vid, c) for vid, c in acc.items() if c != 0))


# ---------------------------------------------------------------------------
# shape functionals


def _edges(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return (pts[1:] - pts[0]).T  # N x m


def rmax(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=-1)).max())


def is_degenerate(points) -> bool:
    pts = np.asarray(points, dtype=float)
    m = len(pts) - 1
    if m == 0:
        return False
    e = _edges(pts)
    if m > e.shape[0]:
        return True
    gram = e.T @ e
    vol = np.sqrt(max(np.linalg.det(gram), 0.0))
    return bool(vol <= INDEP_TOL * rmax(pts) ** m)


def _require_nondegenerate(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if is_degenerate(pts):
        raise DegenerateSimplexError("degenerate simplex")
    return pts


def rmin(points) -> float:
    """Smallest distance from a vertex to the affine span of its opposite face."""
    pts = _require_nondegenerate(points)
    m = len(pts) - 1
    if m == 0:
        raise DegenerateSimplexError("rmin is undefined for a point")
    best = np.inf
    for i in range(m + 1):
        rest = np.delete(pts, i, axis=0)
        e = (rest[1:] - rest[0]).T
        d = pts[i] - rest[0]
        if e.shape[1]:
            coef, *_ = np.linalg.lstsq(e, d, rcond=None)
            d = d - e @ coef
        best = min(best, float(np.linalg.norm(d)))
    return best


def lambda_coeff(points) -> float:
    """Largest coefficient |lambda_i| over unit vectors sum lambda_j (v_j - v_0).

    The coefficient map is the left inverse of the edge matrix, so the sup
    over the unit sphere of its span is the Euclidean norm of a row.
    """
    pts = _require_nondegenerate(points)
    if len(pts) < 2:
        raise DegenerateSimplexError("lambda is undefined for a point")
    pinv = np.linalg.pinv(_edges(pts))
    return float(np.linalg.norm(pinv, axis=1).max())


@dataclass(frozen=True)
class SimplexFrame:
    """T(e_i) = v_i - v_0, together with its inverse on the span of the edges."""

    origin: np.ndarray
    forward: np.ndarray  # N x m
    inverse: np.ndarray  # m x N, zero on the orthogonal complement

    def to_ambient(self, x):
        return np.asarray(x, float) @ self.forward.T

    def to_local(self, y):
        return np.asarray(y, float) @ self.inverse.T


def simplex_frame(points) -> SimplexFrame:
    pts = _require_nondegenerate(points)
    e = _edges(pts)
    return SimplexFrame(pts[0].copy(), e, np.linalg.pinv(e))


def signed_volume(points) -> float:
    """Oriented volume of a full-dimensional simplex (m == N)."""
    pts = np.asarray(points, dtype=float)
    e = _edges(pts)
    m = e.shape[1]
    return float(np.linalg.det(e) / math.factorial(m)) if m else 1.0


def unsigned_volume(points) -> float:
    pts = np.asarray(points, dtype=float)
    e = _edges(pts)
    m = e.shape[1]
    if m == 0:
        return 1.0
    return float(np.sqrt(max(np.linalg.det(e.T @ e), 0.0)) / math.factorial(m))


def faces(simplex: Simplex, dim: int | None = None) -> Iterable[Simplex]:
    """All nonempty faces of ``simplex`` (of one dimension when ``dim`` is given)."""
    sizes = range(1, len(simplex) + 1) if dim is None else [dim + 1]
    for k in sizes:
        yield from itertools.combinations(simplex, k)


# ---------------------------------------------------------------------------
# complexes


class Subcomplex(frozenset):
    """Face-closed set of simplices sharing the vertex table of a parent complex."""

    sampled: bool = False

    def __new__(cls, simplices=(), sampled: bool = False):
        obj = super().__new__(cls, simplices)
        obj.sampled = sampled
        return obj

    @cached_property
    def vertices(self) -> frozenset:
        return frozenset(s[0] for s in self if len(s) == 1)

    def tops(self, dim: int) -> list[Simplex]:
        return sorted(s for s in self if len(s) == dim + 1)


def closure(simplices: Iterable[Simplex]) -> Subcomplex:
    out: set[Simplex] = set()
    for s in simplices:
        if s in out:
            continue
        out.update(faces(s))
    return Subcomplex(out)


@dataclass(frozen=True, eq=False)
class Lineage:
    """Where a cell of a subdivided complex comes from."""

    parent: Simplex  # top cell of the root complex containing it
    level: int  # dyadic scale exponent relative to the root
    kind: str = "crystalline"  # or "cone"


@dataclass(frozen=True, eq=False)
class SimplicialComplex:
    coords: np.ndarray
    cells: tuple[Simplex, ...]
    keys: tuple[VertexKey, ...] | None = None
    lineage: tuple[Lineage, ...] | None = None
    root: "SimplicialComplex | None" = field(default=None, repr=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2:
            raise ComplexError("coordinates must be an (n_vertices, N) array")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        nv = len(coords)
        cells = []
        for c in self.cells:
            c = tuple(int(v) for v in c)
            if any(b <= a for a, b in zip(c, c[1:])):
                raise ComplexError(f"simplex {c} is not strictly increasing in the vertex order")
            if c and (c[0] < 0 or c[-1] >= nv):
                raise ComplexError(f"simplex {c} references an unknown vertex")
            cells.append(c)
        if self.lineage is not None and len(self.lineage) != len(cells):
            raise ComplexError("lineage must align with cells")
        object.__setattr__(self, "cells", tuple(cells))
        if self.keys is None:
            object.__setattr__(self, "keys", tuple(root_key(i) for i in range(nv)))
        elif len(self.keys) != nv:
            raise ComplexError("one key per vertex is required")

    # -- basic structure ----------------------------------------------------
    @classmethod
    def from_simplices(cls, coords, simplices: Iterable[Sequence[int]]) -> "SimplicialComplex":
        """Build from any list of simplices; only the maximal ones are kept as cells."""
        simp = {tuple(sorted(int(v) for v in s)) for s in simplices}
        maximal = []
        by_size = sorted(simp, key=len, reverse=True)
        covered: set[Simplex] = set()
        for s in by_size:
            if s in covered:
                continue
            maximal.append(s)
            covered.update(faces(s))
        return cls(np.asarray(coords, float), tuple(sorted(maximal)))

    @property
    def ambient_dim(self) -> int:
        return self.coords.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.coords)

    @cached_property
    def dim(self) -> int:
        return max((len(c) - 1 for c in self.cells), default=-1)

    @property
    def is_pure(self) -> bool:
        return all(len(c) - 1 == self.dim for c in self.cells)

    @cached_property
    def tops(self) -> tuple[Simplex, ...]:
        return tuple(c for c in self.cells if len(c) - 1 == self.dim)

    @cached_property
    def top_index(self) -> dict[Simplex, int]:
        return {c: i for i, c in enumerate(self.cells)}

    @cached_property
    def simplices(self) -> Subcomplex:
        return closure(self.cells)

    @cached_property
    def vertex_cells(self) -> dict[int, list[int]]:
        inc: dict[int, list[int]] = defaultdict(list)
        for i, c in enumerate(self.cells):
            for v in c:
                inc[v].append(i)
        return inc

    @cached_property
    def key_index(self) -> dict[VertexKey, int]:
        return {k: i for i, k in enumerate(self.keys)}

    @property
    def root_complex(self) -> "SimplicialComplex":
        return self if self.root is None else self.root

    def points(self, simplex: Sequence[int]) -> np.ndarray:
        return self.coords[list(simplex)]

    def parent_of(self, cell: Simplex) -> Simplex:
        if self.lineage is None:
            return cell
        return self.lineage[self.top_index[cell]].parent

    def level_of(self, cell: Simplex) -> int:
        if self.lineage is None:
            return 0
        return self.lineage[self.top_index[cell]].level

    def cells_touching(self, vertices: Iterable[int]) -> set[int]:
        out: set[int] = set()
        inc = self.vertex_cells
        for v in vertices:
            out.update(inc.get(v, ()))
        return out

    def require_subcomplex(self, q: Iterable[Simplex]) -> Subcomplex:
        q = q if isinstance(q, Subcomplex) else closure(q)
        missing = [s for s in q if s not in self.simplices]
        if missing:
            raise ComplexError(f"not a subcomplex: {sorted(missing)[:5]} not in K")
        return q

    def subcomplex_of_cells(self, cells: Iterable[Simplex]) -> Subcomplex:
        return closure(cells)

    @cached_property
    def cell_array(self) -> np.ndarray:
        if not self.is_pure:
            raise ComplexError("operation requires a pure complex")
        return np.array(self.cells, dtype=np.int64).reshape(len(self.cells), self.dim + 1)

    @cached_property
    def cell_geometry(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per cell: first vertex (c, N), edge matrix (c, N, m) and its pseudo-inverse (c, m, N)."""
        pts = self.coords[self.cell_array]
        e = np.swapaxes(pts[:, 1:] - pts[:, :1], 1, 2)
        return pts[:, 0], e, np.linalg.pinv(e)

    def __len__(self):
        return len(self.cells)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    missing_faces: list[Simplex] = field(default_factory=list)
    bad_intersections: list[tuple[Simplex, Simplex]] = field(default_factory=list)
    degenerate: list[Simplex] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not (self.missing_faces or self.bad_intersections or self.degenerate)

    def to_json(self) -> dict:
        return {"valid": self.valid,
                "missing_faces": [list(s) for s in self.missing_faces],
                "bad_intersections": [[list(a), list(b)] for a, b in self.bad_intersections],
                "degenerate": [list(s) for s in self.degenerate]}


def missing_faces(simplices: Iterable[Sequence[int]]) -> list[Simplex]:
    """Faces of listed simplices that the list itself does not contain."""
    given = {tuple(sorted(s)) for s in simplices}
    return sorted({f for s in given for f in faces(s) if f not in given})


def _facet_planes(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normals (m+1, N) and offsets of the facets of full-dimensional cells.

    ``pts`` has shape (C, m+1, N) with m == N; facet i is opposite vertex i.
    """
    c, n1, n = pts.shape
    edges = pts[:, 1:] - pts[:, :1]  # (C, m, N)
    inv = np.linalg.inv(edges.transpose(0, 2, 1))  # rows are barycentric gradients
    grads = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)  # (C, m+1, N)
    normals = -grads / np.linalg.norm(grads, axis=2, keepdims=True)
    # facet i passes through vertex (i+1) mod (m+1)
    anchor = pts[:, (np.arange(n1) + 1) % n1]
    offsets = np.einsum("cin,cin->ci", normals, anchor)
    return normals, offsets


def _separated_pairs(k: SimplicialComplex, cells: list, pairs: np.ndarray) -> np.ndarray:
    """Vectorized sufficient test that full-dimensional cells meet in a common face.

    Accept a pair when some facet plane of one cell leaves the other cell on
    its closed outer side and only shared vertices lie on the plane; the
    intersection is then contained in the hull of shared vertices.
    """
    arr = np.array(cells)
    pts = k.coords[arr]
    scale = np.sqrt(((pts[:, :, None] - pts[:, None]) ** 2).sum(-1)).max(axis=(1, 2))
    normals, offsets = _facet_planes(pts)
    ok = np.zeros(len(pairs), dtype=bool)
    for first, second in ((0, 1), (1, 0)):
        ia, ib = pairs[:, first], pairs[:, second]
        h = np.einsum("pin,pjn->pij", normals[ia], pts[ib]) - offsets[ia][:, :, None]
        tol = GEOM_TOL * np.maximum(scale[ia], scale[ib])[:, None, None]
        shared = (arr[ib][:, :, None] == arr[ia][:, None, :]).any(axis=2)  # (P, m+1) over b
        outside = h >= -tol
        on_plane = h <= tol
        clean = ~on_plane | shared[:, None, :]
        ok |= np.any(np.all(outside & clean, axis=2), axis=1)
    return ok


def _meet_in_shared(k: SimplicialComplex, a: Sequence[int], b: Sequence[int], depth: int = 0
                    ) -> bool:
    """Exact sufficient test that |a| ∩ |b| lies in the hull of their shared vertices.

    Looks for a facet plane of one simplex (inside the affine span of both)
    that leaves the other on its closed outer side.  Vertices of the other
    simplex on that plane which are not shared reduce the question to the
    facet and those vertices, one dimension lower.
    """
    a, b = list(a), list(b)
    shared = set(a) & set(b)
    if set(b) <= shared or set(a) <= shared:
        return True
    if depth > 2 * k.ambient_dim + 2:
        return False
    pts = k.coords[a + b]
    origin = pts[0]
    u, sv, vt = np.linalg.svd(pts - origin, full_matrices=False)
    scale = max(rmax(pts), 1e-300)
    rank = int((sv > GEOM_TOL * scale).sum())
    basis = vt[:rank]
    for first, second in ((a, b), (b, a)):
        p1 = (k.coords[first] - origin) @ basis.T
        p2 = (k.coords[second] - origin) @ basis.T
        if len(first) != rank + 1:
            continue
        if rank == 0:
            continue
        e = (p1[1:] - p1[0]).T
        grads = np.linalg.inv(e)
        grads = np.vstack([-grads.sum(axis=0), grads])
        for i in range(len(first)):
            normal = -grads[i] / np.linalg.norm(grads[i])
            off = normal @ p1[(i + 1) % len(first)]
            h = p2 @ normal - off
            tol = GEOM_TOL * scale
            if np.any(h < -tol):
                continue
            on = [v for v, hv in zip(second, h) if hv <= tol]
            if all(v in shared for v in on):
                return True
            facet = [v for j, v in enumerate(first) if j != i]
            if _meet_in_shared(k, facet, on, depth + 1):
                return True
    if rank == 0:
        # all points coincide geometrically but ids differ
        return False
    return False


def _intersection_is_face(k: SimplicialComplex, a: Simplex, b: Simplex) -> bool:
    """LP test: no point of |a| ∩ |b| has weight on the non-shared vertices of a."""
    from scipy.optimize import linprog

    shared = set(a) & set(b)
    pa, pb = k.coords[list(a)], k.coords[list(b)]
    na, nb = len(a), len(b)
    cost = np.zeros(na + nb)
    for i, v in enumerate(a):
        if v not in shared:
            cost[i] = -1.0
    if not cost.any():
        return True
    a_eq = np.zeros((k.ambient_dim + 2, na + nb))
    a_eq[: k.ambient_dim, :na] = pa.T
    a_eq[: k.ambient_dim, na:] = -pb.T
    a_eq[k.ambient_dim, :na] = 1.0
    a_eq[k.ambient_dim + 1, na:] = 1.0
    b_eq = np.zeros(k.ambient_dim + 2)
    b_eq[-2:] = 1.0
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * (na + nb), method="highs")
    if res.status == 2:  # infeasible: disjoint
        return True
    return bool(-res.fun <= 1e-7)


def validate_complex(k: SimplicialComplex, declared: Iterable[Sequence[int]] | None = None
                     ) -> ValidationReport:
    """Check the simplicial complex axioms on the realization of ``k``.

    ``declared`` is an explicit simplex list (as read from a file) whose face
    closure is checked; the in-memory complex is face closed by construction.
    """
    from scipy.spatial import cKDTree

    report = ValidationReport()
    if declared is not None:
        report.missing_faces = missing_faces(declared)
    for c in k.cells:
        if len(c) > 1 and is_degenerate(k.points(c)):
            report.degenerate.append(c)
    cells = [c for c in k.cells if c not in set(report.degenerate)]
    if len(cells) < 2:
        return report
    cent = np.array([k.points(c).mean(axis=0) for c in cells])
    rad = np.array([np.linalg.norm(k.points(c) - cent[i], axis=1).max()
                    for i, c in enumerate(cells)])
    lo = np.array([k.points(c).min(axis=0) for c in cells])
    hi = np.array([k.points(c).max(axis=0) for c in cells])
    tree = cKDTree(cent)
    pairs = np.array(sorted(tree.query_pairs(2 * rad.max() * (1 + 1e-9) + 1e-12)),
                     dtype=np.int64).reshape(-1, 2)
    if not len(pairs):
        return report
    i, j = pairs[:, 0], pairs[:, 1]
    tol = GEOM_TOL * np.maximum(rad[i], rad[j])[:, None]
    near = np.linalg.norm(cent[i] - cent[j], axis=1) <= rad[i] + rad[j] + 1e-12
    near &= ~np.any((lo[i] > hi[j] + tol) | (lo[j] > hi[i] + tol), axis=1)
    pairs = pairs[near]
    full = len({len(c) for c in cells}) == 1 and len(cells[0]) == k.ambient_dim + 1
    if full and len(pairs):
        pairs = pairs[~_separated_pairs(k, cells, pairs)]
    for i, j in pairs:
        a, b = cells[i], cells[j]
        if _meet_in_shared(k, a, b):
            continue
        if not _intersection_is_face(k, a, b):
            report.bad_intersections.append((a, b))
    return report


# ---------------------------------------------------------------------------
# neighbourhoods


def star(k: SimplicialComplex, q: Iterable[Simplex]) -> Subcomplex:
    """All simplices meeting ``q`` in at least a vertex, plus their faces."""
    q = k.require_subcomplex(q)
    verts = {s[0] for s in q if len(s) == 1}
    return closure(k.cells[i] for i in k.cells_touching(verts))


def star_n(k: SimplicialComplex, q: Iterable[Simplex], n: int) -> Subcomplex:
    out = k.require_subcomplex(q)
    for _ in range(n):
        out = star(k, out)
    return out


def ring(k: SimplicialComplex, q: Iterable[Simplex]) -> Subcomplex:
    """Closure of star(q) minus q."""
    q = k.require_subcomplex(q)
    return closure(s for s in star(k, q) if s not in q)


def max_subcomplex_in(k: SimplicialComplex, region: Region) -> Subcomplex:
    """Largest subcomplex whose simplices all lie in ``region``."""
    inside = region.contains(k.coords)
    sampled = not region.convex
    out = []
    for s in k.simplices:
        if not all(inside[v] for v in s):
            continue
        if sampled and len(s) > 1:
            pts = k.points(s)
            probes = [pts.mean(axis=0)] + [(pts[i] + pts[j]) / 2
                                           for i, j in itertools.combinations(range(len(s)), 2)]
            if not np.all(region.contains(np.array(probes))):
                continue
        out.append(s)
    if sampled:
        # sampled acceptance need not be face closed in degenerate cases
        keep = set(out)
        out = [s for s in out if all(f in keep for f in faces(s))]
    return Subcomplex(out, sampled=sampled)


def is_nice(k: SimplicialComplex, q: Iterable[Simplex]) -> bool:
    """Every simplex of star(q) meets q in a single face (its q-vertices' span)."""
    q = k.require_subcomplex(q)
    for s in star(k, q):
        inter = {f for f in faces(s) if f in q}
        if not inter:
            continue
        verts = tuple(v for v in s if (v,) in q)
        if set(faces(verts)) != inter:
            return False
    return True


def is_nice_by_hull(k: SimplicialComplex, q: Iterable[Simplex]) -> bool:
    """Niceness via the convex hull criterion: simplices spanned by q-vertices are in q."""
    q = k.require_subcomplex(q)
    qv = {s[0] for s in q if len(s) == 1}
    return all(s in q for s in k.simplices if all(v in qv for v in s))


# ---------------------------------------------------------------------------
# colorings


@dataclass(frozen=True)
class Coloring:
    colors: dict  # top simplex -> color index

    @property
    def size(self) -> int:
        """Largest color index C; colors range over [0, C]."""
        return max(self.colors.values(), default=-1)

    @property
    def n_colors(self) -> int:
        return self.size + 1

    def color_class(self, i: int) -> list[Simplex]:
        return sorted(s for s, c in self.colors.items() if c == i)


def star_vertex_sets(k: SimplicialComplex, cells: Sequence[Simplex] | None = None
                     ) -> dict[Simplex, frozenset]:
    cells = k.tops if cells is None else cells
    out = {}
    for c in cells:
        vs: set[int] = set()
        for i in k.cells_touching(c):
            vs.update(k.cells[i])
        out[c] = frozenset(vs)
    return out


def interaction_graph(k: SimplicialComplex, cells: Sequence[Simplex] | None = None
                      ) -> dict[Simplex, set[Simplex]]:
    """a ~ b iff star(a) and star(b) share a simplex (equivalently a vertex)."""
    stars = star_vertex_sets(k, cells)
    bucket: dict[int, list[Simplex]] = defaultdict(list)
    for c, vs in stars.items():
        for v in vs:
            bucket[v].append(c)
    graph: dict[Simplex, set[Simplex]] = {}
    for c, vs in stars.items():
        nb: set[Simplex] = set()
        for v in vs:
            nb.update(bucket[v])
        nb.discard(c)
        graph[c] = nb
    return graph


def greedy_color(k: SimplicialComplex, cells: Sequence[Simplex] | None = None) -> Coloring:
    """Smallest-free-color greedy coloring in lexicographic order of the cells."""
    if not k.is_pure:
        raise ComplexError("greedy_color requires a pure complex")
    graph = interaction_graph(k, cells)
    colors: dict[Simplex, int] = {}
    for c in sorted(graph):
        used = {colors[n] for n in graph[c] if n in colors}
        colors[c] = next(i for i in itertools.count() if i not in used)
    return Coloring(colors)


def coloring_violations(k: SimplicialComplex, coloring: Coloring) -> list[tuple[Simplex, Simplex]]:
    graph = interaction_graph(k, list(coloring.colors))
    bad = []
    for a, nbs in graph.items():
        for b in nbs:
            if a < b and coloring.colors[a] == coloring.colors[b]:
                bad.append((a, b))
    return bad
