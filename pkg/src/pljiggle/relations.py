"""First-order jets and open, fiberwise dense relations.

Jets over a cell live in an isometric chart of that cell: the identity when
the cell is full dimensional, otherwise an orthonormal frame of its tangent
plane.  Isometric charts keep slope distances equal to the ambient C^1
distance used by :mod:`pljiggle.maps`.

Every relation is a :class:`RelationOracle` with a ``margin`` (0 outside the
relation, positive inside) and a deterministic ``fiber_perturb`` that tilts
only the slope of a jet.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .complex import Simplex, SimplicialComplex, faces
from .functions import REGISTRY, SmoothFunction

RANK_TOL = 1e-12
THETA = 1.0 / 16.0
K_MAX = 20


class RelationError(ValueError):
    pass


class FiberPerturbError(RelationError):
    pass


# ---------------------------------------------------------------------------
# jets and charts


@dataclass(frozen=True, eq=False)
class Jet1:
    base: np.ndarray  # (m,)
    value: np.ndarray  # (n,)
    slope: np.ndarray  # (n, m)

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base, float))
        value = np.atleast_1d(np.asarray(self.value, float))
        slope = np.asarray(self.slope, float).reshape(len(value), len(base))
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "slope", slope)

    @property
    def m(self) -> int:
        return len(self.base)

    @property
    def n(self) -> int:
        return len(self.value)

    def with_slope(self, slope) -> "Jet1":
        return Jet1(self.base, self.value, slope)


def jet_distance(a: Jet1, b: Jet1) -> float:
    """Max of base, value and slope (operator norm) distances."""
    return max(float(np.linalg.norm(a.base - b.base)), float(np.linalg.norm(a.value - b.value)),
               float(np.linalg.norm(a.slope - b.slope, ord=2)))


@dataclass(frozen=True, eq=False)
class CellChart:
    origin: np.ndarray  # (N,)
    frame: np.ndarray  # (N, m), orthonormal columns

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    def to_chart(self, x) -> np.ndarray:
        return (np.atleast_2d(np.asarray(x, float)) - self.origin) @ self.frame

    def to_ambient(self, y) -> np.ndarray:
        return self.origin + np.atleast_2d(np.asarray(y, float)) @ self.frame.T

    def slope_to_chart(self, jac) -> np.ndarray:
        return np.asarray(jac, float) @ self.frame

    def slope_to_ambient(self, slope) -> np.ndarray:
        return np.asarray(slope, float) @ self.frame.T


def cell_chart(points) -> CellChart:
    pts = np.asarray(points, float)
    big_n, m = pts.shape[1], len(pts) - 1
    if m == big_n:
        return CellChart(np.zeros(big_n), np.eye(big_n))
    q, r = np.linalg.qr((pts[1:] - pts[0]).T)
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return CellChart(pts[0].copy(), q)


def linear_extension(jet: Jet1, domain=None):
    """The affine map with the given 1-jet at its base point, in ambient coordinates."""
    from .maps import AffinePiece

    chart = domain if isinstance(domain, CellChart) else (
        cell_chart(domain) if domain is not None else CellChart(np.zeros(jet.m), np.eye(jet.m)))
    if chart.dim != jet.m:
        raise RelationError(f"jet has base dimension {jet.m}, domain chart has dimension {chart.dim}")
    return AffinePiece(chart.to_ambient(jet.base)[0], jet.value.copy(),
                       chart.slope_to_ambient(jet.slope))


def jet_of(piece, x, chart: CellChart) -> Jet1:
    """1-jet of a piece at the ambient point x, expressed in the chart."""
    x = np.atleast_2d(np.asarray(x, float))
    return Jet1(chart.to_chart(x)[0], piece.value(x)[0], chart.slope_to_chart(piece.jacobian(x)[0]))


# ---------------------------------------------------------------------------
# distributions


def orthonormal_frame(vectors) -> np.ndarray:
    a = np.atleast_2d(np.asarray(vectors, float))
    q, r = np.linalg.qr(a)
    d = np.abs(np.diag(r))
    if d.size and d.min() <= 1e-12 * max(d.max(), 1.0):
        raise RelationError("distribution frame is rank deficient")
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class Distribution:
    """A rank-r plane field on R^n, given by an orthonormal frame at each point."""

    dim: int
    rank: int
    raw: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    basis: np.ndarray | None = None  # (n, r) for constant fields
    lipschitz: float = 0.0
    spec: dict = field(default_factory=dict)

    @classmethod
    def constant(cls, vectors: Sequence[Sequence[float]]) -> "Distribution":
        """Span of the given vectors (one per row)."""
        vecs = np.atleast_2d(np.asarray(vectors, float))
        basis = orthonormal_frame(vecs.T) if len(vecs) else np.zeros((vecs.shape[1], 0))
        basis.setflags(write=False)
        return cls(vecs.shape[1], basis.shape[1], None, basis, 0.0,
                   {"kind": "constant", "vectors": vecs.tolist()})

    @classmethod
    def from_function(cls, fn: SmoothFunction, rank: int, lipschitz: float = 0.0) -> "Distribution":
        """Plane spanned by the columns of fn(y) reshaped to (n, rank)."""
        n = fn.in_dim
        if fn.out_dim != n * rank:
            raise RelationError(f"function must return {n * rank} numbers per point")
        return cls(n, rank, lambda y: fn.value(y).reshape(len(y), n, rank), None, lipschitz,
                   {"kind": "registry", "rank": rank, **fn.to_json(), "L_xi": lipschitz})

    @property
    def is_constant(self) -> bool:
        return self.basis is not None

    def frame(self, y) -> np.ndarray:
        if self.basis is not None:
            return self.basis
        y = np.atleast_2d(np.asarray(y, float))
        return orthonormal_frame(self.raw(y)[0])

    def frames(self, ys) -> np.ndarray:
        ys = np.atleast_2d(np.asarray(ys, float))
        if self.basis is not None:
            return np.broadcast_to(self.basis, (len(ys),) + self.basis.shape)
        return np.array([orthonormal_frame(a) for a in self.raw(ys)])

    def to_json(self) -> dict:
        return dict(self.spec)


def distribution_from_json(data: dict, dim: int | None = None) -> Distribution:
    kind = data.get("kind", "constant")
    if kind == "constant":
        return Distribution.constant(data["vectors"])
    if kind == "registry":
        fn = REGISTRY.create(data["name"], data.get("params", []), int(data.get("dim", dim or 0)))
        return Distribution.from_function(fn, int(data["rank"]), float(data.get("L_xi", 0.0)))
    raise RelationError(f"unknown distribution kind {kind!r}")


# ---------------------------------------------------------------------------
# linear-algebra margins


def sigma(mat: np.ndarray, k: int) -> float:
    """k-th largest singular value (1-based); 0 if k exceeds the rank bound."""
    if k <= 0:
        return np.inf
    if k > min(mat.shape):
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[k - 1])


def _clip(x: float) -> float:
    return x if x > RANK_TOL else 0.0


def transversality_margin(slope: np.ndarray, xi: np.ndarray) -> float:
    n, m = slope.shape
    k = min(n, m + xi.shape[1])
    return _clip(sigma(np.hstack([slope, xi]), k))


def pullback_plane(slope: np.ndarray, xi: np.ndarray) -> tuple[np.ndarray | None, float]:
    """Orthonormal basis of slope^{-1}(xi) and the transversality margin of slope to xi.

    Returns (None, 0) when slope is not transverse to xi.
    """
    n, m = slope.shape
    r = xi.shape[1]
    mu = transversality_margin(slope, xi)
    if mu == 0.0:
        return None, 0.0
    comp = slope - xi @ (xi.T @ slope)  # component normal to xi
    want = max(m + r - n, 0)
    rank = m - want
    _, s, vt = np.linalg.svd(comp)
    if rank > 0 and (len(s) < rank or s[rank - 1] <= RANK_TOL):
        return None, 0.0
    return vt[rank:].T.copy(), mu


def subspace_margin(v: np.ndarray, w: np.ndarray) -> float:
    """How far span(v) + span(w) is from losing its generic dimension."""
    m = v.shape[0]
    d, r = v.shape[1], w.shape[1]
    k = min(m, d + r)
    if k == 0:
        return 1.0
    return _clip(sigma(np.hstack([v, w]), k))


# ---------------------------------------------------------------------------
# oracle contract


def _unit(mat: np.ndarray) -> np.ndarray:
    return mat / np.linalg.norm(mat, ord=2)


def generic_directions(n: int, m: int) -> list[np.ndarray]:
    """Fixed direction set: elementary matrices, a diagonal and a few generic matrices, each ±."""
    out = []
    for a, b in itertools.product(range(n), range(m)):
        e = np.zeros((n, m))
        e[a, b] = 1.0
        out.append(e)
    out.append(np.eye(n, m))
    gen = np.random.default_rng(20_161_027)
    out.extend(_unit(gen.normal(size=(n, m))) for _ in range(8))
    return [s * d for d in out for s in (1.0, -1.0)]


class RelationOracle:
    """Base class.  Subclasses implement ``margin`` and may refine ``directions``."""

    name = "relation"
    value_dependent = False

    def margin(self, jet: Jet1) -> float:
        raise NotImplementedError

    def contains(self, jet: Jet1) -> bool:
        return self.margin(jet) > 0.0

    def lipschitz(self, jet: Jet1) -> float:
        """Factor L such that jets within margin / (2 L) stay inside."""
        return 1.0

    def directions(self, jet: Jet1) -> list[np.ndarray]:
        return generic_directions(jet.n, jet.m)

    def for_cell(self, k: SimplicialComplex, cell: Simplex) -> "RelationOracle":
        return self

    def fiber_perturb(self, jet: Jet1, eps: float, theta: float = THETA, k_max: int = K_MAX) -> Jet1:
        """Same base and value, slope moved by less than eps, margin >= theta * eps."""
        if eps <= 0:
            raise FiberPerturbError("eps must be positive")
        target = theta * eps
        if self.margin(jet) >= target:
            return jet
        dirs = self.directions(jet)
        for k in range(1, k_max + 1):
            step = eps * (1.0 - 2.0 ** (-k))
            for d in dirs:
                cand = jet.with_slope(jet.slope + step * d)
                if self.margin(cand) >= target:
                    return cand
        raise FiberPerturbError(
            f"{self.name}: no slope tilt below {eps:g} reaches margin {target:g} "
            f"(base {jet.base.tolist()}, value {jet.value.tolist()})")

    def to_json(self) -> dict:
        return {"relation": self.name}


class MaxRankRelation(RelationOracle):
    name = "maxrank"

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n

    def margin(self, jet: Jet1) -> float:
        return _clip(sigma(jet.slope, min(jet.m, jet.n)))

    def to_json(self):
        return {"relation": self.name}


class TransversalityRelation(RelationOracle):
    name = "transverse"

    def __init__(self, xi: Distribution, m: int):
        self.xi, self.m = xi, m
        self.value_dependent = not xi.is_constant

    def margin(self, jet: Jet1) -> float:
        return transversality_margin(jet.slope, self.xi.frame(jet.value))

    def lipschitz(self, jet: Jet1) -> float:
        return 1.0 + self.xi.lipschitz

    def to_json(self):
        return {"relation": self.name, "xi": self.xi.to_json()}


def cross_matrix(u) -> np.ndarray:
    u = np.asarray(u, float)
    return np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])


def curl(a: np.ndarray) -> np.ndarray:
    """Curl of the linear vector field with Jacobian a: (a32 - a23, a13 - a31, a21 - a12)."""
    return np.array([a[2, 1] - a[1, 2], a[0, 2] - a[2, 0], a[1, 0] - a[0, 1]])


class Contact3DRelation(RelationOracle):
    """alpha = s . dx is contact at a jet iff <s, curl A> != 0."""

    name = "contact3d"
    value_dependent = True

    def _check(self, jet: Jet1):
        if jet.n != 3 or jet.m != 3:
            raise RelationError("contact3d needs jets of maps R^3 -> R^3")
        if not np.any(jet.value):
            raise RelationError("value 0 is outside the complement of the zero section")

    def pairing(self, jet: Jet1) -> float:
        self._check(jet)
        return float(jet.value @ curl(jet.slope))

    def margin(self, jet: Jet1) -> float:
        return _clip(abs(self.pairing(jet)) / (1.0 + np.linalg.norm(jet.value)))

    def lipschitz(self, jet: Jet1) -> float:
        s = np.linalg.norm(jet.value)
        return (np.linalg.norm(curl(jet.slope)) + np.sqrt(6.0) * (s + 1.0)) / (1.0 + s)

    def directions(self, jet: Jet1) -> list[np.ndarray]:
        self._check(jet)
        c = self.pairing(jet)
        sign = 1.0 if c >= 0 else -1.0
        u = jet.value / np.linalg.norm(jet.value)
        rot = [sign * cross_matrix(u)] + [s * cross_matrix(e) for e in np.eye(3) for s in (1.0, -1.0)]
        return rot + generic_directions(3, 3)


def face_direction_spaces(points_list: Sequence[np.ndarray], chart: CellChart) -> list[np.ndarray]:
    """Distinct direction spaces of the positive-dimensional faces of the given simplices."""
    seen: dict[tuple, np.ndarray] = {}
    for pts in points_list:
        pts = np.asarray(pts, float)
        for f in faces(tuple(range(len(pts)))):
            if len(f) < 2:
                continue
            e = chart.slope_to_chart((pts[list(f[1:])] - pts[f[0]]))  # (d, m)
            q = orthonormal_frame(e.T)
            key = tuple(np.round(q @ q.T, 9).ravel())
            seen.setdefault(key, q)
    return list(seen.values())


class VeryGeneralPositionRelation(RelationOracle):
    """Faces of every model simplex of the host cell transverse to the pulled back plane."""

    name = "verygenpos"

    def __init__(self, xi: Distribution, catalog=None, root: SimplicialComplex | None = None,
                 spaces: Sequence[np.ndarray] | None = None):
        self.xi = xi
        self.catalog = catalog
        self.root = root
        self.spaces = list(spaces) if spaces is not None else None
        self.value_dependent = not xi.is_constant
        self._cache: dict[tuple, "VeryGeneralPositionRelation"] = {}

    def for_cell(self, k: SimplicialComplex, cell: Simplex) -> "VeryGeneralPositionRelation":
        if self.catalog is None:
            pts = [k.points(cell)]
            return VeryGeneralPositionRelation(self.xi, spaces=face_direction_spaces(pts, cell_chart(pts[0])))
        parent = k.parent_of(cell)
        chart = cell_chart(k.points(cell))
        key = (parent, tuple(np.round(chart.frame, 12).ravel()))
        if key not in self._cache:
            root = self.root if self.root is not None else k.root_complex
            models = [self.catalog.model_points(i, root) for i, md in enumerate(self.catalog.models)
                      if md.parent == parent]
            models.append(root.points(parent))
            self._cache[key] = VeryGeneralPositionRelation(
                self.xi, spaces=face_direction_spaces(models, chart))
        return self._cache[key]

    def margin(self, jet: Jet1) -> float:
        if self.spaces is None:
            raise RelationError("verygenpos oracle must be specialised to a cell with for_cell")
        w, mu = pullback_plane(jet.slope, self.xi.frame(jet.value))
        if w is None:
            return 0.0
        return min([mu] + [subspace_margin(v, w) for v in self.spaces])

    def lipschitz(self, jet: Jet1) -> float:
        xi = self.xi.frame(jet.value)
        comp = jet.slope - xi @ (xi.T @ jet.slope)
        s = np.linalg.svd(comp, compute_uv=False)
        s = s[s > RANK_TOL]
        gap = s.min() if s.size else 1.0
        return (1.0 + self.xi.lipschitz) * (1.0 + 4.0 / gap)

    def to_json(self):
        return {"relation": self.name, "xi": self.xi.to_json()}


def transversality_relation(xi: Distribution, m: int) -> TransversalityRelation:
    return TransversalityRelation(xi, m)


def maxrank_relation(m: int, n: int) -> MaxRankRelation:
    return MaxRankRelation(m, n)


def contact3d_relation() -> Contact3DRelation:
    return Contact3DRelation()


def verygenpos_relation(k: SimplicialComplex, xi: Distribution, catalog=None
                        ) -> VeryGeneralPositionRelation:
    """Very general position over the model catalog of k (built if not given)."""
    from .subdivision import model_simplices

    root = k.root_complex
    return VeryGeneralPositionRelation(xi, catalog if catalog is not None else model_simplices(root),
                                       root)


# ---------------------------------------------------------------------------
# general position of a piecewise map


@dataclass
class GeneralPositionReport:
    margins: dict  # (cell, face) -> min margin over samples
    sampled: bool
    tol: float = RANK_TOL

    @property
    def ok(self) -> bool:
        return all(v > self.tol for v in self.margins.values())

    @property
    def min_margin(self) -> float:
        return min(self.margins.values(), default=np.inf)

    def failures(self) -> list:
        return sorted(k for k, v in self.margins.items() if v <= self.tol)

    def to_json(self) -> dict:
        return {"ok": self.ok, "sampled": self.sampled, "min_margin": self.min_margin,
                "failures": [[list(c), list(f)] for c, f in self.failures()]}


def verify_general_position(f, xi: Distribution, samples_per_edge: int = 3) -> GeneralPositionReport:
    """Check every positive-dimensional face of every cell against the pulled back plane of xi.

    For a constant xi one check per face suffices; otherwise the plane is
    sampled on a barycentric grid of each cell, which is an approximation.
    """
    from .maps import barycentric_grid

    k = f.complex
    margins: dict = {}
    grid = barycentric_grid(k.dim, 1 if xi.is_constant else samples_per_edge)
    if xi.is_constant:
        grid = np.full((1, k.dim + 1), 1.0 / (k.dim + 1))
    for i, cell in enumerate(k.cells):
        pts = k.points(cell)
        chart = cell_chart(pts)
        piece = f.piece(i)
        xs = grid @ pts
        vals, jacs = piece.value(xs), piece.jacobian(xs)
        cell_faces = [fc for fc in faces(tuple(range(len(cell)))) if len(fc) > 1]
        bases = [orthonormal_frame(chart.slope_to_chart(pts[list(fc[1:])] - pts[fc[0]]).T)
                 for fc in cell_faces]
        worst = [np.inf] * len(cell_faces)
        for y, jac in zip(vals, jacs):
            w, mu = pullback_plane(chart.slope_to_chart(jac), xi.frame(y))
            for j, v in enumerate(bases):
                worst[j] = min(worst[j], 0.0 if w is None else subspace_margin(v, w))
        for fc, mval in zip(cell_faces, worst):
            margins[(cell, tuple(cell[a] for a in fc))] = mval
    return GeneralPositionReport(margins, sampled=not xi.is_constant)


def relation_from_json(data: dict, m: int, n: int, k: SimplicialComplex | None = None
                       ) -> RelationOracle:
    name = data.get("relation")
    if name == "maxrank":
        return maxrank_relation(m, n)
    if name == "contact3d":
        return contact3d_relation()
    if name in ("transverse", "verygenpos"):
        xi = distribution_from_json(data.get("xi", {}), n)
        if name == "transverse":
            return transversality_relation(xi, m)
        if k is None:
            raise RelationError("verygenpos needs the source complex")
        return verygenpos_relation(k, xi)
    raise RelationError(f"unknown relation {name!r}")
