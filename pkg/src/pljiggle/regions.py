"""Regions of R^N used to cut subcomplexes out of a complex.

Convex regions decide containment of a simplex exactly from its vertices.
A bare predicate region cannot, so containment is sampled and flagged.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class Region:
    convex: bool = True

    def contains(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance to the (closure of the) region, 0 inside."""
        raise NotImplementedError

    def neighborhood(self, radius: float) -> "Neighborhood":
        return Neighborhood(self, float(radius))

    def to_json(self) -> dict:
        raise NotImplementedError


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts[None, :] if pts.ndim == 1 else pts


@dataclass(frozen=True)
class Ball(Region):
    center: tuple
    radius: float
    open: bool = False

    def contains(self, points):
        d = np.linalg.norm(_as_points(points) - np.asarray(self.center, float), axis=1)
        return d < self.radius if self.open else d <= self.radius

    def distance(self, points):
        d = np.linalg.norm(_as_points(points) - np.asarray(self.center, float), axis=1)
        return np.maximum(d - self.radius, 0.0)

    def to_json(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius,
                "open": self.open}


@dataclass(frozen=True)
class Box(Region):
    lo: tuple
    hi: tuple
    open: bool = False

    def contains(self, points):
        pts = _as_points(points)
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        if self.open:
            return np.all((pts > lo) & (pts < hi), axis=1)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def distance(self, points):
        pts = _as_points(points)
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        return np.linalg.norm(gap, axis=1)

    def to_json(self):
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi), "open": self.open}


@dataclass(frozen=True)
class HalfSpaces(Region):
    """Intersection of half-spaces ``normals @ x <= offsets`` (``<`` when open)."""

    normals: tuple
    offsets: tuple
    open: bool = False

    def contains(self, points):
        pts = _as_points(points)
        a = np.atleast_2d(np.asarray(self.normals, float))
        b = np.asarray(self.offsets, float)
        vals = pts @ a.T
        return np.all(vals < b, axis=1) if self.open else np.all(vals <= b, axis=1)

    def distance(self, points):
        # exact for a single half-space, a lower bound otherwise
        pts = _as_points(points)
        a = np.atleast_2d(np.asarray(self.normals, float))
        b = np.asarray(self.offsets, float)
        excess = (pts @ a.T - b) / np.linalg.norm(a, axis=1)
        return np.maximum(excess.max(axis=1), 0.0)

    def to_json(self):
        return {"kind": "halfspaces", "normals": [list(r) for r in np.atleast_2d(self.normals)],
                "offsets": list(self.offsets), "open": self.open}


@dataclass(frozen=True)
class Everything(Region):
    def contains(self, points):
        return np.ones(len(_as_points(points)), dtype=bool)

    def distance(self, points):
        return np.zeros(len(_as_points(points)))

    def to_json(self):
        return {"kind": "everything"}


@dataclass(frozen=True)
class Neighborhood(Region):
    """Closed metric neighborhood B(base, radius); convex when ``base`` is."""

    base: Region
    radius: float

    @property
    def convex(self):  # type: ignore[override]
        return self.base.convex

    def contains(self, points):
        return self.base.distance(points) <= self.radius

    def distance(self, points):
        return np.maximum(self.base.distance(points) - self.radius, 0.0)

    def to_json(self):
        return {"kind": "neighborhood", "base": self.base.to_json(), "radius": self.radius}


@dataclass(frozen=True)
class Predicate(Region):
    """Arbitrary membership test; simplex containment is only sampled."""

    test: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    convex: bool = False

    def contains(self, points):
        return np.asarray(self.test(_as_points(points)), dtype=bool)

    def to_json(self):
        raise TypeError("predicate regions are not serializable")


def region_from_json(data: dict) -> Region:
    kind = data.get("kind")
    if kind == "ball":
        return Ball(tuple(data["center"]), float(data["radius"]), bool(data.get("open", False)))
    if kind == "box":
        return Box(tuple(data["lo"]), tuple(data["hi"]), bool(data.get("open", False)))
    if kind == "halfspaces":
        return HalfSpaces(tuple(tuple(r) for r in data["normals"]), tuple(data["offsets"]),
                          bool(data.get("open", False)))
    if kind == "everything":
        return Everything()
    if kind == "neighborhood":
        return Neighborhood(region_from_json(data["base"]), float(data["radius"]))
    raise ValueError(f"unknown region kind {kind!r}")
