"""Named smooth maps R^N -> R^n with value and derivative evaluators.

Functions are vectorised: ``value`` takes an (k, N) array and returns
(k, n); ``jacobian`` returns (k, n, N).  Each instance remembers the registry
name and parameter list it was built from, so it can be serialised.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

Evaluator = Callable[[np.ndarray], np.ndarray]


class UnknownFunctionError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class SmoothFunction:
    name: str
    params: tuple
    in_dim: int
    out_dim: int
    _value: Evaluator = field(repr=False)
    _jacobian: Evaluator = field(repr=False)

    def value(self, x) -> np.ndarray:
        x = _points(x, self.in_dim)
        return np.asarray(self._value(x), float).reshape(len(x), self.out_dim)

    def jacobian(self, x) -> np.ndarray:
        x = _points(x, self.in_dim)
        return np.asarray(self._jacobian(x), float).reshape(len(x), self.out_dim, self.in_dim)

    def __call__(self, x) -> np.ndarray:
        return self.value(x)

    def to_json(self) -> dict:
        return {"name": self.name, "params": _jsonable(list(self.params))}


def _points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :] if dim > 1 or x.shape == (1,) else x[:, None]
    if x.shape[1] != dim:
        raise ValueError(f"expected points in R^{dim}, got shape {x.shape}")
    return x


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [_jsonable(o) for o in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


Factory = Callable[[list, int], SmoothFunction]


class FunctionRegistry:
    """Maps names to factories ``(params, in_dim) -> SmoothFunction``."""

    def __init__(self):
        self._factories: dict[str, Factory] = {}

    def register(self, name: str, factory: Factory) -> None:
        if name in self._factories:
            raise ValueError(f"function {name!r} already registered")
        self._factories[name] = factory

    def names(self) -> list[str]:
        return sorted(self._factories)

    def create(self, name: str, params=(), in_dim: int = 1) -> SmoothFunction:
        try:
            factory = self._factories[name]
        except KeyError:
            raise UnknownFunctionError(f"unknown function {name!r}; known: {self.names()}") from None
        return factory(list(params), int(in_dim))

    def from_json(self, data: dict, in_dim: int) -> SmoothFunction:
        return self.create(data["name"], data.get("params", []), in_dim)


def _make(name, params, n_in, n_out, value, jac) -> SmoothFunction:
    return SmoothFunction(name, tuple(_jsonable(p) for p in params), n_in, n_out, value, jac)


def identity(params: list, n: int) -> SmoothFunction:
    eye = np.eye(n)
    return _make("identity", params, n, n, lambda x: x.copy(),
                 lambda x: np.broadcast_to(eye, (len(x), n, n)).copy())


def constant(params: list, n: int) -> SmoothFunction:
    c = np.atleast_1d(np.asarray(params[0] if params else 0.0, float))
    k = len(c)
    return _make("constant", [c], n, k, lambda x: np.broadcast_to(c, (len(x), k)).copy(),
                 lambda x: np.zeros((len(x), k, n)))


def affine(params: list, n: int) -> SmoothFunction:
    a = np.atleast_2d(np.asarray(params[0], float))
    b = np.asarray(params[1], float) if len(params) > 1 else np.zeros(a.shape[0])
    if a.shape[1] != n:
        raise ValueError(f"affine matrix has {a.shape[1]} columns, domain is R^{n}")
    k = a.shape[0]
    return _make("affine", [a, b], n, k, lambda x: x @ a.T + b,
                 lambda x: np.broadcast_to(a, (len(x), k, n)).copy())


def quadratic(params: list, n: int) -> SmoothFunction:
    """x -> scale * |x|^2."""
    c = float(params[0]) if params else 1.0
    return _make("quadratic", [c], n, 1, lambda x: c * (x * x).sum(axis=1, keepdims=True),
                 lambda x: (2.0 * c * x)[:, None, :])


def polynomial(params: list, n: int) -> SmoothFunction:
    """x -> sum_k c_k x^k on R^1."""
    if n != 1:
        raise ValueError("polynomial is defined on R^1")
    c = np.asarray(params if params else [0.0], float)
    dc = np.polynomial.polynomial.polyder(c) if len(c) > 1 else np.zeros(1)
    pv = np.polynomial.polynomial.polyval
    return _make("polynomial", list(c), 1, 1, lambda x: pv(x, c),
                 lambda x: pv(x, dc)[:, :, None])


def sin(params: list, n: int) -> SmoothFunction:
    """Componentwise x -> amp * sin(freq * x + phase)."""
    freq, amp, phase = (list(map(float, params)) + [1.0, 1.0, 0.0][len(params):])[:3]

    def jac(x):
        d = amp * freq * np.cos(freq * x + phase)
        out = np.zeros((len(x), n, n))
        idx = np.arange(n)
        out[:, idx, idx] = d
        return out

    return _make("sin", [freq, amp, phase], n, n, lambda x: amp * np.sin(freq * x + phase), jac)


def sin_field(params: list, n: int) -> SmoothFunction:
    """x -> sin(A x + b); default A = identity, b = 0."""
    a = np.atleast_2d(np.asarray(params[0], float)) if params else np.eye(n)
    b = np.asarray(params[1], float) if len(params) > 1 else np.zeros(a.shape[0])
    if a.shape[1] != n:
        raise ValueError(f"sin_field matrix has {a.shape[1]} columns, domain is R^{n}")
    k = a.shape[0]
    return _make("sin_field", [a, b], n, k, lambda x: np.sin(x @ a.T + b),
                 lambda x: np.cos(x @ a.T + b)[:, :, None] * a[None, :, :])


def default_registry() -> FunctionRegistry:
    reg = FunctionRegistry()
    for name, factory in [("identity", identity), ("constant", constant), ("affine", affine),
                          ("quadratic", quadratic), ("polynomial", polynomial), ("sin", sin),
                          ("sin_field", sin_field)]:
        reg.register(name, factory)
    return reg


REGISTRY = default_registry()
