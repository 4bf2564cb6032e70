import numpy as np
import pytest

from pljiggle.functions import REGISTRY, FunctionRegistry, UnknownFunctionError, default_registry

CASES = [
    ("identity", [], 3),
    ("constant", [[1.0, -2.0]], 2),
    ("affine", [[[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]], [0.1, 0.2, 0.3]], 2),
    ("quadratic", [0.7], 3),
    ("polynomial", [1.0, -2.0, 0.5, 0.25], 1),
    ("sin", [2.0, 0.5, 0.3], 2),
    ("sin_field", [[[1.0, 2.0, 0.0], [0.0, -1.0, 1.5]], [0.2, -0.4]], 3),
]


def finite_difference(fn, x, h=1e-6):
    cols = []
    for j in range(fn.in_dim):
        e = np.zeros(fn.in_dim)
        e[j] = h
        cols.append((fn.value(x + e) - fn.value(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("name,params,dim", CASES)
def test_derivative_matches_finite_differences(name, params, dim, rng):
    fn = REGISTRY.create(name, params, dim)
    x = rng.uniform(-2, 2, size=(20, dim))
    jac = fn.jacobian(x)
    fd = finite_difference(fn, x)
    scale = np.maximum(np.abs(jac).max(), 1.0)
    assert np.abs(jac - fd).max() <= 1e-6 * scale


@pytest.mark.parametrize("name,params,dim", CASES)
def test_json_round_trip(name, params, dim, rng):
    fn = REGISTRY.create(name, params, dim)
    back = REGISTRY.from_json(fn.to_json(), dim)
    x = rng.normal(size=(5, dim))
    assert np.array_equal(fn.value(x), back.value(x))


def test_shapes():
    fn = REGISTRY.create("quadratic", [], 2)
    assert fn.value(np.zeros((4, 2))).shape == (4, 1)
    assert fn.jacobian(np.zeros((4, 2))).shape == (4, 1, 2)
    one_d = REGISTRY.create("polynomial", [0, 0, 1], 1)
    assert one_d.value(np.array([0.0, 0.5, 1.0])).ravel().tolist() == [0.0, 0.25, 1.0]


def test_unknown_and_duplicate_names():
    with pytest.raises(UnknownFunctionError):
        REGISTRY.create("nope")
    reg = default_registry()
    with pytest.raises(ValueError):
        reg.register("identity", lambda p, n: None)


def test_user_registration():
    reg = FunctionRegistry()
    from pljiggle.functions import SmoothFunction

    reg.register("double", lambda p, n: SmoothFunction("double", (), n, n, lambda x: 2 * x,
                                                       lambda x: np.broadcast_to(2 * np.eye(n), (len(x), n, n))))
    fn = reg.create("double", [], 2)
    assert np.array_equal(fn.value([[1.0, 2.0]]), [[2.0, 4.0]])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        REGISTRY.create("affine", [[[1.0, 2.0]]], 3)
    fn = REGISTRY.create("identity", [], 2)
    with pytest.raises(ValueError):
        fn.value(np.zeros((3, 3)))
