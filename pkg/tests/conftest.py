import itertools

import numpy as np
import pytest

from pljiggle.complex import SimplicialComplex


def standard_simplex(m: int) -> SimplicialComplex:
    """<0, e_1, ..., e_m> in R^m."""
    pts = np.vstack([np.zeros(m), np.eye(m)])
    return SimplicialComplex(pts, (tuple(range(m + 1)),))


def regular_simplex(m: int) -> SimplicialComplex:
    """<e_0, ..., e_m> in R^(m+1)."""
    return SimplicialComplex(np.eye(m + 1), (tuple(range(m + 1)),))


def square(n: int = 1, size: float = 1.0) -> SimplicialComplex:
    """n x n grid of squares, each cut along its anti-diagonal."""
    h = size / n
    coords = [(i * h, j * h) for j in range(n + 1) for i in range(n + 1)]
    idx = lambda i, j: j * (n + 1) + i  # noqa: E731
    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)
            cells += [tuple(sorted((a, b, c))), tuple(sorted((b, c, d)))]
    return SimplicialComplex(np.array(coords, float), tuple(sorted(cells)))


def interval(n: int = 1, length: float = 1.0) -> SimplicialComplex:
    xs = np.linspace(0.0, length, n + 1)[:, None]
    return SimplicialComplex(xs, tuple((i, i + 1) for i in range(n)))


def cube3() -> SimplicialComplex:
    """Unit cube as the 6 Kuhn tetrahedra around its main diagonal."""
    corners = [tuple(int(b) for b in format(i, "03b")) for i in range(8)]
    index = {c: i for i, c in enumerate(corners)}
    cells = []
    for perm in itertools.permutations(range(3)):
        p = [0, 0, 0]
        path = [index[tuple(p)]]
        for ax in perm:
            p[ax] = 1
            path.append(index[tuple(p)])
        cells.append(tuple(sorted(path)))
    return SimplicialComplex(np.array(corners, float), tuple(sorted(cells)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary lines ---------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """record(number, ok, detail): one summary line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
