import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import square, standard_simplex
from pljiggle.complex import SimplicialComplex
from pljiggle.functions import REGISTRY
from pljiggle.maps import PiecewiseMap
from pljiggle.relations import (
    THETA,
    CellChart,
    Distribution,
    FiberPerturbError,
    Jet1,
    RelationError,
    cell_chart,
    contact3d_relation,
    cross_matrix,
    curl,
    distribution_from_json,
    jet_of,
    linear_extension,
    maxrank_relation,
    relation_from_json,
    transversality_relation,
    verify_general_position,
    verygenpos_relation,
)
from pljiggle.subdivision import model_simplices

HORIZONTAL = Distribution.constant([[1.0, 0.0]])
VERTICAL = Distribution.constant([[0.0, 1.0]])


def four_triangle_square():
    coords = [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]]
    cells = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (0, 3, 4)]
    return SimplicialComplex(np.array(coords, float), cells)


# ---------------------------------------------------------------- jets


def test_linear_extension_examples():
    piece = linear_extension(Jet1([0.0], [0.0], [[2.0]]))
    assert np.allclose(piece.value(np.array([[0.0], [0.5], [1.0]])).ravel(), [0, 1, 2])
    const = linear_extension(Jet1([0.3, 0.1], [4.0, -1.0], np.zeros((2, 2))))
    assert np.allclose(const.value(np.random.default_rng(0).normal(size=(5, 2))), [4.0, -1.0])


def test_linear_extension_round_trip_on_embedded_simplex(rng):
    pts = np.array([[0.0, 0.0, 1.0], [1.0, 2.0, 0.0], [0.5, -1.0, 2.0]])
    chart = cell_chart(pts)
    assert np.allclose(chart.frame.T @ chart.frame, np.eye(2))
    jet = Jet1(rng.normal(size=2), rng.normal(size=4), rng.normal(size=(4, 2)))
    piece = linear_extension(jet, pts)
    x = chart.to_ambient(jet.base)
    back = jet_of(piece, x, chart)
    assert np.allclose(back.base, jet.base)
    assert np.allclose(back.value, jet.value)
    assert np.allclose(back.slope, jet.slope)


def test_linear_extension_dimension_mismatch():
    with pytest.raises(RelationError):
        linear_extension(Jet1([0.0, 0.0], [1.0], [[1.0, 0.0]]), np.array([[0.0], [1.0]]))
    with pytest.raises(ValueError):
        Jet1([0.0], [1.0, 2.0], np.zeros((3, 3)))


def test_full_dimensional_chart_is_identity():
    chart = cell_chart(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]) + 3.0)
    assert np.array_equal(chart.frame, np.eye(2))
    assert np.array_equal(chart.origin, np.zeros(2))


# ---------------------------------------------------------------- distributions


def test_constant_distribution_is_orthonormal():
    d = Distribution.constant([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
    frame = d.frame([0, 0, 0])
    assert frame.shape == (3, 2)
    assert np.abs(frame.T @ frame - np.eye(2)).max() < 1e-9
    with pytest.raises(RelationError):
        Distribution.constant([[1.0, 0.0], [2.0, 0.0]])


def test_registry_distribution_frames(rng):
    fn = REGISTRY.create("sin_field", [[[1.0, 0.0], [0.0, 1.0]], [0.0, 1.5]], 2)
    d = Distribution.from_function(fn, 1, lipschitz=1.0)
    frames = d.frames(rng.normal(size=(50, 2)))
    assert frames.shape == (50, 2, 1)
    assert np.allclose(np.linalg.norm(frames[:, :, 0], axis=1), 1.0, atol=1e-9)
    back = distribution_from_json(d.to_json(), 2)
    assert back.rank == 1 and not back.is_constant and back.lipschitz == 1.0


# ---------------------------------------------------------------- examples


def test_transversality_examples():
    rel = transversality_relation(HORIZONTAL, 1)
    flat = Jet1([0.0], [0.0, 0.0], [[1.0], [0.0]])
    assert not rel.contains(flat) and rel.margin(flat) == 0.0
    up = Jet1([0.0], [0.0, 0.0], [[0.0], [1.0]])
    assert rel.contains(up) and rel.margin(up) == pytest.approx(1.0)
    out = rel.fiber_perturb(flat, 0.1)
    assert np.array_equal(out.base, flat.base) and np.array_equal(out.value, flat.value)
    assert np.linalg.norm(out.slope - flat.slope, 2) < 0.1
    assert rel.margin(out) > 0


def test_maxrank_examples():
    rel = maxrank_relation(2, 3)
    zero = Jet1([0.0, 0.0], [0.0, 0.0, 0.0], np.zeros((3, 2)))
    assert rel.margin(zero) == 0.0
    assert maxrank_relation(3, 3).margin(Jet1(np.zeros(3), np.zeros(3), np.eye(3))) == 1.0
    for eps in (0.1, 0.01):
        out = rel.fiber_perturb(zero, eps)
        assert np.linalg.svd(out.slope, compute_uv=False).min() >= THETA * eps
        assert np.linalg.norm(out.slope, 2) < eps


def test_contact_examples():
    rel = contact3d_relation()
    dz = Jet1(np.zeros(3), [0.0, 0.0, 1.0], np.zeros((3, 3)))
    assert not rel.contains(dz)
    eps = 0.01
    a = np.zeros((3, 3))
    a[1, 0], a[0, 1] = eps / 2, -eps / 2
    jet = Jet1(np.zeros(3), [0.0, 0.0, 1.0], a)
    assert rel.pairing(jet) == pytest.approx(eps)
    assert rel.contains(jet)
    doubled = Jet1(np.zeros(3), [0.0, 0.0, 2.0], a)
    assert rel.pairing(doubled) == pytest.approx(2 * rel.pairing(jet))
    with pytest.raises(RelationError, match="zero section"):
        rel.contains(Jet1(np.zeros(3), np.zeros(3), np.eye(3)))


def test_cross_matrix_curl(rng):
    u = rng.normal(size=3)
    assert np.allclose(curl(cross_matrix(u)), 2 * u)
    assert np.linalg.norm(cross_matrix(u / np.linalg.norm(u)), 2) == pytest.approx(1.0)


def test_contact_curl_matches_forms(rng):
    # alpha ^ d alpha for alpha = s(x) . dx with linear s, via the antisymmetrized derivative
    s, a = rng.normal(size=3), rng.normal(size=(3, 3))
    d_alpha = a.T - a  # d alpha(e_i, e_j) = d_i s_j - d_j s_i
    vol = s[0] * d_alpha[1, 2] + s[1] * d_alpha[2, 0] + s[2] * d_alpha[0, 1]
    assert s @ curl(a) == pytest.approx(vol)


def edge_directions(catalog, root, parent):
    dirs = []
    for i, md in enumerate(catalog.models):
        if md.parent != parent:
            continue
        pts = catalog.model_points(i, root)
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                d = pts[b] - pts[a]
                dirs.append(d / np.linalg.norm(d))
    return dirs


@pytest.mark.parametrize("angle", np.linspace(0.0, np.pi, 37))
def test_verygenpos_matches_edge_enumeration(angle):
    k = four_triangle_square()
    catalog = model_simplices(k)
    rel = verygenpos_relation(k, HORIZONTAL, catalog)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    jet = Jet1([0.3, 0.1], [0.0, 0.0], rot)
    for cell in k.cells:
        oracle = rel.for_cell(k, cell)
        dirs = edge_directions(catalog, k, cell) + [
            k.coords[b] - k.coords[a] for a, b in [(cell[0], cell[1]), (cell[0], cell[2]), (cell[1], cell[2])]]
        worst = min(abs((rot @ d)[1]) / np.linalg.norm(d) for d in dirs)
        if worst < 1e-9:
            assert oracle.margin(jet) == 0.0
        else:
            assert oracle.contains(jet)


def test_verygenpos_constructed_tangency():
    k = four_triangle_square()
    rel = verygenpos_relation(k, HORIZONTAL).for_cell(k, k.cells[0])
    # edge (0,0)->(0.5,0.5) is diagonal; a slope sending it to horizontal
    slope = np.array([[1.0, 0.0], [1.0, -1.0]])
    assert rel.margin(Jet1([0.2, 0.1], [0.0, 0.0], slope)) == 0.0
    assert rel.fiber_perturb(Jet1([0.2, 0.1], [0.0, 0.0], slope), 0.05).slope is not None


def test_verygenpos_scale_invariant():
    k = four_triangle_square()
    big = SimplicialComplex(k.coords * 7.0, k.cells)
    jet = Jet1([0.2, 0.1], [0.0, 0.0], np.array([[1.0, 0.3], [0.2, 1.1]]))
    m1 = verygenpos_relation(k, HORIZONTAL).for_cell(k, k.cells[1]).margin(jet)
    m2 = verygenpos_relation(big, HORIZONTAL).for_cell(big, big.cells[1]).margin(jet)
    assert m1 > 0 and m1 == pytest.approx(m2)


def test_verygenpos_requires_cell():
    k = four_triangle_square()
    with pytest.raises(RelationError):
        verygenpos_relation(k, HORIZONTAL).margin(Jet1([0.0, 0.0], [0.0, 0.0], np.eye(2)))


def test_general_position_examples():
    good = SimplicialComplex(np.array([[0.0, 0.0], [1.0, 0.3], [0.4, 1.0]]), [(0, 1, 2)])
    f = PiecewiseMap.pl(good, good.coords)
    report = verify_general_position(f, VERTICAL)
    assert report.ok and not report.sampled
    assert len(report.margins) == 4  # three edges and the triangle
    bad = SimplicialComplex(np.array([[0.0, 0.0], [1.0, 0.0], [0.4, 1.0]]), [(0, 1, 2)])
    report = verify_general_position(PiecewiseMap.pl(bad, bad.coords), HORIZONTAL)
    assert not report.ok
    assert report.failures() == [((0, 1, 2), (0, 1))]


def test_general_position_two_distributions():
    k = SimplicialComplex(np.array([[0.0, 0.0], [1.0, 0.3], [0.4, 1.0]]), [(0, 1, 2)])
    f = PiecewiseMap.pl(k, k.coords)
    assert verify_general_position(f, VERTICAL).ok and verify_general_position(f, HORIZONTAL).ok


def test_general_position_sampled_for_varying_xi():
    fn = REGISTRY.create("sin_field", [[[1.0, 0.0], [0.0, 1.0]], [0.0, 1.5]], 2)
    xi = Distribution.from_function(fn, 1, lipschitz=1.0)
    k = square(2, 1.0)
    report = verify_general_position(PiecewiseMap.pl(k, k.coords), xi)
    assert report.sampled


# ---------------------------------------------------------------- oracle contract


def random_jets(rng, count, m, n, value=None):
    for _ in range(count):
        val = rng.normal(size=n) if value is None else value(rng)
        slope = rng.normal(size=(n, m))
        # mix in degenerate slopes
        kind = rng.integers(4)
        if kind == 0:
            slope[:] = 0.0
        elif kind == 1:
            slope = np.outer(rng.normal(size=n), rng.normal(size=m))
        yield Jet1(rng.normal(size=m), val, slope)


def contact_value(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v) * rng.uniform(0.5, 2.0)


def builtin_cases():
    k = four_triangle_square()
    vgp = verygenpos_relation(k, HORIZONTAL).for_cell(k, k.cells[2])
    plane = Distribution.constant([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    return [
        ("maxrank_2_3", maxrank_relation(2, 3), 2, 3, None),
        ("maxrank_3_2", maxrank_relation(3, 2), 3, 2, None),
        ("transverse_1_2", transversality_relation(HORIZONTAL, 1), 1, 2, None),
        ("transverse_1_3", transversality_relation(plane, 1), 1, 3, None),
        ("contact3d", contact3d_relation(), 3, 3, contact_value),
        ("verygenpos", vgp, 2, 2, None),
    ]


@pytest.mark.parametrize("case", builtin_cases(), ids=lambda c: c[0])
@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
def test_fiber_perturb_contract(case, eps):
    _, rel, m, n, value = case
    rng = np.random.default_rng([zlib.crc32(case[0].encode()), int(round(-np.log10(eps)))])
    for jet in random_jets(rng, 1000, m, n, value):
        out = rel.fiber_perturb(jet, eps)
        assert np.array_equal(out.base, jet.base) and np.array_equal(out.value, jet.value)
        assert np.linalg.norm(out.slope - jet.slope, 2) < eps
        assert rel.margin(out) > 0 and rel.contains(out)


@pytest.mark.parametrize("case", builtin_cases()[:4], ids=lambda c: c[0])
def test_margin_soundness(case):
    _, rel, m, n, value = case
    rng = np.random.default_rng(7)
    for jet in random_jets(rng, 300, m, n, value):
        mu = rel.margin(jet)
        if mu == 0:
            continue
        d = rng.normal(size=(n, m))
        d *= 0.999 * mu / np.linalg.norm(d, 2)
        assert rel.contains(jet.with_slope(jet.slope + d))


@pytest.mark.parametrize("case", builtin_cases(), ids=lambda c: c[0])
def test_openness_probe(case):
    _, rel, m, n, value = case
    rng = np.random.default_rng(11)
    for jet in random_jets(rng, 300, m, n, value):
        mu = rel.margin(jet)
        if mu == 0:
            continue
        radius = mu / (2 * rel.lipschitz(jet))
        for _ in range(5):
            ds = rng.normal(size=(n, m))
            dv = rng.normal(size=n)
            ds *= rng.uniform(0, radius) / np.linalg.norm(ds, 2)
            dv *= rng.uniform(0, radius) / np.linalg.norm(dv)
            assert rel.contains(Jet1(jet.base, jet.value + dv, jet.slope + ds))


def test_fiber_perturb_is_deterministic_and_idempotent(rng):
    rel = maxrank_relation(2, 2)
    jet = Jet1([0.0, 0.0], [0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])
    a, b = rel.fiber_perturb(jet, 0.1), rel.fiber_perturb(jet, 0.1)
    assert np.array_equal(a.slope, b.slope)
    good = Jet1([0.0, 0.0], [0.0, 0.0], np.eye(2))
    assert rel.fiber_perturb(good, 0.1) is good


def test_fiber_perturb_rejects_bad_eps():
    with pytest.raises(FiberPerturbError):
        maxrank_relation(1, 1).fiber_perturb(Jet1([0.0], [0.0], [[0.0]]), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(1e-3, 0.5))
def test_maxrank_perturb_hypothesis(entries, eps):
    rel = maxrank_relation(2, 2)
    jet = Jet1([0.0, 0.0], [0.0, 0.0], np.array(entries).reshape(2, 2))
    out = rel.fiber_perturb(jet, eps)
    assert np.linalg.norm(out.slope - jet.slope, 2) < eps and rel.contains(out)


def test_relation_from_json():
    k = four_triangle_square()
    assert relation_from_json({"relation": "maxrank"}, 2, 2).name == "maxrank"
    rel = relation_from_json({"relation": "transverse", "xi": {"kind": "constant", "vectors": [[1, 0]]}}, 1, 2)
    assert rel.margin(Jet1([0.0], [0.0, 0.0], [[0.0], [1.0]])) == pytest.approx(1.0)
    assert relation_from_json({"relation": "verygenpos", "xi": {"vectors": [[1, 0]]}}, 2, 2, k).name == "verygenpos"
    with pytest.raises(RelationError):
        relation_from_json({"relation": "bogus"}, 1, 1)


def test_standard_simplex_chart_maps():
    k = standard_simplex(2)
    chart = cell_chart(k.coords)
    assert isinstance(chart, CellChart) and chart.dim == 2
