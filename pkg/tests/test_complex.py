import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pljiggle.complex import (
    ComplexError,
    DegenerateSimplexError,
    SimplicialComplex,
    closure,
    coloring_violations,
    greedy_color,
    interaction_graph,
    is_nice,
    is_nice_by_hull,
    lambda_coeff,
    max_subcomplex_in,
    missing_faces,
    ring,
    rmax,
    rmin,
    simplex_frame,
    star,
    star_n,
    validate_complex,
)
from pljiggle.regions import Ball, Box, Everything, HalfSpaces, Predicate
from pljiggle.subdivision import color_bound_crystalline, crystalline_subdivide

from conftest import interval, square, standard_simplex


def path_complex(n_edges):
    return interval(n_edges, float(n_edges))


# --- validation -------------------------------------------------------------

def test_shared_edge_is_valid():
    assert validate_complex(square(1)).valid


def test_overlapping_triangles_reported():
    pts = np.array([[0, 0], [1, 0], [0, 1], [0.2, 0.2], [1.2, 0.2], [0.2, 1.2]], float)
    k = SimplicialComplex(pts, ((0, 1, 2), (3, 4, 5)))
    rep = validate_complex(k)
    assert not rep.valid
    assert rep.bad_intersections == [((0, 1, 2), (3, 4, 5))]


def test_touching_at_non_face_reported():
    # vertex of one triangle in the middle of the other's edge
    pts = np.array([[0, 0], [2, 0], [0, 2], [1, 1], [2, 2], [3, 1]], float)
    k = SimplicialComplex(pts, ((0, 1, 2), (3, 4, 5)))
    assert not validate_complex(k).valid


def test_collinear_triangle_flagged_degenerate():
    pts = np.array([[0, 0], [1, 1], [2, 2]], float)
    rep = validate_complex(SimplicialComplex(pts, ((0, 1, 2),)))
    assert rep.degenerate == [(0, 1, 2)]


def test_missing_faces_of_declared_list():
    assert missing_faces([(0, 1), (0,)]) == [(1,)]


def test_unordered_simplex_rejected():
    with pytest.raises(ComplexError):
        SimplicialComplex(np.zeros((3, 1)), ((1, 0),))


# --- star / ring ------------------------------------------------------------

def test_star_of_path_edge():
    k = path_complex(3)
    st_ = star(k, [(1, 2)])
    assert st_ == closure([(0, 1), (1, 2), (2, 3)])


def test_star_of_everything_is_everything():
    k = square(2)
    assert star(k, k.simplices) == k.simplices


def fan(n=4):
    angles = np.linspace(0, 2 * np.pi, n, endpoint=False)
    pts = np.vstack([[0, 0], np.column_stack([np.cos(angles), np.sin(angles)])])
    cells = [tuple(sorted((0, 1 + i, 1 + (i + 1) % n))) for i in range(n)]
    return SimplicialComplex(pts, tuple(sorted(cells)))


def test_star_of_fan_center():
    k = fan(4)
    assert star(k, [(0,)]) == k.simplices


def test_ring_of_path_edge():
    k = path_complex(3)
    assert ring(k, [(1, 2)]) == closure([(0, 1), (2, 3)])


def test_ring_of_whole_complex_empty():
    k = square(1)
    assert ring(k, k.simplices) == frozenset()


def test_ring_of_isolated_component():
    # two disjoint triangles; Q is one of them without interior: ring is empty
    # beyond its own boundary closure when Q is the whole component
    pts = np.array([[0, 0], [1, 0], [0, 1], [5, 5], [6, 5], [5, 6]], float)
    k = SimplicialComplex(pts, ((0, 1, 2), (3, 4, 5)))
    q = closure([(0, 1), (1, 2), (0, 2)])
    assert ring(k, q) == closure([(0, 1, 2)])
    assert ring(k, closure([(0, 1, 2)])) == frozenset()


def test_star_rejects_non_subcomplex():
    with pytest.raises(ComplexError):
        star(path_complex(2), [(0, 2)])


def test_ring_union_q_contains_star_and_incremental_agrees(rng):
    k = crystalline_subdivide(square(2), 1)
    for _ in range(20):
        verts = rng.choice(k.n_vertices, size=3, replace=False)
        q = closure([(int(v),) for v in verts])
        st_ = star(k, q)
        r = ring(k, q)
        assert (r | q) >= st_
        # definitional: faces of star simplices not in q
        alt = closure([s for s in st_ if s not in q])
        assert alt == r
        assert star_n(k, q, 2) >= st_


# --- max subcomplex ---------------------------------------------------------

def test_left_half_plane():
    k = square(2)
    sub = max_subcomplex_in(k, HalfSpaces(((1.0, 0.0),), (0.5,)))
    expected = {s for s in k.simplices if all(k.coords[v, 0] <= 0.5 for v in s)}
    assert set(sub) == expected
    assert not sub.sampled


def test_everything_gives_k():
    k = square(2)
    assert max_subcomplex_in(k, Everything()) == k.simplices


def test_small_ball_around_vertex():
    k = square(4, size=4.0)
    v = 12  # (2, 2) on the unit grid
    sub = max_subcomplex_in(k, Ball(tuple(k.coords[v]), 0.3))
    assert sub == closure([(v,)])


def test_predicate_is_sampled():
    k = square(2)
    sub = max_subcomplex_in(k, Predicate(lambda p: p[:, 0] <= 0.5))
    assert sub.sampled
    assert set(sub) == set(max_subcomplex_in(k, HalfSpaces(((1.0, 0.0),), (0.5,))))


# --- niceness ---------------------------------------------------------------

def test_boundary_of_triangle_not_nice():
    k = square(1)
    q = closure([(0, 1), (1, 2), (0, 2)])
    assert not is_nice(k, q)
    assert not is_nice_by_hull(k, q)


def test_single_vertex_nice():
    k = square(2)
    for v in range(k.n_vertices):
        assert is_nice(k, [(v,)]) and is_nice_by_hull(k, [(v,)])


def test_convex_region_gives_nice_subcomplex(rng):
    k = crystalline_subdivide(square(2), 1)
    for _ in range(20):
        c = rng.uniform(0, 1, 2)
        sub = max_subcomplex_in(k, Ball(tuple(c), rng.uniform(0.1, 0.6)))
        assert is_nice(k, sub)


@st.composite
def small_complex_and_sub(draw):
    nv = draw(st.integers(2, 5))
    verts = list(range(nv))
    cand = [s for r in range(1, nv + 1) for s in itertools.combinations(verts, r)]
    chosen = draw(st.lists(st.sampled_from(cand), min_size=1, max_size=6))
    k_simp = closure(chosen)
    sub_choice = draw(st.lists(st.sampled_from(sorted(k_simp)), max_size=5))
    return nv, k_simp, closure(sub_choice)


@settings(max_examples=200, deadline=None)
@given(small_complex_and_sub())
def test_niceness_definitions_agree(data):
    nv, simp, q = data
    # vertices of the 4-simplex: every abstract complex on <= 5 vertices embeds
    coords = np.vstack([np.zeros(4), np.eye(4)])[:nv]
    k = SimplicialComplex.from_simplices(coords, simp)
    assert k.simplices == simp
    assert is_nice(k, q) == is_nice_by_hull(k, q)


# --- coloring ---------------------------------------------------------------

def chromatic_number(graph):
    """Exact minimum coloring by backtracking (oracle)."""
    nodes = sorted(graph, key=lambda n: -len(graph[n]))
    for c in range(1, len(nodes) + 1):
        colors = {}

        def bt(i):
            if i == len(nodes):
                return True
            n = nodes[i]
            for col in range(c):
                if all(colors.get(x) != col for x in graph[n]):
                    colors[n] = col
                    if bt(i + 1):
                        return True
                    del colors[n]
            return False

        if bt(0):
            return c
    return 0


def test_path_coloring():
    k = path_complex(6)
    col = greedy_color(k)
    assert not coloring_violations(k, col)
    # e_i ~ e_j iff |i - j| <= 3 (stars share a vertex), so 4 colors are needed
    assert chromatic_number(interaction_graph(k)) == 4
    assert col.n_colors == 4


def test_single_simplex_one_color():
    assert greedy_color(standard_simplex(2)).n_colors == 1


def test_first_subdivision_of_triangle_four_colors():
    k = crystalline_subdivide(standard_simplex(2), 1)
    g = interaction_graph(k)
    assert all(len(v) == 3 for v in g.values())
    assert greedy_color(k).n_colors == 4


def test_coloring_requires_pure():
    k = SimplicialComplex(np.array([[0, 0], [1, 0], [0, 1], [3, 3]], float),
                          ((0, 1, 2), (2, 3)))
    with pytest.raises(ComplexError):
        greedy_color(k)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_coloring_bound_on_crystalline(level):
    k0 = square(1)
    k = crystalline_subdivide(k0, level)
    col = greedy_color(k)
    assert not coloring_violations(k, col)
    deg = max(len(v) for v in interaction_graph(k).values())
    assert col.n_colors <= deg + 1
    assert col.n_colors <= color_bound_crystalline(k0)
    assert set(col.colors.values()) == set(range(col.n_colors))


# --- shape functionals ------------------------------------------------------

def project_distance(p, a, b):
    """Distance from p to the line through a, b in the plane (oracle)."""
    d = b - a
    cross = d[0] * (p - a)[1] - d[1] * (p - a)[0]
    return abs(cross) / np.linalg.norm(d)


def test_rmin_examples():
    assert rmin(np.array([[0, 0], [1, 0], [0, 1]], float)) == pytest.approx(1 / math.sqrt(2))
    assert rmin(np.array([[0.0], [1.0]])) == pytest.approx(1.0)
    pts = np.array([[0, 0], [1, 0], [1, 0.1]])
    oracle = min(project_distance(pts[i], *np.delete(pts, i, axis=0)) for i in range(3))
    assert rmin(pts) == pytest.approx(oracle, rel=1e-12)


def test_rmax_examples():
    assert rmax(np.array([[0, 0], [1, 0], [0, 1]], float)) == pytest.approx(math.sqrt(2))
    assert rmax(np.array([[3.0, 4.0]])) == 0.0


def test_degenerate_raises():
    with pytest.raises(DegenerateSimplexError):
        rmin(np.array([[0, 0], [1, 1], [2, 2]], float))
    with pytest.raises(DegenerateSimplexError):
        lambda_coeff(np.array([[0, 0], [1, 1], [2, 2]], float))


def footnote_lambda(v1, v2):
    return max(np.linalg.norm(v1), np.linalg.norm(v2)) / math.sqrt(
        np.dot(v1, v1) * np.dot(v2, v2) - np.dot(v1, v2) ** 2)


def test_lambda_examples():
    assert lambda_coeff(np.array([[0, 0], [1, 0], [0, 1]], float)) == pytest.approx(1.0)
    val = lambda_coeff(np.array([[0, 0], [1, 0], [1, 0.1]]))
    assert val == pytest.approx(math.sqrt(1.01) / math.sqrt(0.01), rel=1e-12)
    assert val == pytest.approx(10.04987562112089, rel=1e-12)


def test_lambda_matches_closed_form_in_plane(rng):
    for _ in range(200):
        v1, v2 = rng.normal(size=(2, 3))
        pts = np.vstack([np.zeros(3), v1, v2])
        assert lambda_coeff(pts) == pytest.approx(footnote_lambda(v1, v2), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.floats(0.1, 10), st.integers(0, 2**31 - 1))
def test_homogeneity(m, t, seed):
    r = np.random.default_rng(seed)
    pts = r.normal(size=(m + 1, m))
    if abs(np.linalg.det(pts[1:] - pts[0])) < 1e-3:
        return
    c = r.normal(size=m)
    moved = t * pts + c
    assert rmax(moved) == pytest.approx(t * rmax(pts), rel=1e-9)
    assert rmin(moved) == pytest.approx(t * rmin(pts), rel=1e-9)
    assert lambda_coeff(moved) == pytest.approx(lambda_coeff(pts) / t, rel=1e-9)


def test_frame_examples():
    fr = simplex_frame(np.vstack([np.zeros(3), np.eye(3)]))
    assert np.allclose(fr.forward, np.eye(3)) and np.allclose(fr.inverse, np.eye(3))
    fr = simplex_frame(np.array([[0.0], [2.0]]))
    assert fr.to_ambient([1.5]) == pytest.approx([3.0])
    assert fr.to_local([3.0]) == pytest.approx([1.5])


def test_frame_bounds_random(rng):
    checked = 0
    while checked < 1000:
        m = int(rng.integers(1, 5))
        n = int(rng.integers(m, m + 2))
        pts = rng.normal(size=(m + 1, n))
        try:
            fr = simplex_frame(pts)
        except DegenerateSimplexError:
            continue
        fwd = np.linalg.norm(fr.forward, 2)
        inv = np.linalg.norm(fr.inverse, 2)
        assert fwd <= m * rmax(pts) * (1 + 1e-12)
        assert inv <= m * lambda_coeff(pts) * (1 + 1e-12)
        y = rng.normal(size=m)
        assert np.allclose(fr.to_local(fr.to_ambient(y)), y, atol=1e-9 * (1 + inv * fwd))
        checked += 1
