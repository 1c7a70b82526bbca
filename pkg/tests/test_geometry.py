import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from piperoute.geometry import (
    DomainError,
    NurbsPath,
    Sector,
    arc_length,
    basis_functions,
    cart_to_cyl,
    cyl_to_cart,
    distance_point_to_sector,
    eval_nurbs,
    knot_vector,
    local_frame,
    sample_by_arclength,
    sector_distances,
)

from oracles import cox_de_boor, de_boor, rational_point, sector_distance_oracle

QUARTER = NurbsPath.build(
    np.array([[1.0, 0, 0], [1, 1, 0], [0, 1, 0]]), np.array([1.0, math.sqrt(0.5), 1.0]), 2, "clamped_both"
)


def random_knots(rng, degree, n_ctrl):
    interior = np.sort(rng.uniform(0, 1, n_ctrl - degree - 1))
    # occasional repeated interior knots
    if len(interior) > 1 and rng.random() < 0.3:
        interior[1] = interior[0]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


# --- coordinates -----------------------------------------------------------


@pytest.mark.parametrize(
    "p, expected",
    [((1, 0, 2), (2, 1, 0)), ((0, 1, 2), (2, 1, math.pi / 2)), ((0, 0, 5), (5, 0, 0))],
)
def test_cart_to_cyl_examples(p, expected):
    assert np.allclose(cart_to_cyl(np.array(p, float)), expected, atol=1e-15)


def test_theta_range_and_round_trip():
    rng = np.random.default_rng(1)
    p = rng.uniform(-1000, 1000, (5000, 3))
    c = cart_to_cyl(p)
    assert np.all((c[:, 2] >= 0) & (c[:, 2] < 2 * math.pi))
    assert np.max(np.abs(cyl_to_cart(c) - p)) < 1e-9


def test_local_frame_orthonormal():
    e_r, e_t, e_z = local_frame(np.array([3.0, 4.0, 7.0]))
    M = np.stack([e_r, e_t, e_z])
    assert np.allclose(M @ M.T, np.eye(3), atol=1e-12)
    assert np.allclose(e_r, [0.6, 0.8, 0])


# --- basis -----------------------------------------------------------------


def test_degree_zero_indicator():
    assert basis_functions(np.array([0.0, 1.0]), 0, 0.5).tolist() == [1.0]


def test_bernstein_case():
    N = basis_functions(np.array([0, 0, 0, 0, 1, 1, 1, 1.0]), 3, 0.5)
    assert np.allclose(N, [0.125, 0.375, 0.375, 0.125], atol=1e-15)


def test_basis_matches_recursive_definition():
    rng = np.random.default_rng(2)
    for _ in range(200):
        p = int(rng.integers(1, 5))
        n = int(rng.integers(p + 1, p + 7))
        U = random_knots(rng, p, n)
        u = rng.uniform(0, 1)
        N = basis_functions(U, p, u)
        ref = [cox_de_boor(U, p, i, u) for i in range(n)]
        assert np.allclose(N, ref, atol=1e-12)


def test_partition_of_unity_and_local_support():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        p = int(rng.integers(1, 5))
        n = int(rng.integers(p + 1, p + 9))
        U = random_knots(rng, p, n)
        u = rng.uniform(U[p], U[n])
        N = basis_functions(U, p, u)
        assert abs(N.sum() - 1.0) < 1e-9
        for i in range(n):
            if not U[i] <= u <= U[i + p + 1]:
                assert N[i] == 0.0


def test_basis_domain_error():
    with pytest.raises(DomainError):
        basis_functions(np.array([0, 0, 0, 0, 1, 1, 1, 1.0]), 3, 1.5)


# --- knot vectors ------------------------------------------------------------


def test_knot_vector_examples():
    assert knot_vector(4, 3, "clamped_both").tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    U = knot_vector(6, 3, "open_end")
    assert U.tolist() == [0, 0, 0, 0, 1, 2, 3, 4, 5, 6]
    assert NurbsPath.build(np.zeros((6, 3)), end_mode="open_end").domain == (0.0, 3.0)
    assert NurbsPath.build(np.zeros((4, 3)), end_mode="open_end").domain == (0.0, 1.0)
    assert NurbsPath.build(np.zeros((5, 3)), end_mode="open_end").domain == (0.0, 2.0)


def test_knot_vector_too_few_points():
    with pytest.raises(ValueError):
        knot_vector(3, 3, "clamped_both")


def test_open_curve_is_prefix_of_closed_curve():
    rng = np.random.default_rng(4)
    P = rng.uniform(-100, 100, (7, 3))
    w = rng.uniform(0.5, 2, 7)
    open_ = NurbsPath.build(P, w, 3, "open_end")
    closed = NurbsPath.build(np.vstack([P, rng.uniform(-100, 100, (3, 3))]), np.append(w, [1, 1, 1]), 3, "clamped_both")
    u = np.linspace(*open_.domain, 50)
    assert np.max(np.abs(open_.evaluate(u) - closed.evaluate(u))) < 1e-9


# --- evaluation --------------------------------------------------------------


def test_coincident_control_points():
    P = np.tile([3.0, -2.0, 7.0], (6, 1))
    path = NurbsPath.build(P, np.linspace(0.5, 3, 6))
    assert np.allclose(path.evaluate(np.linspace(*path.domain, 11)), P[0], atol=1e-12)


def test_clamped_endpoints():
    rng = np.random.default_rng(5)
    P = rng.uniform(-10, 10, (8, 3))
    path = NurbsPath.build(P, rng.uniform(0.3, 3, 8))
    lo, hi = path.domain
    assert np.allclose(eval_nurbs(path, lo), P[0], atol=1e-12)
    assert np.allclose(eval_nurbs(path, hi), P[-1], atol=1e-12)


def test_quarter_circle():
    assert np.allclose(QUARTER.evaluate(0.5), [math.sqrt(0.5), math.sqrt(0.5), 0], atol=1e-12)
    pts = QUARTER.evaluate(np.linspace(0, 1, 100))
    assert np.max(np.abs(np.linalg.norm(pts, axis=1) - 1.0)) < 1e-6


def test_unit_weights_match_de_boor():
    rng = np.random.default_rng(6)
    for _ in range(100):
        p = int(rng.integers(1, 5))
        n = int(rng.integers(p + 1, p + 8))
        U = random_knots(rng, p, n)
        P = rng.uniform(-50, 50, (n, 3))
        path = NurbsPath(P, np.ones(n), U, p, "clamped_both")
        for u in rng.uniform(0, 1, 5):
            assert np.allclose(path.evaluate(u), de_boor(U, P, p, u), atol=1e-9)


def test_rational_matches_recursive_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(4, 10))
        P = rng.uniform(-50, 50, (n, 3))
        w = rng.uniform(0.2, 4, n)
        path = NurbsPath.build(P, w, 3, "open_end" if rng.random() < 0.5 else "clamped_both")
        for u in rng.uniform(*path.domain, 5):
            assert np.allclose(path.evaluate(u), rational_point(path.knots, P, w, 3, u), atol=1e-9)


def test_dense_evaluation_matches_exact():
    rng = np.random.default_rng(8)
    path = NurbsPath.build(rng.uniform(-100, 100, (9, 3)), rng.uniform(0.4, 2.5, 9), 3, "open_end")
    u = np.linspace(*path.domain, 777)
    assert np.max(np.abs(path.evaluate_dense(u) - path.evaluate(u))) < 1e-9


def test_convex_hull_of_active_points():
    from scipy.optimize import linprog

    rng = np.random.default_rng(9)
    path = NurbsPath.build(rng.uniform(-10, 10, (7, 3)), rng.uniform(0.3, 3, 7))
    for u in rng.uniform(*path.domain, 30):
        from piperoute.geometry import find_span

        k = int(find_span(path.knots, 3, np.array([u]))[0])
        A = path.control_points[k - 3 : k + 1]
        c = path.evaluate(u)
        res = linprog(np.zeros(4), A_eq=np.vstack([A.T, np.ones(4)]), b_eq=np.append(c, 1), bounds=[(0, None)] * 4)
        assert res.status == 0


def test_evaluate_domain_error():
    with pytest.raises(DomainError):
        QUARTER.evaluate(1.1)


def test_invalid_paths():
    with pytest.raises(ValueError):
        NurbsPath.build(np.zeros((4, 3)), np.array([1, 1, 0, 1.0]))
    with pytest.raises(ValueError):
        NurbsPath.build(np.zeros((3, 3)), degree=3)


# --- arc length and sampling ------------------------------------------------


def straight(length=100.0, n=5):
    P = np.zeros((n, 3))
    P[:, 0] = np.linspace(0, length, n)
    return NurbsPath.build(P)


def test_straight_arc_length():
    path = straight()
    assert abs(arc_length(path, *path.domain) - 100.0) < 1e-6


def test_quarter_circle_arc_length():
    assert abs(arc_length(QUARTER, 0, 1) - math.pi / 2) < 1e-3


def test_empty_interval():
    assert arc_length(QUARTER, 0.3, 0.3) == 0.0
    pts = sample_by_arclength(QUARTER, 0.3, 0.3)
    assert pts.shape == (1, 3)


def test_arc_length_interval_errors():
    with pytest.raises(DomainError):
        arc_length(QUARTER, 0.6, 0.2)
    with pytest.raises(ValueError):
        arc_length(QUARTER, 0, 1, dl=0)


def test_arc_length_monotone_in_upper_bound():
    rng = np.random.default_rng(10)
    path = NurbsPath.build(rng.uniform(-200, 200, (8, 3)), rng.uniform(0.5, 2, 8))
    ub = np.linspace(0.2, path.domain[1], 25)
    lens = [arc_length(path, 0.0, b) for b in ub]
    assert np.all(np.diff(lens) > 0)


def test_straight_sampling_count():
    path = straight()
    pts = sample_by_arclength(path, *path.domain, 5.0)
    assert len(pts) == 21
    assert np.allclose(pts[0], [0, 0, 0]) and np.allclose(pts[-1], [100, 0, 0])


def test_sample_spacing_and_count():
    from piperoute.geometry import sample_with_length

    rng = np.random.default_rng(11)
    for _ in range(6):
        path = NurbsPath.build(rng.uniform(-300, 300, (9, 3)), rng.uniform(0.5, 2, 9))
        lo, hi = path.domain
        pts, params, L = sample_with_length(path, lo, hi, 5.0)
        assert np.array_equal(pts, sample_by_arclength(path, lo, hi, 5.0))
        gaps = np.array([arc_length(path, a, b, 0.5) for a, b in zip(params[:-1], params[1:])])
        assert np.all(np.abs(gaps[:-1] - 5.0) <= 0.5)
        assert gaps[-1] <= 5.5
        assert abs((len(pts) - 1) * 5.0 - L) <= 5.0
        assert L == pytest.approx(arc_length(path, lo, hi, 5.0), rel=1e-9)
        assert np.allclose(pts[0], path.evaluate(lo)) and np.allclose(pts[-1], path.evaluate(hi))


# --- sectors ----------------------------------------------------------------


SECTOR = Sector(0.0, 100.0, 500.0, 600.0, 0.2, 0.8)


def test_sector_distance_inside_and_radial():
    assert distance_point_to_sector(np.array([50.0, 550.0, 0.5]), SECTOR) == 0.0
    assert abs(distance_point_to_sector(np.array([50.0, 610.0, 0.5]), SECTOR) - 10.0) < 1e-9


def test_sector_distance_angular_offset():
    c = np.array([50.0, 600.0, 0.8 + math.radians(30)])
    ref = sector_distance_oracle(cyl_to_cart(c), SECTOR.as_array())
    assert abs(distance_point_to_sector(c, SECTOR) - ref) < 1e-3
    assert abs(ref - 600 * math.sin(math.radians(30))) < 1e-3


def random_sector(rng):
    z0 = rng.uniform(-100, 100)
    r0 = rng.uniform(0, 500)
    t0 = rng.uniform(0, 2 * math.pi)
    width = rng.choice([rng.uniform(0.01, 0.5), rng.uniform(0.5, 3.5), rng.uniform(3.5, 2 * math.pi)])
    return Sector(z0, z0 + rng.uniform(1, 200), r0, r0 + rng.uniform(1, 300), t0, t0 + width)


def test_sector_distance_matches_sampling_oracle():
    rng = np.random.default_rng(12)
    for _ in range(150):
        s = random_sector(rng)
        p = rng.uniform(-900, 900, 3)
        d = distance_point_to_sector(cart_to_cyl(p), s)
        assert abs(d - sector_distance_oracle(p, s.as_array())) < 1e-3


def test_sector_distances_vectorised():
    rng = np.random.default_rng(13)
    sectors = [random_sector(rng) for _ in range(7)]
    pts = rng.uniform(-800, 800, (11, 3))
    D = sector_distances(cart_to_cyl(pts), np.stack([s.as_array() for s in sectors]))
    for i, p in enumerate(pts):
        for j, s in enumerate(sectors):
            assert D[i, j] == pytest.approx(distance_point_to_sector(cart_to_cyl(p), s), abs=1e-9)


def test_sector_validation():
    with pytest.raises(ValueError):
        Sector(1, 0, 0, 1, 0, 1)
    with pytest.raises(ValueError):
        Sector(0, 1, 2, 1, 0, 1)
    with pytest.raises(ValueError):
        Sector(0, 1, 0, 1, 0, 7)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-500, 500), st.floats(-500, 500), st.floats(-500, 500),
)
def test_distance_is_zero_iff_contained(x, y, z):
    c = cart_to_cyl(np.array([x, y, z]))
    d = distance_point_to_sector(c, SECTOR)
    inside = bool(SECTOR.contains(c))
    assert d >= 0.0
    assert (d == 0.0) == inside or d < 1e-9
