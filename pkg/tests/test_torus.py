from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocyclelab.errors import (
    LatticeNotInvariant,
    LeafRadiusExceeded,
    NotHyperbolic,
    NotUnimodular,
    OutsideProductChart,
    TooManyPeriodicPoints,
)
from cocyclelab.torus import (
    Lattice,
    TorusPoint,
    apply,
    cover_lift,
    leaf_coordinates,
    make_automorphism,
    orbit,
    orbits,
    periodic_point_count,
    periodic_points,
    random_points,
    stable_point,
    su_path,
    torus_dist,
    uniform_grid,
)

CAT = [[2, 1], [1, 1]]
BIG = [[41, 32], [32, 25]]


def quadratic_roots(m):
    tr = m[0][0] + m[1][1]
    det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
    disc = math.sqrt(tr * tr - 4 * det)
    return (tr + disc) / 2, (tr - disc) / 2


@pytest.mark.parametrize("m", [CAT, BIG])
def test_eigenvalues_match_quadratic_formula(m):
    auto = make_automorphism(m)
    lam_u, lam_s = quadratic_roots(m)
    assert auto.lam_u == pytest.approx(lam_u, rel=1e-14)
    assert auto.nu == pytest.approx(abs(1 / lam_u), rel=1e-12)
    assert np.allclose(auto.M @ auto.v_s, auto.lam_s * auto.v_s, atol=1e-12)
    assert np.allclose(auto.M @ auto.v_u, auto.lam_u * auto.v_u, atol=1e-10)


def test_pinned_rates():
    assert make_automorphism(CAT).lam_u == pytest.approx(2.6180, abs=1e-4)
    assert make_automorphism(CAT).nu == pytest.approx(0.3820, abs=1e-4)
    assert make_automorphism(BIG).lam_u == pytest.approx(33 + math.sqrt(1088), rel=1e-14)
    assert make_automorphism(BIG).nu == pytest.approx(0.015154, abs=1e-6)


def test_rejects_bad_matrices():
    with pytest.raises(NotUnimodular):
        make_automorphism([[2, 0], [0, 1]])
    with pytest.raises(NotHyperbolic):
        make_automorphism([[1, 1], [0, 1]])
    with pytest.raises(LatticeNotInvariant):
        make_automorphism(CAT, Lattice((4, 1)))


def test_rejections_are_value_errors():
    with pytest.raises(ValueError):
        make_automorphism([[2, 0], [0, 1]])


def test_cover_lifts_of_big_matrix():
    base = make_automorphism(BIG)
    for cover in ((4, 1), (2, 1)):
        lifted, project = cover_lift(base, cover)
        x = TorusPoint((Fraction(7, 5), Fraction(1, 3)), lifted.lattice)
        assert project(apply(lifted, x)) == apply(base, project(x))


def test_apply_hand_example():
    auto = make_automorphism(CAT)
    y = apply(auto, (0.5, 0.5))
    assert y.coords == (0.5, 0.0)


def test_apply_long_float_orbit_is_exact():
    auto = make_automorphism(CAT)
    x = TorusPoint((Fraction(3, 7), Fraction(2, 11)), Lattice.standard())
    y = x
    for _ in range(200):
        y = TorusPoint(tuple(sum(Fraction(auto.matrix[i][j]) * y.coords[j] for j in range(2)) for i in range(2)),
                       y.lattice)
    assert apply(auto, x, 200) == y


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 10**6), st.integers(0, 10**6), st.integers(-300, 300))
def test_apply_inverts(a, q, b, n):
    auto = make_automorphism(CAT)
    x = TorusPoint((Fraction(a, q), Fraction(b, q + 1)), auto.lattice)
    assert apply(auto, apply(auto, x, n), -n) == x


def test_orbit_matches_apply():
    auto = make_automorphism(BIG)
    x = TorusPoint((Fraction(1, 9), Fraction(5, 13)), auto.lattice)
    traj = orbit(auto, x, 3000, block=64)
    for k in (0, 1, 63, 64, 65, 2999, 3000):
        assert np.allclose(traj[k], apply(auto, x, k).array, atol=1e-15)
    back = orbit(auto, x, 50, backward=True)
    assert np.allclose(back[50], apply(auto, x, -50).array, atol=1e-15)
    multi = orbits(auto, [x, x], 10)
    assert multi.shape == (11, 2, 2)
    assert np.allclose(multi[:, 0], traj[:11])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_torus_dist_metric(v):
    lat = Lattice.standard()
    x, y, z = np.array(v[0:2]), np.array(v[2:4]), np.array(v[4:6])
    assert torus_dist(x, y, lat) == pytest.approx(torus_dist(y, x, lat))
    assert torus_dist(x, z, lat) <= torus_dist(x, y, lat) + torus_dist(y, z, lat) + 1e-12
    assert torus_dist(x, x + np.array([2.0, -1.0]), lat) < 1e-12
    assert torus_dist(x, y, lat) <= math.sqrt(2) / 2 + 1e-12


def test_stable_point_contracts_at_rate_nu():
    auto = make_automorphism(CAT)
    assert stable_point(auto, (0, 0), 0.0).coords == (0.0, 0.0)
    y = stable_point(auto, (0, 0), 0.1)
    ratio = torus_dist(apply(auto, y), apply(auto, (0, 0))) / torus_dist(y, TorusPoint((0, 0), auto.lattice))
    assert ratio == pytest.approx(auto.nu, abs=1e-10)
    with pytest.raises(LeafRadiusExceeded):
        stable_point(auto, (0, 0), 0.5)


def test_su_path_solves_linear_system():
    auto = make_automorphism(CAT)
    x, y = (0.0, 0.0), (0.01, 0.02)
    s, u = leaf_coordinates(auto, x, y)
    oracle = np.linalg.solve(np.column_stack([auto.v_s, auto.v_u]), np.array(y) - np.array(x))
    assert abs(s - oracle[0]) < 1e-12 and abs(u - oracle[1]) < 1e-12
    legs = su_path(auto, x, y)
    assert [leg.leaf for leg in legs] == ["stable", "unstable"]
    assert torus_dist(legs[1].end, TorusPoint(y, auto.lattice)) < 1e-12
    same = su_path(auto, x, x)
    assert [leg.length for leg in same] == [0.0, 0.0]
    with pytest.raises(OutsideProductChart):
        su_path(auto, x, (0.3, 0.3))


def brute_force_fixed_points(auto, n):
    # f^n x = x forces x to have denominator dividing |det(M^n - Id)|
    q = periodic_point_count(auto, n)
    out = []
    for a in range(q):
        for b in range(q):
            x = TorusPoint((Fraction(a, q), Fraction(b, q)), auto.lattice)
            if apply(auto, x, n) == x:
                out.append(x)
    return sorted(out, key=lambda p: p.coords)


@pytest.mark.parametrize("n,count", [(1, 1), (2, 5), (3, 16), (4, 45)])
def test_periodic_points_against_brute_force(n, count):
    auto = make_automorphism(CAT)
    pts = periodic_points(auto, n)
    assert periodic_point_count(auto, n) == count
    assert pts == brute_force_fixed_points(auto, n)


def test_periodic_points_on_cover():
    base = make_automorphism(BIG)
    lifted, project = cover_lift(base, (4, 1))
    pts = periodic_points(lifted, 1)
    # conjugating by diag(4, 1) keeps |det(M - Id)|
    assert len(pts) == abs((41 - 1) * (25 - 1) - 32 * 32) == 64
    assert len(set(pts)) == 64
    assert all(apply(lifted, p) == p for p in pts)
    assert all(apply(base, project(p)) == project(p) for p in pts)


def test_periodic_cap():
    with pytest.raises(TooManyPeriodicPoints):
        periodic_points(make_automorphism(BIG), 3, cap=1000)


def test_uniform_grid_and_random_points():
    lat = Lattice((2, 1))
    g = uniform_grid(lat, 4)
    assert g.shape == (16, 2) and g[:, 0].max() == 1.5
    a = random_points(lat, 5, np.random.default_rng(3))
    b = random_points(lat, 5, np.random.default_rng(3))
    assert a == b and all(p.exact for p in a)
