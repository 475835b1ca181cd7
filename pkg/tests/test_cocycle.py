from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocyclelab.cocycle import (
    chain_product,
    constant_cocycle,
    conformal_cocycle,
    example46,
    expression_cocycle,
    fiber_bunching_margin,
    iterate,
    iterates_at,
    make_cocycle,
    orbit_products,
    quasiconformal_distortion,
    rotation,
    spectral_norm,
)
from cocyclelab.errors import CongruenceViolated, ConfigError, EpsilonOutOfRange, SingularFiberMap
from cocyclelab.torus import TorusPoint, apply, make_automorphism, uniform_grid

CAT = make_automorphism([[2, 1], [1, 1]])
BIG = make_automorphism([[41, 32], [32, 25]])


def naive_product(c, x, n):
    """Plain left-multiplied product along the exact orbit; only for short n."""
    out = np.eye(c.fiber_dim)
    for i in range(n):
        out = c(apply(c.base, x, i).array) @ out
    return out


def wavy(base):
    return expression_cocycle(base, [["2 + sin(2*pi*x1)", "0.3*cos(2*pi*x2)"], ["0.1", "1 + 0.5*cos(2*pi*x1)"]])


def test_iterate_zero_is_identity():
    r = iterate(wavy(CAT), (0.3, 0.1), 0)
    assert np.array_equal(r.matrix, np.eye(2))
    assert r.log_norm == r.log_conorm == 0.0


def test_iterate_matches_naive_product():
    c = wavy(CAT)
    x = TorusPoint((Fraction(2, 7), Fraction(3, 5)), CAT.lattice)
    for n in (1, 2, 7, 30):
        expected = naive_product(c, x, n)
        r = iterate(c, x, n)
        assert np.allclose(r.matrix, expected, rtol=1e-12, atol=0)
        assert math.exp(r.log_norm) == pytest.approx(np.linalg.norm(expected, 2), rel=1e-9)
        # sigma_min from the product of inverses; the SVD of the product loses it to cancellation
        inv = np.linalg.multi_dot([np.eye(2)] + [np.linalg.inv(c(apply(CAT, x, i).array)) for i in range(n)])
        assert math.exp(-r.log_conorm) == pytest.approx(np.linalg.norm(inv, 2), rel=1e-9)


def test_negative_iterate_is_inverse_of_backward_product():
    c = wavy(CAT)
    x = TorusPoint((Fraction(1, 3), Fraction(1, 8)), CAT.lattice)
    n = 12
    back = iterate(c, x, -n).matrix
    fwd = naive_product(c, apply(CAT, x, -n), n)
    assert np.allclose(back @ fwd, np.eye(2), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 1000))
def test_cocycle_identity(n, m, a):
    c = wavy(CAT)
    x = TorusPoint((Fraction(a, 1009), Fraction(7, 11)), CAT.lattice)
    lhs = iterate(c, x, n + m).matrix
    rhs = iterate(c, apply(CAT, x, n), m).matrix @ iterate(c, x, n).matrix
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-12 * np.abs(lhs).max())


def test_iterates_at_matches_individual_calls():
    c = wavy(CAT)
    x = (0.125, 0.375)
    many = iterates_at(c, x, [3, 10, 5])
    for r, n in zip(many, [3, 10, 5]):
        assert r.n == n
        assert r.log_norm == pytest.approx(iterate(c, x, n).log_norm, rel=1e-13)


def test_long_products_do_not_overflow():
    c = constant_cocycle(CAT, np.diag([3.0, 0.5]))
    r = iterate(c, (0.1, 0.2), 5000)
    assert r.log_norm == pytest.approx(5000 * math.log(3), rel=1e-12)
    assert r.log_conorm == pytest.approx(5000 * math.log(0.5), rel=1e-12)


def test_chain_product_order_and_scale():
    rng = np.random.default_rng(1)
    mats = rng.normal(size=(9, 3, 3))
    unit, log_scale = chain_product(mats)
    expected = np.linalg.multi_dot(list(mats[::-1]))
    assert np.allclose(math.exp(log_scale) * unit, expected, rtol=1e-12, atol=1e-12)


def test_spectral_norm_closed_form_against_svd():
    mats = np.random.default_rng(2).normal(size=(500, 2, 2))
    assert np.allclose(spectral_norm(mats), np.linalg.norm(mats, 2, axis=(-2, -1)), rtol=1e-13)


def test_unipotent_distortion_is_golden_ratio_squared():
    c = constant_cocycle(CAT, [[1, 1], [0, 1]])
    K, logK = quasiconformal_distortion(c, (0, 0), 1)
    assert K == pytest.approx((3 + math.sqrt(5)) / 2, rel=1e-12)
    r = iterate(c, (0, 0), 5)
    assert np.allclose(r.matrix, [[1, 5], [0, 1]], atol=1e-13)


def test_example46_fixed_point_distortion():
    c = example46(BIG, 0.1).cocycle
    assert np.allclose(c((0.0, 0.0)), np.diag([1.1, 0.9]), atol=1e-15)
    for n in (1, 10, 50):
        K, logK = quasiconformal_distortion(c, (0, 0), n)
        assert logK == pytest.approx(n * math.log(11 / 9), rel=1e-12)


def test_example46_torus_and_cover_forms_agree():
    ex = example46(BIG, 0.1)
    grid = uniform_grid(ex.cover4.base.lattice, 100)[::4]
    assert len(grid) == 2500
    cover = ex.cover4(grid)
    torus = ex.cocycle(ex.project(grid))
    assert np.max(np.abs(cover - torus)) < 1e-12
    pts = np.random.default_rng(0).uniform([0, 0], [4, 1], size=(10_000, 2))
    assert np.max(np.abs(ex.cover4(pts) - ex.cocycle(ex.project(pts)))) < 1e-12


def test_example46_conjugacy_structure():
    ex = example46(BIG, 0.1)
    pts = np.random.default_rng(5).uniform([0, 0], [4, 1], size=(50, 2))
    fx = ex.cover4.base.step(pts)
    rebuilt = ex.conjugacy(fx) @ ex.diagonal(pts) @ np.swapaxes(ex.conjugacy(pts), -1, -2)
    assert np.allclose(rebuilt, ex.cover4(pts), atol=1e-14)


def test_example46_input_checks():
    with pytest.raises(CongruenceViolated):
        example46(CAT, 0.1)
    with pytest.raises(EpsilonOutOfRange):
        example46(BIG, 1.0)


@pytest.mark.parametrize(
    "cocycle,expected",
    [
        (lambda: constant_cocycle(CAT, np.eye(2)), CAT.nu),
        (lambda: constant_cocycle(CAT, np.diag([10, 0.1])), 100 * CAT.nu),
    ],
)
def test_fiber_bunching_margin_closed_forms(cocycle, expected):
    assert fiber_bunching_margin(cocycle()) == pytest.approx(expected, rel=1e-12)


def test_example46_margin_bound():
    margin = fiber_bunching_margin(example46(BIG, 0.1).cocycle)
    assert margin <= 1.1 / 0.9 * BIG.nu + 1e-15
    assert margin == pytest.approx(0.01852, abs=1e-5)


def test_conformal_cocycle_has_bounded_distortion():
    G = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = conformal_cocycle(CAT, lambda p: 1 + 0.2 * np.cos(2 * np.pi * p[:, 0]), lambda p: p[:, 1], G)
    # F^n = s G^{-1/2} R G^{1/2}, so the Euclidean distortion is at most cond(G) for every n
    cond_G = np.linalg.cond(G)
    for n in (1, 10, 100):
        assert quasiconformal_distortion(c, (0.2, 0.7), n)[0] <= cond_G * (1 + 1e-12)
    F = c((0.2, 0.7))
    # F^T G F is a multiple of G exactly when F is conformal for G
    M = F.T @ G @ F
    assert np.allclose(M / M[0, 0], G / G[0, 0], atol=1e-13)
    assert quasiconformal_distortion(conformal_cocycle(CAT, 2.0, 0.4), (0.1, 0.1), 40)[1] < 1e-12


def test_rotation_is_orthogonal():
    R = rotation(np.linspace(0, 7, 9))
    assert np.allclose(R @ np.swapaxes(R, -1, -2), np.eye(2), atol=1e-15)


def test_singular_cocycle_rejected():
    with pytest.raises(SingularFiberMap):
        make_cocycle(CAT, lambda p: np.zeros((len(p), 2, 2)), 2)
    with pytest.raises(SingularFiberMap):
        expression_cocycle(CAT, [["cos(2*pi*x1)", "0"], ["0", "1"]])


def test_expression_grammar_rejects_unknown_names():
    with pytest.raises(ConfigError):
        expression_cocycle(CAT, [["__import__('os')", "0"], ["0", "1"]])
    with pytest.raises(ValueError):
        expression_cocycle(CAT, [["x1 ** 2", "0"], ["0", "1"]])


def test_orbit_products_match_iterate():
    c = wavy(CAT)
    pts = [TorusPoint((Fraction(1, 5), Fraction(2, 9)), CAT.lattice), TorusPoint((Fraction(3, 4), 0), CAT.lattice)]
    for backward, sign in ((False, 1), (True, -1)):
        states = list(orbit_products(c, pts, 20, backward=backward))
        for j, p in enumerate(pts):
            r = iterate(c, p, sign * 20)
            assert states[-1].log_norm[j] == pytest.approx(r.log_norm, rel=1e-11)
            assert states[-1].log_conorm[j] == pytest.approx(r.log_conorm, rel=1e-11)
