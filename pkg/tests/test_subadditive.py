from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cocyclelab.cocycle import constant_cocycle, conformal_cocycle, example46, expression_cocycle
from cocyclelab.errors import InputError, NotFound
from cocyclelab.subadditive import (
    SubadditiveFamily,
    birkhoff_average,
    constant_family,
    default_grid,
    distortion_family,
    distortion_growth_certificate,
    find_negative_level,
    level_maxima,
    log_norm_family,
    write_levels_csv,
)
from cocyclelab.torus import (
    PERIODIC_CAP,
    TorusPoint,
    make_automorphism,
    periodic_point_count,
    random_points,
    uniform_grid,
)

CAT = make_automorphism([[2, 1], [1, 1]])
BIG = make_automorphism([[41, 32], [32, 25]])
WAVY = [["2 + sin(2*pi*x1)", "0.3*cos(2*pi*x2)"], ["0.1", "1 + 0.5*cos(2*pi*x1)"]]


def cos_x1(p):
    return np.cos(2 * np.pi * p[:, 0])


def test_birkhoff_trivial_cases():
    assert birkhoff_average(lambda p: np.full(len(p), 3.5), CAT, (0.1, 0.2), 100) == 3.5
    assert birkhoff_average(cos_x1, CAT, (0.1, 0.2), 1) == pytest.approx(math.cos(0.2 * math.pi))
    with pytest.raises(InputError):
        birkhoff_average(cos_x1, CAT, (0.1, 0.2), 0)


def test_birkhoff_equidistribution():
    x = random_points(CAT.lattice, 1, np.random.default_rng(11))[0]
    assert abs(birkhoff_average(cos_x1, CAT, x, 10**6)) < 5e-3


@pytest.mark.parametrize("family", ["log_norm", "distortion"])
def test_subadditivity_spot_check(family):
    c = expression_cocycle(CAT, WAVY)
    fam = log_norm_family(c) if family == "log_norm" else distortion_family(c, 0.3)
    pts = random_points(CAT.lattice, 30, np.random.default_rng(2))
    for n, k in ((1, 1), (3, 5), (17, 9)):
        assert fam.subadditivity_defect(pts, n, k) <= 1e-9


def test_negative_level_examples():
    grid = uniform_grid(CAT.lattice, 8)
    assert find_negative_level(constant_family(CAT, -1.0), grid, 10).N == 1
    fam = log_norm_family(constant_cocycle(CAT, np.diag([0.5, 1 / 3])))
    level = find_negative_level(fam, grid, 10)
    assert level.N == 1 and level.maxima[0] == pytest.approx(-math.log(2))
    conf = conformal_cocycle(CAT, lambda p: 1 + 0.5 * cos_x1(p), lambda p: p[:, 1])
    assert find_negative_level(distortion_family(conf, 0.01), grid, 10).N == 1


def test_negative_level_not_found_is_inconclusive():
    with pytest.raises(NotFound):
        find_negative_level(constant_family(CAT, 1.0), uniform_grid(CAT.lattice, 4), 20)
    with pytest.raises(InputError):
        find_negative_level(constant_family(CAT, -1.0), [], 5)


def test_evaluator_without_sweep():
    fam = SubadditiveFamily(lambda pts, n: np.full(len(pts), 3.0 - n), CAT, 50)
    assert find_negative_level(fam, uniform_grid(CAT.lattice, 2), 10).N == 4
    with pytest.raises(InputError):
        fam(uniform_grid(CAT.lattice, 2), 51)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_negative_level_monotone_in_grid(seed):
    c = expression_cocycle(CAT, WAVY)
    fam = distortion_family(c, 1.2)
    rng = np.random.default_rng(seed)
    small = random_points(CAT.lattice, 5, rng)
    large = small + random_points(CAT.lattice, 20, rng)
    try:
        n_small = find_negative_level(fam, small, 64).N
    except NotFound:
        return
    try:
        n_large = find_negative_level(fam, large, 64).N
    except NotFound:
        return
    assert n_large >= n_small


def test_default_grid_contents():
    grid = default_grid(CAT, 4, 2)
    assert len(grid) == 16 + 1 + 5
    assert any(isinstance(p, TorusPoint) and p.coords == (0, 0) for p in grid)
    # periods 3 and 4 of the big matrix have more points than the enumeration cap and are skipped
    assert [periodic_point_count(BIG, n) > PERIODIC_CAP for n in (1, 2, 3, 4)] == [False, False, True, True]
    assert len(default_grid(BIG, 64, 4)) == 64 * 64 + 64 + 4352


def test_certificate_conformal_passes_with_unit_constant():
    c = conformal_cocycle(CAT, lambda p: 1 + 0.5 * cos_x1(p), lambda p: p[:, 1])
    cert = distortion_growth_certificate(c, 0.0, 0.05, uniform_grid(CAT.lattice, 8), 128)
    assert cert.passed and cert.constant == pytest.approx(1.0, abs=1e-12)


def test_certificate_unipotent_passes_with_finite_constant():
    c = constant_cocycle(CAT, [[1.0, 1.0], [0.0, 1.0]])
    cert = distortion_growth_certificate(c, 0.0, 0.05, uniform_grid(CAT.lattice, 2), 256)
    # K(n) is about n^2 + 2, so the constant is near max n^2 e^{-0.05 n} = (40/e)^2
    assert cert.passed
    assert cert.constant == pytest.approx((40 / math.e) ** 2, rel=0.02)


def test_certificate_example46_fails_at_fixed_point_rate():
    c = example46(BIG, 0.1).cocycle
    cert = distortion_growth_certificate(c, 0.0, 0.05, uniform_grid(BIG.lattice, 4), 256)
    assert not cert.passed
    assert cert.rate == pytest.approx(math.log(11 / 9), abs=1e-3)


def test_certificate_monotone_in_eps():
    c = expression_cocycle(CAT, WAVY)
    grid = uniform_grid(CAT.lattice, 4)
    consts = [distortion_growth_certificate(c, 0.5, eps, grid, 64).constant for eps in (0.01, 0.1, 0.5)]
    assert consts[0] >= consts[1] >= consts[2]


def test_example46_negative_level_above_fixed_point_rate():
    c = example46(BIG, 0.1).cocycle
    grid = default_grid(BIG, 16, 2)
    level = find_negative_level(distortion_family(c, 0.3), grid, 256)
    assert level.N >= 1 and level.maxima[-1] < 0


def test_levels_csv(tmp_path):
    maxima = level_maxima(constant_family(CAT, -0.5), uniform_grid(CAT.lattice, 2), 3, stop_when_negative=False)
    path = write_levels_csv(tmp_path / "levels.csv", maxima)
    assert path.read_text().splitlines() == ["n,max_a_n", "1,-0.5", "2,-1.0", "3,-1.5"]
