import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from libs.maic.config import HullOptions
from libs.maic.data_model import IpdMatrix
from libs.maic.hull_check import (
    HullStatus,
    check_in_hull,
    interiority_probe,
    witness_residual,
)
from tests.helpers import make_ad

ORACLE_INSTANCES = 1000


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def gift_wrap(points):
    """Counter-clockwise convex hull by Jarvis march."""
    points = [tuple(p) for p in points]
    start = min(points)
    hull = [start]
    current = start
    while True:
        candidate = points[0] if points[0] != current else points[1]
        for p in points:
            if p == current:
                continue
            turn = _cross(current, candidate, p)
            if turn < 0 or (turn == 0 and
                            np.hypot(p[0] - current[0], p[1] - current[1]) >
                            np.hypot(candidate[0] - current[0], candidate[1] - current[1])):
                candidate = p
        if candidate == start:
            return hull
        hull.append(candidate)
        current = candidate


def inside_polygon(hull, point):
    if len(hull) < 3:
        return False
    return all(_cross(hull[i], hull[(i + 1) % len(hull)], point) >= 0 for i in range(len(hull)))


def assert_witness(ipd, ad, verdict):
    w = verdict.witness
    assert w is not None
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-10)
    assert witness_residual(ipd, ad, w) <= 1e-8


# Test verdicts on the unit square
def test_interior_point(square_ipd):
    ad = make_ad(square_ipd, [0.45, 0.5])
    verdict = check_in_hull(square_ipd, ad)
    assert verdict.status == HullStatus.INTERIOR
    assert verdict.exit_code == 0
    assert verdict.certificate is None
    assert_witness(square_ipd, ad, verdict)


def test_edge_midpoint_is_boundary(square_ipd):
    ad = make_ad(square_ipd, [0.5, 0.0])
    verdict = check_in_hull(square_ipd, ad)
    assert verdict.status == HullStatus.BOUNDARY
    assert verdict.exit_code == 0
    assert verdict.boundary_directions == ("-x2",)
    assert_witness(square_ipd, ad, verdict)


def test_vertex_is_boundary(square_ipd):
    ad = make_ad(square_ipd, [1.0, 1.0])
    verdict = check_in_hull(square_ipd, ad)
    assert verdict.status == HullStatus.BOUNDARY
    assert set(verdict.boundary_directions) == {"+x1", "+x2"}


def test_exterior_point_has_separating_direction(square_ipd):
    ad = make_ad(square_ipd, [2.0, 2.0])
    verdict = check_in_hull(square_ipd, ad)
    assert verdict.status == HullStatus.INFEASIBLE
    assert verdict.exit_code == 2
    assert verdict.witness is None
    c = verdict.certificate
    assert c @ ad.values > np.max(c @ square_ipd.values)
    assert verdict.separation_margin > 0
    assert verdict.separation_margin == pytest.approx(
        c @ ad.values - np.max(c @ square_ipd.values))


def test_certificate_is_in_raw_units():
    ipd = IpdMatrix.from_rows([[0, 0], [1000, 0], [0, 1], [1000, 1]], ["a", "b"])
    ad = make_ad(ipd, [500.0, 1.5])
    verdict = check_in_hull(ipd, ad)
    assert verdict.status == HullStatus.INFEASIBLE
    assert verdict.certificate @ ad.values > np.max(verdict.certificate @ ipd.values)


def test_mean_gives_uniform_witness(square_ipd):
    ad = make_ad(square_ipd, square_ipd.column_mean)
    verdict = check_in_hull(square_ipd, ad)
    assert verdict.status == HullStatus.INTERIOR
    np.testing.assert_allclose(verdict.witness, np.full(square_ipd.n, 1.0 / square_ipd.n))


def test_to_dict_lists_support(square_ipd):
    data = check_in_hull(square_ipd, make_ad(square_ipd, [0.5, 0.0])).to_dict()
    assert data["status"] == "Boundary"
    assert data["certificate"] is None
    assert all(data["witness"][i] > 0 for i in data["witness_support"])


# Test degenerate inputs
def test_single_patient():
    ipd = IpdMatrix.from_rows([[1.0, 2.0]], ["a", "b"])
    assert check_in_hull(ipd, make_ad(ipd, [1.0, 2.0])).status == HullStatus.BOUNDARY
    assert check_in_hull(ipd, make_ad(ipd, [1.0, 2.5])).status == HullStatus.INFEASIBLE


def test_constant_covariate_is_decided():
    ipd = IpdMatrix.from_rows([[0, 5], [1, 5], [2, 5]], ["a", "b"])
    assert check_in_hull(ipd, make_ad(ipd, [1.0, 5.0])).status == HullStatus.BOUNDARY
    assert check_in_hull(ipd, make_ad(ipd, [1.0, 5.1])).status == HullStatus.INFEASIBLE


def test_one_dimensional_range():
    ipd = IpdMatrix.from_rows([[0.0], [2.0], [3.0]], ["a"])
    assert check_in_hull(ipd, make_ad(ipd, [2.9])).status == HullStatus.INTERIOR
    assert check_in_hull(ipd, make_ad(ipd, [3.0])).status == HullStatus.BOUNDARY
    assert check_in_hull(ipd, make_ad(ipd, [-0.01])).status == HullStatus.INFEASIBLE


# Test interiority_probe
def test_probe_epsilon(square_ipd):
    ad = make_ad(square_ipd, [0.5, 1e-3])
    assert interiority_probe(square_ipd, ad) == HullStatus.INTERIOR
    assert interiority_probe(square_ipd, ad, epsilon=1e-2) == HullStatus.BOUNDARY


def test_probe_epsilon_from_options(square_ipd):
    ad = make_ad(square_ipd, [0.5, 1e-3])
    verdict = check_in_hull(square_ipd, ad, HullOptions(probe_epsilon=1e-2))
    assert verdict.status == HullStatus.BOUNDARY


# Test against an independent oracle
def test_agrees_with_gift_wrapping_oracle():
    rng = np.random.default_rng(1)
    started = time.perf_counter()
    for _ in range(ORACLE_INSTANCES):
        n = int(rng.integers(3, 13))
        points = rng.standard_normal((n, 2))
        lo, hi = points.min(axis=0), points.max(axis=0)
        center, half = (lo + hi) / 2, (hi - lo)
        x = center + rng.uniform(-1, 1, size=2) * half
        ipd = IpdMatrix.from_rows(points, ["a", "b"])
        verdict = check_in_hull(ipd, make_ad(ipd, x))
        expected = inside_polygon(gift_wrap(points), tuple(x))
        assert verdict.feasible == expected, (points.tolist(), x.tolist())
    assert time.perf_counter() - started < 20


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=6))
def test_convex_combination_is_never_infeasible(seed, p):
    rng = np.random.default_rng(seed)
    n = p + 1 + int(rng.integers(0, 15))
    ipd = IpdMatrix.from_rows(rng.normal(size=(n, p)))
    w = rng.dirichlet(np.ones(n))
    ad = make_ad(ipd, ipd.values @ w)
    verdict = check_in_hull(ipd, ad)
    assert verdict.feasible
    assert_witness(ipd, ad, verdict)


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 5))
    n = p + 1 + int(rng.integers(0, 12))
    ipd = IpdMatrix.from_rows(rng.normal(size=(n, p)))
    ad = make_ad(ipd, rng.uniform(-1.5, 1.5, size=p))
    return rng, ipd, ad


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_shifting_data_and_ad_keeps_verdict(seed):
    rng, ipd, ad = _random_instance(seed)
    shift = rng.uniform(-100, 100, size=ipd.p)
    moved = IpdMatrix(ipd.values + shift[:, None], ipd.covariate_names)
    moved_ad = make_ad(moved, ad.values + shift)
    verdict, moved_verdict = check_in_hull(ipd, ad), check_in_hull(moved, moved_ad)
    assert moved_verdict.status == verdict.status
    if moved_verdict.feasible:
        assert_witness(moved, moved_ad, moved_verdict)
        assert witness_residual(moved, moved_ad, verdict.witness) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_same_inputs_same_verdict(seed):
    _, ipd, ad = _random_instance(seed)
    first, second = check_in_hull(ipd, ad), check_in_hull(ipd, ad)
    assert first.status == second.status
    assert first.boundary_directions == second.boundary_directions
    for a, b in ((first.witness, second.witness), (first.certificate, second.certificate)):
        if a is None:
            assert b is None
        else:
            np.testing.assert_array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=10))
def test_adding_patients_never_makes_a_feasible_ad_infeasible(seed, extra):
    rng, ipd, ad = _random_instance(seed)
    if not check_in_hull(ipd, ad).feasible:
        ad = make_ad(ipd, ipd.values @ rng.dirichlet(np.ones(ipd.n)))
    more = IpdMatrix(np.hstack([ipd.values, rng.normal(scale=3.0, size=(ipd.p, extra))]),
                     ipd.covariate_names)
    verdict = check_in_hull(more, make_ad(more, ad.values))
    assert verdict.feasible
    assert_witness(more, make_ad(more, ad.values), verdict)
