import json
import warnings

import numpy as np
import pytest

from libs.maic.alt_weights import (
    DistanceMetric,
    WeightBasis,
    alt_weight_basis,
    alternative_weights,
    blend_by_distance,
    distance_weight_correlation,
    projection_matrix,
)
from libs.maic.data_model import IpdMatrix
from libs.maic.errors import DimensionError, HullInfeasibleError
from libs.maic.hull_check import witness_residual
from libs.maic.maic_fit import fit_maic
from libs.metrics.shared_metrics import metrics
from tests.helpers import interior_instance, make_ad

TENDENCY_INSTANCES = 200


def assert_feasible(ipd, ad, w):
    assert np.min(w) >= 0
    assert w.sum() == pytest.approx(1.0, abs=1e-10)
    assert witness_residual(ipd, ad, w) <= 1e-8


# Test projection_matrix
def test_projection_properties(rng):
    for _ in range(10):
        ipd = IpdMatrix.from_rows(rng.normal(size=(12, 3)))
        projection = projection_matrix(ipd)
        P = projection.matrix
        np.testing.assert_allclose(P @ P, P, atol=1e-8)
        np.testing.assert_allclose(P, P.T, atol=1e-12)
        np.testing.assert_allclose(ipd.values @ P, 0.0, atol=1e-8)
        assert projection.rank == 3
        assert not projection.rank_deficient


def test_square_full_rank_gives_zero_projection():
    ipd = IpdMatrix.from_rows([[0.0, 1.0], [1.0, 2.0]], ["a", "b"])
    np.testing.assert_allclose(projection_matrix(ipd).matrix, 0.0, atol=1e-10)


def test_collinear_rows_are_flagged(rng):
    base = rng.normal(size=10)
    ipd = IpdMatrix.from_rows(np.column_stack([base, 3.0 * base]), ["a", "b"])
    projection = projection_matrix(ipd)
    assert projection.rank == 1
    assert projection.rank_deficient
    np.testing.assert_allclose(ipd.values @ projection.matrix, 0.0, atol=1e-8)


def test_centred_projection_fixes_feasible_weights(square_ipd):
    ad = make_ad(square_ipd, [0.45, 0.5])
    P = projection_matrix(square_ipd, center=ad.values).matrix
    w = alt_weight_basis(square_ipd, ad).columns[:, 0]
    np.testing.assert_allclose(P @ w, w, atol=1e-8)


# Test alt_weight_basis
def test_basis_columns_are_sparse_and_feasible(square_ipd):
    ad = make_ad(square_ipd, [0.5, 0.5])
    basis = alt_weight_basis(square_ipd, ad)
    assert basis.columns.shape == (8, 8)
    for k in range(basis.n):
        assert_feasible(square_ipd, ad, basis.columns[:, k])
    assert max(basis.support_sizes()) <= 3


def test_random_bases_respect_support_bound(rng):
    for _ in range(20):
        ipd, ad = interior_instance(rng, 15, 3)
        basis = alt_weight_basis(ipd, ad)
        assert max(basis.support_sizes()) <= ipd.p + 1
        for k in range(basis.n):
            assert_feasible(ipd, ad, basis.columns[:, k])


def test_simplex_ipd_has_one_weighting():
    ipd = IpdMatrix.from_rows([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], ["a", "b"])
    ad = make_ad(ipd, [0.2, 0.3])
    basis = alt_weight_basis(ipd, ad)
    for k in range(3):
        np.testing.assert_allclose(basis.columns[:, k], [0.5, 0.2, 0.3], atol=1e-10)


def test_threaded_basis_matches_serial(rng):
    ipd, ad = interior_instance(rng, 30, 4)
    serial = alt_weight_basis(ipd, ad)
    threaded = alt_weight_basis(ipd, ad, max_workers=4)
    np.testing.assert_array_equal(serial.columns, threaded.columns)


def test_basis_outside_hull(square_ipd):
    with pytest.raises(HullInfeasibleError) as info:
        alt_weight_basis(square_ipd, make_ad(square_ipd, [2.0, 2.0]))
    assert info.value.context()["status"] == "Infeasible"


# Test blend_by_distance
def test_inverse_square_blend():
    ipd = IpdMatrix.from_rows([[0.0], [2.0]], ["a"])
    ad = make_ad(ipd, [0.5])
    result = alternative_weights(ipd, ad)
    np.testing.assert_allclose(result.blend, [0.9, 0.1])
    np.testing.assert_allclose(result.final, [0.75, 0.25], atol=1e-12)
    assert result.flags == ()


def test_equidistant_patients_blend_uniformly():
    ipd = IpdMatrix.from_rows([[0, 0], [1, 0], [0, 1], [1, 1]], ["a", "b"])
    result = alternative_weights(ipd, make_ad(ipd, [0.5, 0.5]))
    np.testing.assert_allclose(result.blend, 0.25)
    assert_feasible(ipd, make_ad(ipd, [0.5, 0.5]), result.final)


def test_patient_on_ad_is_floored(square_ipd):
    ad = make_ad(square_ipd, [0.5, 0.5])
    result = alternative_weights(square_ipd, ad)
    assert "distance_floor:4" in result.flags
    assert result.blend[4] > 0.999
    assert_feasible(square_ipd, ad, result.final)


def test_mahalanobis_blend(rng):
    ipd, ad = interior_instance(rng, 25, 2)
    result = alternative_weights(ipd, ad, DistanceMetric.MAHALANOBIS)
    assert result.distance_metric == DistanceMetric.MAHALANOBIS
    assert result.blend.sum() == pytest.approx(1.0)
    assert_feasible(ipd, ad, result.final)
    assert json.loads(json.dumps(result.to_dict()))["distance_metric"] == "mahalanobis"


def test_random_blends_stay_feasible(rng):
    ipd, ad = interior_instance(rng, 20, 3)
    basis = alt_weight_basis(ipd, ad)
    for _ in range(100):
        d = rng.dirichlet(np.ones(ipd.n))
        assert_feasible(ipd, ad, basis.columns @ d)


def test_blend_checks_basis_shape(square_ipd):
    basis = WeightBasis(np.full((3, 3), 1.0 / 3.0))
    with pytest.raises(DimensionError):
        blend_by_distance(basis, square_ipd, make_ad(square_ipd, [0.45, 0.5]))


def test_to_dict_can_include_basis(square_ipd):
    result = alternative_weights(square_ipd, make_ad(square_ipd, [0.45, 0.5]))
    assert "basis" not in result.to_dict()
    assert len(result.to_dict(include_basis=True)["basis"]) == square_ipd.n


# Test distance_weight_correlation
def test_correlation_of_uniform_weights_is_undefined(square_ipd):
    assert distance_weight_correlation(np.ones(8), square_ipd, make_ad(square_ipd, [0.45, 0.5])) is None


def test_correlation_sign():
    ipd = IpdMatrix.from_rows([[0.0], [1.0], [3.0]], ["a"])
    ad = make_ad(ipd, [0.0])
    assert distance_weight_correlation([3.0, 2.0, 1.0], ipd, ad) == pytest.approx(-1.0)
    assert distance_weight_correlation([1.0, 2.0, 3.0], ipd, ad) == pytest.approx(1.0)


# Test closeness tendency against MAIC weights
def test_alternative_weights_favour_close_patients(tmp_path):
    rng = np.random.default_rng(31)
    wins = 0
    rows = []
    for k in range(TENDENCY_INSTANCES):
        ipd, ad = interior_instance(rng, 30, 2)
        alt = alternative_weights(ipd, ad)
        maic = fit_maic(ipd, ad)
        rho_alt = distance_weight_correlation(alt.final, ipd, ad)
        rho_maic = distance_weight_correlation(maic.weights, ipd, ad)
        closer = rho_alt is not None and rho_maic is not None and rho_alt < rho_maic
        wins += closer
        rows.append({"instance": k, "alt": rho_alt, "maic": rho_maic, "closer": bool(closer)})
    (tmp_path / "closeness_tendency.json").write_text(json.dumps(rows, indent=2))
    if wins < 0.8 * TENDENCY_INSTANCES:
        warnings.warn(f"alternative weights favoured close patients in only {wins} "
                      f"of {TENDENCY_INSTANCES} instances")


def test_timing_carries_problem_size(square_ipd, tmp_path):
    sink = tmp_path / "metrics.jsonl"
    metrics.configure("ERROR", str(sink))
    try:
        alternative_weights(square_ipd, make_ad(square_ipd, [0.45, 0.5]))
        metrics.flush()
    finally:
        metrics.configure("INFO", None)
    records = [json.loads(line) for line in sink.read_text().splitlines()]
    timing = next(r for r in records if r.get("metric_name") == "alternative_weights_duration")
    assert timing["dimensions"]["n"] == 8
    assert timing["dimensions"]["p"] == 2
    assert timing["dimensions"]["Status"] == "Success"
