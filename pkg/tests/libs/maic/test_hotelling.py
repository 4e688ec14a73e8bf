import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from libs.maic.data_model import IpdMatrix
from libs.maic.errors import InvalidArgumentError, SingularCovarianceError
from libs.maic.hotelling import (
    HotellingMethod,
    HotellingVariant,
    f_cdf,
    f_sf,
    hotelling_fixed_ad,
    hotelling_resampled,
    hotelling_two_sample,
    mahalanobis_location,
)
from tests.helpers import gaussian_ipd, make_ad

NULL_REPLICATIONS = 2000
PATTERN_REPLICATIONS = 500


def _betacf(a, b, x):
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 1000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise AssertionError("continued fraction did not converge")


def oracle_f_cdf(f, df1, df2):
    a, b = df1 / 2.0, df2 / 2.0
    x = df1 * f / (df1 * f + df2)
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                     + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def offset_ad(ipd, scale):
    return make_ad(ipd, ipd.column_mean + scale * ipd.values.std(axis=1, ddof=1))


# Test the F distribution helpers
@pytest.mark.parametrize("df1", [1, 2, 5, 9])
@pytest.mark.parametrize("df2", [3, 10, 50, 200])
def test_f_cdf_against_continued_fraction(df1, df2):
    for f in (0.05, 0.5, 1.0, 2.0, 5.0, 20.0):
        assert f_cdf(f, df1, df2) == pytest.approx(oracle_f_cdf(f, df1, df2), abs=1e-8)
        assert f_cdf(f, df1, df2) + f_sf(f, df1, df2) == pytest.approx(1.0, abs=1e-12)


def test_f_helpers_at_zero():
    assert f_cdf(0.0, 2, 10) == 0.0
    assert f_sf(0.0, 2, 10) == 1.0


# Test the statistic
def test_ad_at_ipd_mean(square_ipd):
    result = hotelling_fixed_ad(square_ipd, make_ad(square_ipd, square_ipd.column_mean))
    assert result.statistic == 0.0
    assert result.p_value == 1.0
    assert (result.df1, result.df2) == (2, 6)
    assert result.method == HotellingMethod.F_DISTRIBUTION
    assert "compatible" in result.interpretation()


def test_single_covariate_is_squared_t(rng):
    ipd = gaussian_ipd(rng, 40, 1, mean=[0.3])
    ad = make_ad(ipd, [0.0])
    result = hotelling_fixed_ad(ipd, ad)
    t = stats.ttest_1samp(ipd.values[0], 0.0)
    assert result.statistic == pytest.approx(t.statistic ** 2, rel=1e-10)
    assert result.f_statistic == pytest.approx(result.statistic)
    assert result.p_value == pytest.approx(t.pvalue, rel=1e-8)


def test_two_sample_scaling(rng):
    ipd = gaussian_ipd(rng, 60, 3)
    ad = make_ad(ipd, [0.2, -0.1, 0.05], n_ad=120)
    fixed = hotelling_fixed_ad(ipd, ad)
    two = hotelling_two_sample(ipd, ad)
    assert two.variant == HotellingVariant.TWO_SAMPLE
    assert two.statistic == pytest.approx(fixed.statistic * 120 / 180)
    assert (two.df1, two.df2) == (3, 57)
    assert two.p_value > fixed.p_value


def test_two_sample_needs_ad_size(square_ipd):
    with pytest.raises(InvalidArgumentError, match="n_ad"):
        hotelling_two_sample(square_ipd, make_ad(square_ipd, [0.4, 0.5]))


def test_too_few_patients():
    ipd = IpdMatrix.from_rows([[0.0, 1.0], [1.0, 0.0]], ["a", "b"])
    with pytest.raises(InvalidArgumentError, match="n > p"):
        hotelling_fixed_ad(ipd, make_ad(ipd, [0.5, 0.5]))


def test_singular_covariance_names_collinear_covariates(rng):
    base = rng.normal(size=(50, 2))
    rows = np.column_stack([base[:, 0], base[:, 1], 2.0 * base[:, 0]])
    ipd = IpdMatrix.from_rows(rows, ["a", "b", "c"])
    with pytest.raises(SingularCovarianceError) as info:
        hotelling_fixed_ad(ipd, make_ad(ipd, [0.0, 0.0, 0.0]))
    assert info.value.covariates == ["a", "c"]
    assert info.value.condition > 1e12


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=5))
def test_affine_map_keeps_statistic(seed, p):
    rng = np.random.default_rng(seed)
    ipd = gaussian_ipd(rng, 20 + p, p)
    ad = make_ad(ipd, rng.normal(scale=0.5, size=p))
    q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    A = q @ np.diag(rng.uniform(0.5, 2.0, size=p))
    b = rng.uniform(-10, 10, size=p)
    moved = IpdMatrix(A @ ipd.values + b[:, None], ipd.covariate_names)
    before = hotelling_fixed_ad(ipd, ad)
    after = hotelling_fixed_ad(moved, make_ad(moved, A @ ad.values + b))
    assert after.statistic == pytest.approx(before.statistic, rel=1e-8, abs=1e-12)
    assert after.p_value == pytest.approx(before.p_value, rel=1e-6, abs=1e-12)


def test_p_value_falls_as_ad_moves_away(rng):
    ipd = gaussian_ipd(rng, 40, 3)
    direction = rng.normal(size=3)
    results = [hotelling_fixed_ad(ipd, make_ad(ipd, ipd.column_mean + t * direction))
               for t in np.linspace(0.0, 1.5, 16)]
    statistics = [r.statistic for r in results]
    p_values = [r.p_value for r in results]
    assert np.all(np.diff(statistics) > 0)
    assert np.all(np.diff(p_values) <= 0)
    assert p_values[0] == 1.0


def test_f_survival_decreases_in_statistic():
    grid = np.linspace(0.0, 20.0, 201)
    for df1, df2 in ((1, 5), (3, 17), (9, 200)):
        values = [f_sf(x, df1, df2) for x in grid]
        assert np.all(np.diff(values) <= 0)


# Test calibration by simulation
def test_null_p_values_are_uniform():
    rng = np.random.default_rng(21)
    p_values = []
    for _ in range(NULL_REPLICATIONS):
        ipd = gaussian_ipd(rng, 100, 3)
        p_values.append(hotelling_fixed_ad(ipd, make_ad(ipd, np.zeros(3))).p_value)
    assert stats.kstest(p_values, "uniform").statistic < 0.05


def test_small_and_large_offsets():
    rng = np.random.default_rng(22)
    near = far = 0
    for _ in range(PATTERN_REPLICATIONS):
        ipd = gaussian_ipd(rng, 100, 2)
        near += hotelling_fixed_ad(ipd, offset_ad(ipd, 0.1)).p_value > 0.1
        far += hotelling_fixed_ad(ipd, offset_ad(ipd, 1.5)).p_value < 1e-4
    assert near >= 0.95 * PATTERN_REPLICATIONS
    assert far >= 0.95 * PATTERN_REPLICATIONS


# Test the resampling p-value
def test_resampled_close_to_f_reference():
    rng = np.random.default_rng(23)
    ipd = gaussian_ipd(rng, 200, 2)
    ad = offset_ad(ipd, 0.1)
    reference = hotelling_fixed_ad(ipd, ad)
    resampled = hotelling_resampled(ipd, ad, draws=10000, seed=7)
    assert resampled.method == HotellingMethod.RESAMPLING
    assert resampled.statistic == reference.statistic
    assert resampled.p_value == pytest.approx(reference.p_value, abs=0.03)


def test_resampled_is_reproducible(rng):
    ipd = gaussian_ipd(rng, 50, 3)
    ad = make_ad(ipd, [0.1, 0.0, -0.1], n_ad=80)
    first = hotelling_resampled(ipd, ad, HotellingVariant.TWO_SAMPLE, draws=600, seed=3)
    second = hotelling_resampled(ipd, ad, HotellingVariant.TWO_SAMPLE, draws=600, seed=3)
    assert first == second
    assert first.to_dict()["resample_draws"] == 600
    assert 1 / 601 <= first.p_value <= 1.0


def test_resampled_draw_floor(square_ipd):
    with pytest.raises(InvalidArgumentError, match="draws"):
        hotelling_resampled(square_ipd, make_ad(square_ipd, [0.4, 0.5]), draws=99)


# Test mahalanobis_location
def test_mahalanobis_location(rng):
    ipd = gaussian_ipd(rng, 80, 2)
    inside = mahalanobis_location(ipd, make_ad(ipd, ipd.column_mean))
    assert inside.ad_distance == 0.0
    assert not inside.outside_ellipsoid
    outside = mahalanobis_location(ipd, make_ad(ipd, ipd.column_mean + 10.0))
    assert outside.outside_ellipsoid
    assert outside.to_dict()["outside_ellipsoid"] is True
