"""Hotelling's T^2 tests of whether the IPD mean could equal the AD means.

T^2 = n (ybar - xbar)' S^-1 (ybar - xbar) treats the AD as fixed; the
two-sample form replaces n by n * n_AD / (n + n_AD). Both are referred to
F(p, n - p) after scaling by (n - p) / (p n - p), with S estimated from the
IPD only (denominator n - 1). A shift-to-null bootstrap gives a
distribution-free alternative p-value.

The result is an indication of how close IPD and AD are, never a decision.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy import linalg, special

from libs.maic.config import MAX_CONDITION
from libs.maic.data_model import AdVector, IpdMatrix, check_alignment
from libs.maic.errors import InvalidArgumentError, SingularCovarianceError
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()

MIN_DRAWS = 100
RESAMPLE_CHUNK = 500
COLLINEAR_SHARE = 0.5


class HotellingVariant(Enum):
    FIXED_AD = "FixedAd"
    TWO_SAMPLE = "TwoSample"


class HotellingMethod(Enum):
    F_DISTRIBUTION = "FDistribution"
    RESAMPLING = "Resampling"


@dataclass(frozen=True)
class HotellingResult:
    statistic: float
    variant: HotellingVariant
    f_statistic: float
    df1: int
    df2: int
    p_value: float
    method: HotellingMethod
    resample_draws: Optional[int] = None
    seed: Optional[int] = None

    def interpretation(self, alpha: float = 0.05) -> str:
        if self.p_value >= alpha:
            return (f"p = {self.p_value:.4g} >= {alpha}: IPD and AD means are compatible; "
                    "matching may not be necessary and pooling may be acceptable")
        return (f"p = {self.p_value:.4g} < {alpha}: IPD and AD means differ; "
                "matching of baseline covariates is indicated")

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "variant": self.variant.value,
            "f_statistic": self.f_statistic,
            "df1": self.df1,
            "df2": self.df2,
            "p_value": self.p_value,
            "method": self.method.value,
            "resample_draws": self.resample_draws,
            "seed": self.seed,
            "interpretation": self.interpretation(),
        }


@dataclass(frozen=True)
class MahalanobisLocation:
    """Where the AD sits relative to the ellipsoid through the farthest IPD point."""
    ad_distance: float
    max_ipd_distance: float

    @property
    def outside_ellipsoid(self) -> bool:
        return self.ad_distance > self.max_ipd_distance

    def to_dict(self) -> dict:
        return {"ad_distance": self.ad_distance, "max_ipd_distance": self.max_ipd_distance,
                "outside_ellipsoid": self.outside_ellipsoid}


def f_cdf(f: float, df1: float, df2: float) -> float:
    """CDF of F(df1, df2) through the regularized incomplete beta function."""
    if f <= 0:
        return 0.0
    return float(special.betainc(df1 / 2.0, df2 / 2.0, df1 * f / (df1 * f + df2)))


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail of F(df1, df2), computed directly for accuracy at small p-values."""
    if f <= 0:
        return 1.0
    return float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f)))


def f_scale(n: int, p: int) -> float:
    """(n - p) / (p n - p)."""
    return (n - p) / (p * n - p)


def checked_covariance(ipd: IpdMatrix) -> np.ndarray:
    if ipd.n <= ipd.p:
        raise InvalidArgumentError(f"Hotelling's T^2 needs n > p, got n = {ipd.n}, p = {ipd.p}")
    cov = ipd.covariance()
    eigenvalues, vectors = linalg.eigh(cov)
    largest = eigenvalues[-1]
    smallest = eigenvalues[0]
    condition = np.inf if smallest <= 0 else largest / smallest
    if not condition <= MAX_CONDITION:
        v = np.abs(vectors[:, 0])
        names = [name for name, weight in zip(ipd.covariate_names, v)
                 if weight >= COLLINEAR_SHARE * v.max()]
        metrics.log_event("singular_covariance", {"condition": float(condition),
                                                  "covariates": names}, LogLevel.WARN)
        raise SingularCovarianceError(names, float(condition))
    return cov


def _quadratic_form(cov: np.ndarray, diff: np.ndarray) -> float:
    return float(diff @ linalg.solve(cov, diff, assume_a="pos"))


def _factor(variant: HotellingVariant, n: int, n_ad: Optional[int]) -> float:
    if variant == HotellingVariant.FIXED_AD:
        return float(n)
    if n_ad is None:
        raise InvalidArgumentError("the two-sample variant needs the AD sample size n_ad")
    return n * n_ad / (n + n_ad)


def _result(statistic: float, variant: HotellingVariant, n: int, p: int,
            method: HotellingMethod = HotellingMethod.F_DISTRIBUTION,
            p_value: Optional[float] = None, draws: Optional[int] = None,
            seed: Optional[int] = None) -> HotellingResult:
    f_stat = statistic * f_scale(n, p)
    if p_value is None:
        p_value = f_sf(f_stat, p, n - p)
    return HotellingResult(statistic, variant, f_stat, p, n - p,
                           float(min(max(p_value, 0.0), 1.0)), method, draws, seed)


def _statistic(ipd: IpdMatrix, ad: AdVector, variant: HotellingVariant) -> float:
    check_alignment(ipd, ad)
    factor = _factor(variant, ipd.n, ad.n_ad)
    cov = checked_covariance(ipd)
    return factor * _quadratic_form(cov, ipd.column_mean - ad.values)


def hotelling_fixed_ad(ipd: IpdMatrix, ad: AdVector) -> HotellingResult:
    """
    One-sample T^2 with the AD means treated as fixed.

    Raises:
        InvalidArgumentError: n <= p
        SingularCovarianceError: IPD covariance condition estimate above 1e12
    """
    statistic = _statistic(ipd, ad, HotellingVariant.FIXED_AD)
    result = _result(statistic, HotellingVariant.FIXED_AD, ipd.n, ipd.p)
    metrics.log_event("hotelling_computed", result.to_dict(), LogLevel.DEBUG)
    return result


def hotelling_two_sample(ipd: IpdMatrix, ad: AdVector) -> HotellingResult:
    """T^2_AD = n n_AD / (n + n_AD) * quadratic form; same F(p, n - p) reference."""
    statistic = _statistic(ipd, ad, HotellingVariant.TWO_SAMPLE)
    result = _result(statistic, HotellingVariant.TWO_SAMPLE, ipd.n, ipd.p)
    metrics.log_event("hotelling_computed", result.to_dict(), LogLevel.DEBUG)
    return result


def _bootstrap_statistics(shifted: np.ndarray, target: np.ndarray, factor: float,
                          draws: int, rng: np.random.Generator) -> np.ndarray:
    """T^2 of `draws` bootstrap resamples of the patient rows of shifted (n x p)."""
    n = shifted.shape[0]
    out = np.empty(draws)
    done = 0
    while done < draws:
        size = min(RESAMPLE_CHUNK, draws - done)
        idx = rng.integers(0, n, size=(size, n))
        samples = shifted[idx]
        means = samples.mean(axis=1)
        centered = samples - means[:, None, :]
        covs = np.einsum("bij,bik->bjk", centered, centered) / (n - 1)
        diff = means - target
        solved = np.einsum("bjk,bk->bj", np.linalg.pinv(covs, hermitian=True), diff)
        out[done:done + size] = factor * np.einsum("bj,bj->b", diff, solved)
        done += size
    return out


def hotelling_resampled(ipd: IpdMatrix, ad: AdVector,
                        variant: HotellingVariant = HotellingVariant.FIXED_AD,
                        draws: int = 10000, seed: int = 0) -> HotellingResult:
    """
    Bootstrap p-value for T^2 (or T^2_AD) under H0: mean = xbar.

    The IPD is shifted so its mean equals xbar, resampled with replacement
    draws times, and the statistic recomputed against xbar. The p-value is
    (1 + #{resampled >= observed}) / (draws + 1); runs are reproducible for a
    given seed.
    """
    if int(draws) != draws or draws < MIN_DRAWS:
        raise InvalidArgumentError(f"draws must be an integer >= {MIN_DRAWS}, got {draws}")
    draws = int(draws)
    observed = _statistic(ipd, ad, variant)
    factor = _factor(variant, ipd.n, ad.n_ad)

    shifted = (ipd.values + (ad.values - ipd.column_mean)[:, None]).T
    rng = np.random.default_rng(seed)
    resampled = _bootstrap_statistics(shifted, np.asarray(ad.values), factor, draws, rng)
    exceed = int(np.count_nonzero(resampled >= observed))
    p_value = (1 + exceed) / (draws + 1)

    result = _result(observed, variant, ipd.n, ipd.p, HotellingMethod.RESAMPLING,
                     p_value, draws, seed)
    metrics.log_event("hotelling_resampled", {"draws": draws, "seed": seed,
                                              "exceed": exceed, "p_value": p_value},
                      LogLevel.DEBUG)
    return result


def mahalanobis_location(ipd: IpdMatrix, ad: AdVector) -> MahalanobisLocation:
    """
    Mahalanobis distance of xbar from ybar next to the largest IPD distance.

    AD beyond every IPD point lies outside the ellipsoid approximation of the
    hull. The approximation assumes elliptical data, so this is information,
    not a feasibility test.
    """
    check_alignment(ipd, ad)
    cov = checked_covariance(ipd)
    centered = ipd.values - ipd.column_mean[:, None]
    solved = linalg.solve(cov, centered, assume_a="pos")
    ipd_distances = np.sqrt(np.maximum(np.einsum("ji,ji->i", centered, solved), 0.0))
    ad_distance = np.sqrt(max(_quadratic_form(cov, ad.values - ipd.column_mean), 0.0))
    return MahalanobisLocation(float(ad_distance), float(ipd_distances.max()))
