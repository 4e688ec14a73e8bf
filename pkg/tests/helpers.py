"""Data builders shared by the test modules."""

import os

import numpy as np

from libs.maic.data_model import AdVector, IpdMatrix

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

SQUARE_ROWS = [
    [0.0, 0.0],
    [1.0, 0.0],
    [0.0, 1.0],
    [1.0, 1.0],
    [0.5, 0.5],
    [0.25, 0.75],
    [0.8, 0.3],
    [0.4, 0.1],
]


def fixture(name: str) -> str:
    return os.path.join(FIXTURES, name)


def make_ad(ipd: IpdMatrix, values, n_ad=None) -> AdVector:
    return AdVector(np.asarray(values, dtype=float), ipd.covariate_names, n_ad)


def gaussian_ipd(rng, n: int, p: int, cov=None, mean=None) -> IpdMatrix:
    mean = np.zeros(p) if mean is None else np.asarray(mean, dtype=float)
    cov = np.eye(p) if cov is None else np.asarray(cov, dtype=float)
    return IpdMatrix.from_rows(rng.multivariate_normal(mean, cov, size=n))


def interior_instance(rng, n: int, p: int, shrink: float = 0.3):
    """Gaussian IPD with an AD drawn as a strictly positive convex combination pulled toward the mean."""
    ipd = gaussian_ipd(rng, n, p)
    w = rng.dirichlet(np.ones(n))
    point = ipd.values @ w
    ad = make_ad(ipd, ipd.column_mean + shrink * (point - ipd.column_mean))
    return ipd, ad
