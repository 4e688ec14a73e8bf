"""Core matrix/vector types, file ingestion, standardization and covariate
augmentation shared by the other maic modules.

The IPD is held column-per-patient: ``values[j, i]`` is covariate ``j`` of
patient ``i``. Sample standard deviations use the n - 1 denominator
throughout, matching the sqrt(n / (n - 1)) factor of the variance columns.
"""

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from libs.maic.errors import (
    AlignmentError,
    ConstantCovariateError,
    DataFormatError,
    DimensionError,
    InvalidArgumentError,
)
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()

N_AD_KEY = "n_ad"
VARIANCE_SUFFIX = "__var"


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class IpdMatrix:
    """p x n matrix of baseline covariates, one column per patient."""
    values: np.ndarray
    covariate_names: Tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"IPD values must be a p x n matrix, got shape {values.shape}")
        p, n = values.shape
        if n < 1 or p < 1:
            raise DimensionError(f"IPD needs at least one patient and one covariate, got p={p}, n={n}")
        if not np.all(np.isfinite(values)):
            raise DataFormatError("IPD contains non-finite values")
        names = tuple(str(name) for name in self.covariate_names)
        if len(names) != p:
            raise DimensionError(f"{len(names)} covariate names for {p} covariates")
        if len(set(names)) != p:
            raise DataFormatError(f"duplicate covariate names: {', '.join(_duplicates(names))}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_rows(cls, rows, covariate_names: Optional[Sequence[str]] = None) -> "IpdMatrix":
        """Build from a patient-per-row array (n x p), the layout of the input files."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        names = covariate_names or [f"y{j + 1}" for j in range(rows.shape[1])]
        return cls(rows.T, tuple(names))

    @property
    def p(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def column_mean(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def covariance(self) -> np.ndarray:
        """Sample covariance (denominator n - 1), p x p."""
        return np.atleast_2d(np.cov(self.values, ddof=1))

    def row(self, name: str) -> np.ndarray:
        return self.values[self.covariate_names.index(name)]


@dataclass(frozen=True)
class AdVector:
    """Published aggregate means, aligned by name to an IPD."""
    values: np.ndarray
    covariate_names: Tuple[str, ...]
    n_ad: Optional[int] = None

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if values.ndim != 1:
            raise DimensionError(f"AD values must be a vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataFormatError("AD contains non-finite values")
        names = tuple(str(name) for name in self.covariate_names)
        if len(names) != values.shape[0]:
            raise DimensionError(f"{len(names)} AD names for {values.shape[0]} values")
        if len(set(names)) != len(names):
            raise DataFormatError(f"duplicate AD names: {', '.join(_duplicates(names))}")
        if self.n_ad is not None and (int(self.n_ad) != self.n_ad or self.n_ad < 1):
            raise InvalidArgumentError(f"n_ad must be a positive integer, got {self.n_ad}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "covariate_names", names)
        if self.n_ad is not None:
            object.__setattr__(self, "n_ad", int(self.n_ad))

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class OutcomeVector:
    """Per-patient outcomes r_i, in IPD patient order."""
    values: np.ndarray
    label: str = "outcome"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise DimensionError(f"outcomes must be a vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataFormatError("outcomes contain non-finite values")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class StandardizationParams:
    """IPD-derived centring and scaling."""
    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "sds", _frozen(self.sds))
        if np.any(self.sds <= 0):
            raise InvalidArgumentError("standard deviations must be strictly positive")

    @classmethod
    def from_ipd(cls, ipd: IpdMatrix, allow_constant: bool = False) -> "StandardizationParams":
        """Means and n - 1 sample sds of the IPD rows.

        With allow_constant, zero (or undefined, n = 1) sds are replaced by 1
        so degenerate data can still be mapped to a common scale.
        """
        means = ipd.column_mean
        if ipd.n > 1:
            sds = ipd.values.std(axis=1, ddof=1)
        else:
            sds = np.zeros(ipd.p)
        constant = ~(sds > 0)
        if np.any(constant):
            if not allow_constant:
                raise ConstantCovariateError(
                    [name for name, flag in zip(ipd.covariate_names, constant) if flag])
            sds = np.where(constant, 1.0, sds)
        return cls(means, sds)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Standardize a p-vector or a p x n matrix."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            return (values - self.means) / self.sds
        return (values - self.means[:, None]) / self.sds[:, None]

    def invert(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            return values * self.sds + self.means
        return values * self.sds[:, None] + self.means[:, None]


def _duplicates(names: Iterable[str]) -> List[str]:
    seen, dupes = set(), []
    for name in names:
        if name in seen and name not in dupes:
            dupes.append(name)
        seen.add(name)
    return dupes


def check_alignment(ipd: IpdMatrix, ad: AdVector) -> None:
    """Raise unless ad matches ipd covariate-for-covariate, in order."""
    if ad.p != ipd.p:
        raise DimensionError(f"AD has {ad.p} entries but IPD has {ipd.p} covariates")
    if ad.covariate_names != ipd.covariate_names:
        raise AlignmentError(
            [name for name in ad.covariate_names if name not in ipd.covariate_names],
            [name for name in ipd.covariate_names if name not in ad.covariate_names])


def _read_cells(path, delimiter: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, sep=delimiter, header=None, dtype=str,
                            keep_default_na=False, encoding="utf-8",
                            skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise DataFormatError("file is empty", path=str(path))
    except pd.errors.ParserError as e:
        raise DataFormatError(f"cannot parse delimited text: {e}", path=str(path))
    except UnicodeDecodeError as e:
        raise DataFormatError(f"file is not valid UTF-8: {e}", path=str(path))
    if frame.empty:
        raise DataFormatError("file is empty", path=str(path))
    return frame


def _parse_number(cell, path, row: int, column: str) -> float:
    if cell is None or (isinstance(cell, float) and np.isnan(cell)):
        raise DataFormatError("missing value", path=str(path), row=row, column=column)
    text = str(cell).strip()
    if text == "":
        raise DataFormatError("missing value", path=str(path), row=row, column=column)
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"non-numeric value '{text}'", path=str(path), row=row, column=column)
    if not np.isfinite(value):
        raise DataFormatError(f"non-finite value '{text}'", path=str(path), row=row, column=column)
    return value


def _parse_table(path, delimiter: str) -> Tuple[List[str], np.ndarray]:
    """Header names and an n x p float array; rows are numbered from 1 after the header."""
    frame = _read_cells(path, delimiter)
    header = [str(name).strip() for name in frame.iloc[0].tolist()]
    if any(name == "" for name in header):
        raise DataFormatError("header contains an empty covariate name", path=str(path), row=0)
    dupes = _duplicates(header)
    if dupes:
        raise DataFormatError(f"duplicate covariate name(s) in header: {', '.join(dupes)}",
                              path=str(path), row=0)
    body = frame.iloc[1:]
    if body.empty:
        raise DataFormatError("file has a header but no data rows", path=str(path))
    rows = np.empty((len(body), len(header)))
    for i, record in enumerate(body.itertuples(index=False, name=None), start=1):
        for j, cell in enumerate(record):
            rows[i - 1, j] = _parse_number(cell, path, i, header[j])
    return header, rows


def load_ipd(path, delimiter: str = ",") -> IpdMatrix:
    """
    Load an IPD table: header row of covariate names, one data row per patient.

    Args:
        path: delimited UTF-8 text file
        delimiter: field separator

    Returns:
        IpdMatrix: values transposed into the column-per-patient layout
    """
    header, rows = _parse_table(path, delimiter)
    ipd = IpdMatrix(rows.T, tuple(header))
    metrics.log_event("ipd_loaded", {"path": str(path), "n": ipd.n, "p": ipd.p},
                      LogLevel.DEBUG)
    return ipd


def load_ad(path, ipd: IpdMatrix, delimiter: str = ",") -> AdVector:
    """
    Load an AD file of `name,value` pairs and align it by name to an IPD.

    The reserved name `n_ad` carries the AD sample size. An optional
    `name,value` header line is skipped.

    Args:
        path: delimited UTF-8 text file
        ipd: the IPD the means are matched against
        delimiter: field separator

    Returns:
        AdVector: values reordered to the IPD covariate order
    """
    frame = _read_cells(path, delimiter)
    if frame.shape[1] != 2:
        raise DataFormatError(f"AD file must have two columns (name, value), found {frame.shape[1]}",
                              path=str(path))
    records = [(str(name).strip(), value) for name, value in frame.itertuples(index=False, name=None)]
    if records and records[0][0].lower() == "name" and str(records[0][1]).strip().lower() == "value":
        records = records[1:]
    if not records:
        raise DataFormatError("AD file has no entries", path=str(path))

    means = {}
    n_ad = None
    for row, (name, cell) in enumerate(records, start=1):
        if name == "":
            raise DataFormatError("empty covariate name", path=str(path), row=row)
        value = _parse_number(cell, path, row, name)
        if name == N_AD_KEY:
            if value < 1 or int(value) != value:
                raise DataFormatError(f"n_ad must be a positive integer, got {value}",
                                      path=str(path), row=row, column=name)
            n_ad = int(value)
            continue
        if name in means:
            raise DataFormatError(f"duplicate AD entry '{name}'", path=str(path), row=row)
        means[name] = value

    missing_in_ipd = [name for name in means if name not in ipd.covariate_names]
    missing_in_ad = [name for name in ipd.covariate_names if name not in means]
    if missing_in_ipd or missing_in_ad:
        raise AlignmentError(missing_in_ipd, missing_in_ad)

    ad = AdVector(np.array([means[name] for name in ipd.covariate_names]),
                  ipd.covariate_names, n_ad)
    metrics.log_event("ad_loaded", {"path": str(path), "p": ad.p, "n_ad": n_ad}, LogLevel.DEBUG)
    return ad


def load_outcome(path, ipd: IpdMatrix, delimiter: str = ",") -> OutcomeVector:
    """Load a single-column outcome file (header = label) in IPD patient order."""
    header, rows = _parse_table(path, delimiter)
    if len(header) != 1:
        raise DataFormatError(f"outcome file must have one column, found {len(header)}",
                              path=str(path))
    if rows.shape[0] != ipd.n:
        raise DimensionError(f"outcome file has {rows.shape[0]} rows but IPD has {ipd.n} patients")
    return OutcomeVector(rows[:, 0], header[0])


def save_ipd(ipd: IpdMatrix, path, delimiter: str = ",") -> None:
    """Write an IPD back to delimited text, one row per patient, exact float round trip."""
    frame = pd.DataFrame(ipd.values.T, columns=list(ipd.covariate_names))
    frame.to_csv(path, sep=delimiter, index=False, float_format="%.17g", encoding="utf-8")


def parse_variance_targets(items: Iterable[str]) -> List[Tuple[str, float]]:
    """Parse `name=value` strings (the --variance flag) into targets."""
    targets = []
    for item in items:
        name, sep, value = str(item).partition("=")
        if not sep or not name.strip():
            raise InvalidArgumentError(f"variance target must look like name=value, got '{item}'")
        try:
            targets.append((name.strip(), float(value)))
        except ValueError:
            raise InvalidArgumentError(f"variance for '{name.strip()}' is not a number: '{value}'")
    return targets


def augment_variance_columns(ipd: IpdMatrix, ad: AdVector,
                             targets: Sequence[Tuple[str, float]]) -> Tuple[IpdMatrix, AdVector]:
    """
    Append squared-residual rows so published variances are matched as moments.

    For each (covariate, ad_variance) the IPD gets a row
    (sqrt(n / (n - 1)) * (y_ij - ybar_j))^2 named `<covariate>__var`, and
    the AD gets the variance, passed through untouched.

    Args:
        ipd: the IPD
        ad: the aligned AD means
        targets: (covariate name, AD variance) pairs

    Returns:
        (IpdMatrix, AdVector): augmented copies; the original rows are unchanged
    """
    check_alignment(ipd, ad)
    if not targets:
        return ipd, ad
    if ipd.n < 2:
        raise InvalidArgumentError("variance columns need at least two patients")

    rows, names, values = [], [], []
    for name, variance in targets:
        if name not in ipd.covariate_names:
            raise InvalidArgumentError(f"unknown covariate '{name}' in variance targets")
        variance = float(variance)
        if not np.isfinite(variance) or variance <= 0:
            raise InvalidArgumentError(f"AD variance for '{name}' must be positive, got {variance}")
        new_name = name + VARIANCE_SUFFIX
        if new_name in ipd.covariate_names or new_name in names:
            raise InvalidArgumentError(f"variance column '{new_name}' already present")
        y = ipd.row(name)
        rows.append(ipd.n / (ipd.n - 1) * (y - y.mean()) ** 2)
        names.append(new_name)
        values.append(variance)

    augmented = IpdMatrix(np.vstack([ipd.values, np.array(rows)]), ipd.covariate_names + tuple(names))
    augmented_ad = AdVector(np.concatenate([ad.values, values]), augmented.covariate_names, ad.n_ad)
    metrics.log_event("variance_columns_added", {"covariates": names}, LogLevel.DEBUG)
    return augmented, augmented_ad


def standardize(ipd: IpdMatrix, ad: AdVector) -> Tuple[IpdMatrix, AdVector, StandardizationParams]:
    """
    Standardize IPD rows to mean 0, sample sd 1 and map the AD with the same parameters.

    Raises:
        ConstantCovariateError: a covariate has zero sample sd
    """
    check_alignment(ipd, ad)
    params = StandardizationParams.from_ipd(ipd)
    return (IpdMatrix(params.apply(ipd.values), ipd.covariate_names),
            AdVector(params.apply(ad.values), ad.covariate_names, ad.n_ad),
            params)


def destandardize(data: Union[IpdMatrix, AdVector],
                  params: StandardizationParams) -> Union[IpdMatrix, AdVector]:
    """Undo `standardize` for either an IPD or an AD."""
    if isinstance(data, IpdMatrix):
        return IpdMatrix(params.invert(data.values), data.covariate_names)
    return AdVector(params.invert(data.values), data.covariate_names, data.n_ad)
