"""Locate the AD means in the principal-component coordinates of the IPD.

PCA is done on the correlation scale: the IPD is standardized with its own
means and sample sds, and the AD is mapped with the same parameters before
projection. If the AD score on any PC falls outside the range of the IPD
scores, the AD is outside the IPD hull. The converse does not hold, so the
range test can only ever confirm infeasibility.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import linalg

from libs.maic.config import EIGEN_FLOOR, PC_RANGE_MARGIN
from libs.maic.data_model import AdVector, IpdMatrix, StandardizationParams, check_alignment
from libs.maic.plotting import AD_COLOR, IPD_STYLE, OUTSIDE_COLOR, new_figure, save_svg
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()


@dataclass(frozen=True)
class PcaProjection:
    """IPD principal components and the AD location in them.

    Columns of loadings are PCs sorted by decreasing eigenvalue. PC numbers
    in ad_outside and degenerate_pcs are 1-based (PC1 = first column).
    """
    loadings: np.ndarray
    eigenvalues: np.ndarray
    ipd_scores: np.ndarray
    ad_scores: np.ndarray
    per_pc_range: Tuple[Tuple[float, float], ...]
    ad_outside: Tuple[int, ...]
    degenerate_pcs: Tuple[int, ...] = ()
    covariate_names: Tuple[str, ...] = ()
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def p(self) -> int:
        return self.eigenvalues.shape[0]

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariate_names),
            "eigenvalues": self.eigenvalues.tolist(),
            "loadings_row_major": self.loadings.tolist(),
            "ad_scores": self.ad_scores.tolist(),
            "per_pc_range": [list(r) for r in self.per_pc_range],
            "ad_outside": list(self.ad_outside),
            "degenerate_pcs": list(self.degenerate_pcs),
            "warnings": list(self.warnings),
        }


def _orient(vectors: np.ndarray) -> np.ndarray:
    """Make each column's largest-magnitude entry positive (first index on ties)."""
    out = vectors.copy()
    for k in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, k])))
        if out[i, k] < 0:
            out[:, k] = -out[:, k]
    return out


def pca_locate(ipd: IpdMatrix, ad: AdVector) -> PcaProjection:
    """
    Principal components of the standardized IPD with the AD projected onto them.

    Args:
        ipd: the IPD (no constant covariates)
        ad: AD means aligned to the IPD

    Returns:
        PcaProjection with per-PC score ranges and the PCs on which the AD
        falls outside them
    """
    check_alignment(ipd, ad)
    params = StandardizationParams.from_ipd(ipd)
    Zs = params.apply(ipd.values)
    xs = params.apply(ad.values)

    correlation = Zs @ Zs.T / (ipd.n - 1)
    eigenvalues, vectors = linalg.eigh(correlation)
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = np.maximum(eigenvalues[order], 0.0)
    loadings = _orient(vectors[:, order])

    scores = loadings.T @ Zs
    ad_scores = loadings.T @ xs
    ranges = tuple((float(lo), float(hi)) for lo, hi in zip(scores.min(axis=1), scores.max(axis=1)))

    degenerate = tuple(k + 1 for k in range(ipd.p) if eigenvalues[k] < EIGEN_FLOOR)
    outside = tuple(
        k + 1 for k in range(ipd.p)
        if (k + 1) not in degenerate
        and (ad_scores[k] < ranges[k][0] - PC_RANGE_MARGIN or ad_scores[k] > ranges[k][1] + PC_RANGE_MARGIN))

    warnings: List[str] = []
    if ipd.p > ipd.n:
        warnings.append(f"n = {ipd.n} < p = {ipd.p}: PCs beyond rank are numerically zero")
    if degenerate:
        warnings.append("degenerate PCs excluded from the range test: "
                        + ", ".join(f"PC{k}" for k in degenerate))

    projection = PcaProjection(loadings, eigenvalues, scores, ad_scores, ranges, outside,
                               degenerate, ipd.covariate_names, tuple(warnings))
    if outside:
        metrics.log_event("ad_outside_pc_range", {"pcs": list(outside)}, LogLevel.WARN)
    metrics.log_event("pca_located", {"p": ipd.p, "n": ipd.n, "outside": list(outside),
                                      "degenerate": list(degenerate)}, LogLevel.DEBUG)
    return projection


def marginal_range_check(ipd: IpdMatrix, ad: AdVector) -> List[str]:
    """Covariates whose AD mean lies outside the observed IPD range."""
    check_alignment(ipd, ad)
    params = StandardizationParams.from_ipd(ipd, allow_constant=True)
    lo = params.apply(ipd.values.min(axis=1))
    hi = params.apply(ipd.values.max(axis=1))
    x = params.apply(ad.values)
    return [name for name, a, b, v in zip(ipd.covariate_names, lo, hi, x)
            if v < a - PC_RANGE_MARGIN or v > b + PC_RANGE_MARGIN]


def _strip(ax, values, marker_value, outside: bool, gid_prefix: str, k: int, label: str,
           center=None):
    ax.set_gid(f"{gid_prefix}_{k}")
    ax.hlines(0.0, values.min(), values.max(), colors="0.75", linewidth=0.8)
    ax.scatter(values, np.zeros_like(values), s=18, **IPD_STYLE)
    if center is not None:
        ax.scatter([center], [0.0], s=22, color="black", zorder=3)
    ax.axvline(0.0 if center is None else center, linestyle="--", color="0.5", linewidth=0.8)
    ax.scatter([marker_value], [0.0], marker="^", s=60, zorder=4,
               color=OUTSIDE_COLOR if outside else AD_COLOR,
               gid=f"ad_outside_{k}" if outside else f"ad_marker_{k}")
    ax.set_yticks([])
    ax.set_ylabel(label, rotation=0, ha="right", va="center")
    for side in ("left", "right", "top"):
        ax.spines[side].set_visible(False)


def render_pc_dotplot(projection: PcaProjection, out) -> None:
    """
    Write one dot strip per PC: IPD scores as open circles, the AD score as a
    filled triangle, a dashed line at 0. Strips are SVG groups `pc_strip_<k>`;
    an out-of-range AD triangle is `ad_outside_<k>` and drawn in red.
    """
    p = projection.p
    fig = new_figure(7.0, 0.7 * p + 1.0)
    axes = fig.subplots(p, 1, squeeze=False)[:, 0]
    for k in range(p):
        _strip(axes[k], projection.ipd_scores[k], projection.ad_scores[k],
               (k + 1) in projection.ad_outside, "pc_strip", k + 1, f"PC{k + 1}")
    axes[-1].set_xlabel("score (standardized IPD units)")
    fig.suptitle("IPD principal components with AD in PC coordinates")
    fig.tight_layout()
    save_svg(fig, out)


def render_marginal_dotplot(ipd: IpdMatrix, ad: AdVector, out) -> None:
    """One dot strip per raw covariate with the IPD mean and the AD mean marked."""
    check_alignment(ipd, ad)
    outside = set(marginal_range_check(ipd, ad))
    fig = new_figure(7.0, 0.7 * ipd.p + 1.0)
    axes = fig.subplots(ipd.p, 1, squeeze=False)[:, 0]
    for k, name in enumerate(ipd.covariate_names):
        _strip(axes[k], ipd.values[k], ad.values[k], name in outside, "covariate_strip", k + 1,
               name, center=float(ipd.values[k].mean()))
    fig.suptitle("IPD covariates with IPD mean and AD mean")
    fig.tight_layout()
    save_svg(fig, out)
