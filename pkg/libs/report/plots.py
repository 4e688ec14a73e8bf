"""Weight scatter for two-covariate IPD."""

import numpy as np
from matplotlib.figure import Figure

from libs.maic.data_model import AdVector, IpdMatrix, check_alignment
from libs.maic.errors import DimensionError
from libs.maic.maic_fit import MaicFit
from libs.maic.plotting import AD_COLOR, IPD_STYLE, new_figure, save_svg

TOP_LABELS = 5
# marker area (points^2) of a patient with weight 1, the mean rescaled weight
BASE_AREA = 30.0


def weight_ranks(weights: np.ndarray, top: int = TOP_LABELS) -> np.ndarray:
    """Indices of the largest weights, largest first; ties keep patient order."""
    return np.argsort(-np.asarray(weights), kind="stable")[:top]


def scatter_figure(ipd: IpdMatrix, ad: AdVector, fit: MaicFit) -> Figure:
    """
    Build the scatter of the two covariates with circle area proportional to weight.

    The top five weights are labelled 1 to 5 by rank (text ids
    `weight_rank_<r>`). The AD is a filled triangle and the IPD mean a dot.

    Raises:
        DimensionError: the IPD does not have exactly two covariates
    """
    check_alignment(ipd, ad)
    if ipd.p != 2:
        raise DimensionError(
            f"the weight scatter needs exactly 2 covariates, got {ipd.p}; "
            "use the PC dot plot (`maicfeas pca`) for higher dimensions")
    if fit.n != ipd.n:
        raise DimensionError(f"fit has {fit.n} weights but IPD has {ipd.n} patients")

    x, y = ipd.values
    weights = fit.weights * (ipd.n / fit.weights.sum())
    fig = new_figure(6.0, 6.0)
    ax = fig.add_subplot(1, 1, 1)
    ax.scatter(x, y, s=BASE_AREA * weights, gid="ipd_weights", **IPD_STYLE)

    mean = ipd.column_mean
    ax.scatter([mean[0]], [mean[1]], s=30, color="0.2", zorder=3, gid="ipd_mean", label="IPD mean")
    ax.scatter([ad.values[0]], [ad.values[1]], marker="^", s=90, color=AD_COLOR, zorder=4,
               gid="ad_marker", label="AD")

    for rank, i in enumerate(weight_ranks(weights), start=1):
        ax.annotate(str(rank), (x[i], y[i]), textcoords="offset points", xytext=(5, 5),
                    fontsize=9, gid=f"weight_rank_{rank}")

    ax.set_xlabel(ipd.covariate_names[0])
    ax.set_ylabel(ipd.covariate_names[1])
    ax.set_title(f"MAIC weights (ESS {fit.ess:.1f} of {ipd.n})")
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()
    return fig


def render_scatter_with_weights(ipd: IpdMatrix, ad: AdVector, fit: MaicFit, out) -> None:
    save_svg(scatter_figure(ipd, ad, fit), out)
