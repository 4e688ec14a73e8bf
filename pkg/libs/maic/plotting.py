"""Offline SVG output through matplotlib.

Figures are built on `matplotlib.figure.Figure` directly (no pyplot state)
and saved with a fixed hash salt and no date stamp, so identical inputs give
identical files.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib import rcParams  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from libs.maic.errors import PlotError  # noqa: E402

rcParams["svg.hashsalt"] = "maicfeas"
rcParams["svg.fonttype"] = "none"

IPD_STYLE = {"facecolors": "none", "edgecolors": "0.35", "linewidths": 0.8}
AD_COLOR = "black"
OUTSIDE_COLOR = "crimson"


def new_figure(width: float, height: float) -> Figure:
    return Figure(figsize=(width, height))


def save_svg(fig: Figure, out) -> Path:
    """Write fig as SVG; unwritable paths raise PlotError."""
    path = Path(out)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise PlotError(f"cannot write plot to {path}: {e}")
    return path
