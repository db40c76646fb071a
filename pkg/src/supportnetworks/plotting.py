"""
SVG figures from the CSV files the runner writes.

    norm-curves      irrel_norm_L1 against step, one curve per trajectory, log y axis
    gram-heatmap     a Gram matrix CSV as an image
    eigen-histogram  eigenvalue histograms of one or more Gram matrix CSVs
    landscape-2d     toy-model trajectories (chain columns w1_0, w2_0) over the loss contours

Figures have a fixed size, colours are assigned in input order and the SVG is
written without a date and with a fixed hash salt, so the same inputs always
give the same bytes.
"""
import logging
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from palettable.colorbrewer.qualitative import Set1_9, Set3_12
from palettable.colorbrewer.sequential import YlGnBu_9

from .datagen import toyDataset
from .linalg import symEigen
from .oracle import toyLoss

logger = logging.getLogger(__name__)

KINDS = ("norm-curves", "gram-heatmap", "eigen-histogram", "landscape-2d")
FIGSIZE = (6, 4.5)

plt.rcParams["svg.hashsalt"] = "supportnetworks"


def readCsv(path):
    """Return (columns, rows) of a CSV written by the runner."""
    with open(path) as flines:
        header = flines.readline().strip()
    if not header:
        raise IOError("{} has no header line".format(path))
    columns = header.split(",")
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.size and rows.shape[1] != len(columns):
        raise IOError("{} has {} columns in its header but {} in its rows".format(path, len(columns), rows.shape[1]))
    return columns, rows.reshape(-1, len(columns))


def column(path, columns, rows, name):
    """Return one named column, raising IOError naming it when it is missing."""
    if name not in columns:
        raise IOError("{} has no column '{}' (columns: {})".format(path, name, ", ".join(columns)))
    return rows[:, columns.index(name)]


def label(path):
    """Legend label of a CSV: its directory name, or its file name for files in the working directory."""
    directory = os.path.basename(os.path.dirname(os.path.abspath(path)))
    return directory or os.path.splitext(os.path.basename(path))[0]


def _gramMatrix(path):
    columns, rows = readCsv(path)
    if not columns or not columns[0].startswith("c") or rows.shape[0] != rows.shape[1]:
        raise IOError("{} is not a square Gram matrix CSV (columns c0 ... c(h-1))".format(path))
    return rows


def plotNormCurves(paths, ax):
    for index, path in enumerate(paths):
        columns, rows = readCsv(path)
        steps = column(path, columns, rows, "step")
        norms = column(path, columns, rows, "irrel_norm_L1")
        ax.plot(steps, norms, color=Set1_9.mpl_colors[index % 9], label=label(path))
    ax.set_yscale("log", nonpositive="mask")
    ax.set_xlabel("Step")
    ax.set_ylabel("Irrelevant weight norm, layer 1")
    ax.legend()


def plotGramHeatmap(paths, ax):
    if len(paths) != 1:
        raise ValueError("gram-heatmap takes exactly one Gram matrix CSV")
    gram = _gramMatrix(paths[0])
    image = ax.imshow(gram, cmap=YlGnBu_9.mpl_colormap, interpolation="nearest")
    ax.figure.colorbar(image, ax=ax)
    ax.set_title(label(paths[0]))


def plotEigenHistogram(paths, ax, bins=20):
    spectra = [symEigen(_gramMatrix(path)).values for path in paths]
    allValues = np.concatenate(spectra)
    edges = np.histogram_bin_edges(allValues, bins=bins)
    for index, (path, values) in enumerate(zip(paths, spectra)):
        ax.hist(values, bins=edges, alpha=0.7, color=Set3_12.mpl_colors[index % 12],
                edgecolor="black", label=os.path.splitext(os.path.basename(path))[0])
    ax.set_xlabel("Eigenvalue")
    ax.set_ylabel("Count")
    ax.legend()


def plotLandscape(paths, ax, toy="D1"):
    """Contours of the toy loss in the (a, b) plane with each trajectory (a = w2_0, b = w1_0) on top."""
    curves = []
    for path in paths:
        columns, rows = readCsv(path)
        curves.append((path, column(path, columns, rows, "w2_0"), column(path, columns, rows, "w1_0")))
    extent = 1.5
    for _, a, b in curves:
        if a.size:
            extent = max(extent, 1.2 * float(np.max(np.abs(a))), 1.2 * float(np.max(np.abs(b))))
    grid = np.linspace(-extent, extent, 201)
    A, B = np.meshgrid(grid, grid)
    contours = ax.contour(A, B, toyLoss(A, B, toyDataset(toy)), levels=20, cmap=YlGnBu_9.mpl_colormap)
    ax.clabel(contours, inline=True, fontsize=6, fmt="%.2g")
    for index, (path, a, b) in enumerate(curves):
        colour = Set1_9.mpl_colors[index % 9]
        ax.plot(a, b, color=colour, linewidth=0.8, label=label(path))
        if a.size:
            ax.plot(a[-1], b[-1], marker="o", color=colour)
    ax.set_xlabel("a (layer 2)")
    ax.set_ylabel("b (layer 1)")
    ax.set_aspect("equal")
    ax.legend()


def plot(paths, kind, out, toy="D1", bins=20):
    """Draw `kind` from the CSV files in paths and write it as an SVG to out."""
    if kind not in KINDS:
        raise ValueError("unknown plot kind {!r}; choose from {}".format(kind, ", ".join(KINDS)))
    if not paths:
        raise ValueError("no CSV files given")
    fig, ax = plt.subplots(figsize=FIGSIZE)
    try:
        if kind == "norm-curves":
            plotNormCurves(paths, ax)
        elif kind == "gram-heatmap":
            plotGramHeatmap(paths, ax)
        elif kind == "eigen-histogram":
            plotEigenHistogram(paths, ax, bins=bins)
        else:
            plotLandscape(paths, ax, toy=toy)
        plt.tight_layout()
        plt.savefig(out, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.info("%s written to %s", kind, out)
    return out
