import logging
import os

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

from affine_dpm.clustering import as_partition, block_sizes


def psm_heatmap(similarity, partition=None, title="Posterior similarity matrix"):
    """
    Plots the posterior similarity matrix as a heatmap

    Parameters
    ----------
    similarity : np.ndarray of shape (n, n)
      The posterior similarity matrix
    partition : Partition, optional
      If given, rows and columns are grouped by block, largest block first.
    title : str, default="Posterior similarity matrix"
      The title of the graph
    """
    order = np.arange(similarity.shape[0])
    if partition is not None:
        labels = as_partition(partition).labels
        rank = np.argsort(np.argsort(-block_sizes(labels), kind="stable"))
        order = np.lexsort((order, rank[labels]))
    plt.figure(figsize=(8, 7))
    sns.heatmap(
        similarity[np.ix_(order, order)],
        vmin=0,
        vmax=1,
        cmap="viridis",
        xticklabels=False,
        yticklabels=False,
    )
    plt.title(title)


def trace_plots(traces, title="Trace plots"):
    """
    Plots the number of clusters, alpha and (when present) the log-likelihood against the iteration

    Parameters
    ----------
    traces : pd.DataFrame
      The output of `affine_dpm.sampler.traces`
    title : str, default="Trace plots"
      The title of the figure
    """
    columns = [c for c in ("n_clusters", "alpha", "log_likelihood") if c in traces.columns]
    fig, axes = plt.subplots(len(columns), 1, figsize=(10, 2.5 * len(columns)), sharex=True)
    axes = np.atleast_1d(axes)
    for ax, column in zip(axes, columns):
        ax.plot(traces["iteration"], traces[column], color="#377eb8", linewidth=0.6)
        ax.set_ylabel(column)
    axes[-1].set_xlabel("iteration")
    axes[0].set_title(title)
    fig.tight_layout()


def distance_heatmaps(matrices, title="Normalised L1 distances"):
    """
    Plots one heatmap of rescaled-fit distances per sample size

    Parameters
    ----------
    matrices : dict of {int: pd.DataFrame}
      Square distance tables indexed by rescaling constant, as returned by `affine_dpm.experiment.distance_matrices`
    title : str, default="Normalised L1 distances"
      The title of the figure
    """
    fig, axes = plt.subplots(1, len(matrices), figsize=(5 * len(matrices), 4.5))
    axes = np.atleast_1d(axes)
    for ax, (n, matrix) in zip(axes, sorted(matrices.items())):
        labels = [f"{c:g}" for c in matrix.index]
        sns.heatmap(
            matrix.to_numpy(),
            vmin=0,
            vmax=1,
            cmap="Greys",
            annot=True,
            fmt=".2f",
            xticklabels=labels,
            yticklabels=labels,
            ax=ax,
        )
        ax.set_title(f"n = {n}")
        ax.set_xlabel("c")
        ax.set_ylabel("c")
    fig.suptitle(title)


def density_contour(estimate, data=None, partition=None, title="Posterior predictive density"):
    """
    Contour plot of a two-dimensional density estimate, with the data on top

    Parameters
    ----------
    estimate : DensityEstimate
      A two-dimensional estimate
    data : np.ndarray of shape (n, 2), optional
      Observations to scatter over the contours
    partition : Partition, optional
      Colours the observations by block
    title : str, default="Posterior predictive density"
      The title of the graph
    """
    if estimate.grid.dim != 2:
        raise ValueError(f"contour plots need a 2-d grid, got dimension {estimate.grid.dim}")
    xs, ys = estimate.grid.coords
    plt.figure(figsize=(7, 6))
    plt.contour(xs, ys, estimate.values.T, levels=12, cmap="Blues")
    if data is not None:
        hue = None if partition is None else as_partition(partition).labels.astype(str)
        df = pd.DataFrame({"x": data[:, 0], "y": data[:, 1]})
        sns.scatterplot(data=df, x="x", y="y", hue=hue, s=12, palette="Set1", legend=hue is not None)
    plt.title(title)


def save_stored_plots(directory="."):
    """
    Saves every open figure as `<title>.png` in `directory`
    """
    os.makedirs(directory, exist_ok=True)
    for num in plt.get_fignums():
        fig = plt.figure(num)
        suptitle = getattr(fig, "_suptitle", None)
        if suptitle is not None:
            title = suptitle.get_text()
        else:
            title = fig.axes[0].get_title() if fig.axes else ""
        path = os.path.join(directory, f"{title or num}.png")
        fig.savefig(path)
        logging.info(f"Saved figure {path}")
