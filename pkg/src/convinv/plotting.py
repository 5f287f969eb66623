"""Figures written next to the delimited reports."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_convergence(report, path, title=None):
    """Objective, residuals and penalty trajectories of one run."""
    its = np.arange(1, report.iterations + 1)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    if report.iterations:
        axes[0].semilogy(its, np.abs(report.objective), color="k")
        axes[1].semilogy(its, np.maximum(report.primal_residual, 1e-300),
                         label="primal r")
        axes[1].semilogy(its, np.maximum(report.dual_residual, 1e-300),
                         label="dual s")
        axes[1].legend(frameon=False, fontsize=8)
        axes[2].semilogy(its, report.rho, drawstyle="steps-post")
    axes[0].set_title("objective")
    axes[1].set_title("residuals")
    axes[2].set_title("rho")
    for ax in axes:
        ax.set_xlabel("iteration")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_slices(stacks, path, cmap="gray"):
    """Grid of images: one row per named stack, one column per slice.

    ``stacks`` maps row labels to ``(S, N, N)`` arrays.  Each row is
    scaled to its own range; the adjoint of the blur is not on the same
    scale as the images.
    """
    names = list(stacks)
    arrays = [np.asarray(stacks[k]) for k in names]
    n_rows = len(arrays)
    n_cols = max(a.shape[0] for a in arrays)
    fig, axes = plt.subplots(n_rows, n_cols, squeeze=False,
                             figsize=(2.2 * n_cols, 2.2 * n_rows))
    for r, (name, a) in enumerate(zip(names, arrays)):
        lo, hi = a.min(), a.max()
        for c in range(n_cols):
            ax = axes[r][c]
            ax.set_xticks([])
            ax.set_yticks([])
            if c < a.shape[0]:
                ax.imshow(a[c], cmap=cmap, vmin=lo, vmax=hi)
            else:
                ax.axis("off")
            if c == 0:
                ax.set_ylabel(name)
            if r == 0:
                ax.set_title("slice %d" % c, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
