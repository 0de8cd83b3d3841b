"""Figure rendering for evaluation outputs.

Each helper takes data already computed elsewhere and writes a PNG next
to the delimited files produced by the CLI. Nothing here feeds back into
training or evaluation, so plots can be regenerated from the CSVs at any
time.
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def render_modes(zeta, mode_sets, path):
    """Plot real parts of dynamic modes for one or more models.

    Parameters
    ----------
    zeta : (n,) array of spatial coordinates.
    mode_sets : dict mapping a label to a (n, k) complex mode matrix.
    path : output PNG path.
    """
    k = max(m.shape[1] for m in mode_sets.values())
    fig, axes = plt.subplots(1, k, figsize=(4 * k, 3), squeeze=False)
    for label, modes in mode_sets.items():
        for j in range(modes.shape[1]):
            axes[0][j].plot(zeta, modes[:, j].real, label=label)
    for j in range(k):
        axes[0][j].set_title(f"mode {j}")
        axes[0][j].set_xlabel("zeta")
        axes[0][j].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_nmse(curves, path):
    """Plot NMSE against prediction step for each (method, seed) curve.

    curves maps "method/seed" labels to 1-d NMSE arrays indexed by step.
    """
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, nmse in curves.items():
        ax.semilogy(np.arange(len(nmse)), nmse, label=label)
    ax.set_xlabel("prediction step")
    ax.set_ylabel("NMSE")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_closed_loop(results, dt, path):
    """Plot MSE traces and cumulative actuation for closed-loop runs.

    results maps labels to objects with mse_trace and actuations fields.
    """
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    for label, res in results.items():
        t = np.arange(len(res.mse_trace)) * dt
        ax0.semilogy(t, res.mse_trace, label=label)
        if len(res.actuations):
            tu = np.arange(len(res.actuations)) * dt
            cum = np.cumsum(np.abs(np.asarray(res.actuations)).reshape(len(res.actuations), -1).sum(axis=1)) * dt
            ax1.plot(tu, cum, label=label)
    ax0.set_xlabel("t")
    ax0.set_ylabel("MSE")
    ax0.legend(fontsize=8)
    ax1.set_xlabel("t")
    ax1.set_ylabel("cumulative |u| dt")
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_state_history(states, dt, path, title=""):
    """Render a space-time heat map of a state history (steps, nodes)."""
    states = np.asarray(states)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    img = ax.imshow(states.T, aspect="auto", origin="lower",
                    extent=[0, states.shape[0] * dt, -1, 1], cmap="RdBu_r")
    fig.colorbar(img, ax=ax)
    ax.set_xlabel("t")
    ax.set_ylabel("zeta")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_log(log, path):
    """Plot train and validation loss curves from a per-epoch log list."""
    epochs = [row["epoch"] for row in log]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(epochs, [row["train_loss"] for row in log], label="train")
    ax.semilogy(epochs, [row["val_loss"] for row in log], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
