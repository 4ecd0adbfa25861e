"""Render surface.csv, truth.csv and residuals.csv written by `trek smooth`.

Usage: python docs/plot_surface.py OUT_DIR
"""
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np


def load_surface(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    m = int(rows[:, 0].max()) + 1
    return rows[:, 4].reshape(m, m)


def main(out):
    out = Path(out)
    panels = [("fit", out / "surface.csv"), ("truth", out / "truth.csv")]
    panels = [(name, p) for name, p in panels if p.exists()]
    fig, axes = plt.subplots(1, len(panels) + 1, figsize=(5 * (len(panels) + 1), 4))
    for ax, (name, path) in zip(axes, panels):
        image = ax.imshow(load_surface(path), origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
        ax.set_title(name)
        fig.colorbar(image, ax=ax)

    residuals = np.loadtxt(out / "residuals.csv", delimiter=",", skiprows=1, ndmin=2)
    axes[-1].semilogy(residuals[:, 0], residuals[:, 1])
    axes[-1].set_xlabel("iteration")
    axes[-1].set_ylabel("squared residual norm")
    fig.tight_layout()
    fig.savefig(out / "surface.png", dpi=150)


if __name__ == "__main__":
    main(sys.argv[1])
