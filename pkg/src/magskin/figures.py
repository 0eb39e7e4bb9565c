"""PNG figures written next to the delimited outputs. Rendering is headless and byte-deterministic."""
from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .characterize import ConsistencyReport  # noqa: E402

# Drop the Software tag, which embeds the matplotlib version.
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)


def consistency_figure(report: ConsistencyReport, path) -> None:
    """Grouped bars of cross-instance and misalignment spread per preset."""
    names = [r.preset for r in report.rows]
    x = np.arange(len(names))
    series = [("cross-instance xy", [r.norm_std_xy for r in report.rows]),
              ("cross-instance z", [r.norm_std_z for r in report.rows]),
              ("1 mm misalignment xy", [r.misalign_std_xy or 0.0 for r in report.rows]),
              ("1 mm misalignment z", [r.misalign_std_z or 0.0 for r in report.rows])]
    fig, ax = plt.subplots(figsize=(7, 4))
    w = 0.2
    for k, (label, vals) in enumerate(series):
        ax.bar(x + (k - 1.5) * w, vals, w, label=label)
    for i, r in enumerate(report.rows):
        if r.self_aligning:
            ax.text(x[i] + w, 0.01, "self-aligning", rotation=90, ha="center", va="bottom", fontsize=7)
    ax.set_xticks(x, names)
    ax.set_ylabel("normalized std")
    ax.set_title(f"{report.n_instances} instances per preset, seed {report.seed}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def loss_curve(history: Sequence[float], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(history)), history)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss (BCE)")
    fig.tight_layout()
    _save(fig, path)


def trajectory_figure(timestamps_us: np.ndarray, values: np.ndarray, path) -> None:
    """Per-sensor |B| change from the first frame."""
    t = np.asarray(timestamps_us) * 1e-6
    v = np.asarray(values).reshape(len(t), -1, 3)
    mag = np.linalg.norm(v - v[:1], axis=2)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for s in range(mag.shape[1]):
        ax.plot(t, mag[:, s], label=f"sensor {s}")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("|B - B(0)| (uT)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
