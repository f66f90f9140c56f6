"""Figure rendering for sweep output.

Uses the non-interactive matplotlib backend so figures render to files in
headless environments.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_sweep_figure(reports, values, parameter: str, path) -> Path:
    """Mean perturbed accuracy (with standard-error bars) against the swept
    parameter value, plus the clean accuracy for reference."""
    path = Path(path)
    xs = list(range(len(values)))
    mean = [r.mean_acc for r in reports]
    se = [r.se_acc for r in reports]
    clean = [r.clean_mean_acc for r in reports]

    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(xs, mean, yerr=se, marker="o", capsize=3, label="perturbed")
    ax.plot(xs, clean, linestyle="--", marker=".", color="gray", label="clean")
    ax.set_xticks(xs)
    ax.set_xticklabels([str(v) for v in values])
    ax.set_xlabel(parameter.replace("_", " "))
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    tmp = path.with_suffix(path.suffix + ".tmp")
    fig.savefig(tmp, dpi=150, format=path.suffix.lstrip(".") or "png")
    plt.close(fig)
    tmp.rename(path)
    return path
