"""Static trajectory visualizations: history, ground truth, candidate goals,
initial proposals, and refined predictions, plus a closest-to-truth panel."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .datasets import TrajectoryWindow
from .evaluation import ade, forecast

STYLE = {
    "history": {"color": "black", "lw": 1.8},
    "truth": {"color": "#e6b400", "lw": 2.0},
    "proposal": {"color": "#d62728", "lw": 0.8, "alpha": 0.55},
    "final": {"color": "#1f77b4", "lw": 0.9, "alpha": 0.75},
}


def _draw_sample(axes, window: TrajectoryWindow, goals, proposals, finals, t_h: int):
    full, best = axes
    history = np.vstack([window.history, window.history[-1:]])
    for ax in (full, best):
        ax.plot(history[:, 0], history[:, 1], label="history", **STYLE["history"])
        ax.plot(window.future[:, 0], window.future[:, 1], label="ground truth", **STYLE["truth"])
        ax.set_aspect("equal", adjustable="datalim")
        ax.grid(True, alpha=0.25)

    for mode in range(len(goals)):
        full.plot(proposals[mode, t_h - 1:, 0], proposals[mode, t_h - 1:, 1],
                  label="initial proposal" if mode == 0 else None, **STYLE["proposal"])
        full.plot(finals[mode, t_h - 1:, 0], finals[mode, t_h - 1:, 1],
                  label="final prediction" if mode == 0 else None, **STYLE["final"])
    full.scatter(goals[:, 0], goals[:, 1], marker="*", s=60, color=STYLE["proposal"]["color"],
                 zorder=5, label="goals")
    full.set_title("all candidates")

    scores = [ade(finals[m, t_h:], window.future) for m in range(len(goals))]
    pick = int(np.argmin(scores))
    best.plot(proposals[pick, t_h - 1:, 0], proposals[pick, t_h - 1:, 1],
              label="initial proposal", **STYLE["proposal"] | {"alpha": 1.0, "lw": 1.5})
    best.plot(finals[pick, t_h - 1:, 0], finals[pick, t_h - 1:, 1],
              label="final prediction", **STYLE["final"] | {"alpha": 1.0, "lw": 1.8})
    best.scatter([goals[pick, 0]], [goals[pick, 1]], marker="*", s=90,
                 color=STYLE["proposal"]["color"], zorder=5, label="goal")
    best.set_title("closest to ground truth")
    best.legend(loc="best", fontsize=7)


def render_predictions(goal_model, stack, windows: list[TrajectoryWindow], out_dir,
                       samples: int = 3, dpi: int = 120) -> list[Path]:
    """Write one PNG per sample; returns the paths (missing samples are skipped)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chosen = windows[:samples]
    if not chosen:
        return []
    result = forecast(goal_model, stack, chosen)
    t_h = stack.cfg.history_len
    paths = []
    for i, window in enumerate(chosen):
        fig, axes = plt.subplots(1, 2, figsize=(9, 4.2))
        _draw_sample(axes, window, result["goals"][i], result["proposals"][i],
                     result["finals"][i], t_h)
        axes[0].legend(loc="best", fontsize=7)
        fig.suptitle(f"{window.scene_id} agent {window.agent_id} [{result['unit']}]")
        fig.tight_layout()
        path = out_dir / f"sample_{i:03d}.png"
        fig.savefig(path, dpi=dpi, metadata={"Software": "trajrefine"})
        plt.close(fig)
        paths.append(path)
    return paths
