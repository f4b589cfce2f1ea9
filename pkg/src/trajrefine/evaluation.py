"""Best-of-N displacement metrics and checkpoint evaluation.

ADE is the mean Euclidean distance over the predicted future frames, FDE the
distance at the last frame; the best-of-N variants take the minimum over
candidate trajectories, independently for each metric.  The evaluation also
attributes accuracy to each refinement stage by scoring every intermediate
proposal the same way.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datasets import TrajectoryWindow
from .errors import ConfigurationError
from .training import load_checkpoint, predict_modes, stack_windows, NORMALIZATION_SCHEME


def _distances(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    # one shared expression so the per-mode and batched paths agree bitwise
    return np.sqrt(((pred - gt) ** 2).sum(axis=-1))


def ade(pred, gt) -> float:
    """Mean over frames of the pointwise Euclidean distance."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConfigurationError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(_distances(pred, gt).mean())


def fde(pred, gt) -> float:
    """Euclidean distance at the final frame only."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ConfigurationError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return float(_distances(pred[-1], gt[-1]))


def best_of_n(preds, gt) -> tuple[float, float]:
    """Minimum ADE and minimum FDE over the candidate axis, taken independently.

    preds: (N, T_f, 2); gt: (T_f, 2).
    """
    preds = np.asarray(preds, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[0] < 1 or preds.shape[1:] != gt.shape:
        raise ConfigurationError(f"expected (N, T_f, 2) candidates matching {gt.shape}")
    dist = _distances(preds, gt[None])  # (N, T_f)
    return float(dist.mean(axis=1).min()), float(dist[:, -1].min())


@dataclass
class MetricReport:
    ade: float
    fde: float
    per_stage_ade: list[float]
    n_samples: int
    n_modes: int
    unit: str
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ade < 0 or self.fde < 0:
            raise ConfigurationError("metrics must be non-negative")

    def to_dict(self) -> dict:
        return {
            "ade": self.ade,
            "fde": self.fde,
            "per_stage_ade": list(self.per_stage_ade),
            "n_samples": self.n_samples,
            "n_modes": self.n_modes,
            "unit": self.unit,
            "config": self.config,
        }


def evaluate_model(goal_model, stack, windows: list[TrajectoryWindow],
                   batch_size: int = 256, config_echo: dict | None = None) -> MetricReport:
    """Run the full pipeline over the windows and aggregate best-of-N metrics.

    Distances are translation invariant, so metrics computed in the
    window-normalized frame are already in scene units.
    """
    cfg = stack.cfg
    states_np, _, unit = stack_windows(windows, cfg.channels)
    if states_np.shape[1] != cfg.horizon:
        raise ConfigurationError(
            f"windows span {states_np.shape[1]} frames but the stack expects {cfg.horizon}"
        )
    n = len(windows)
    t_h = cfg.history_len
    stage_ade_sums = np.zeros(cfg.n_stages + 1)
    fde_sum = 0.0
    n_modes = None
    stack.eval()
    with torch.no_grad():
        for start in range(0, n, batch_size):
            gt = torch.as_tensor(states_np[start:start + batch_size], dtype=torch.float32)
            goals, bundle = predict_modes(goal_model, stack, gt)
            b, n_modes = goals.shape[:2]
            gt_future = gt[:, t_h:, :2]
            for s, state in enumerate(bundle.stage_states):
                pred = state.reshape(b, n_modes, cfg.horizon, cfg.channels)[:, :, t_h:, :2]
                dist = torch.linalg.vector_norm(pred - gt_future[:, None], dim=-1)
                stage_ade_sums[s] += float(dist.mean(dim=-1).min(dim=1).values.sum())
                if s == cfg.n_stages:
                    fde_sum += float(dist[..., -1].min(dim=1).values.sum())
    per_stage = [float(v / n) for v in stage_ade_sums]
    return MetricReport(
        ade=per_stage[-1],
        fde=fde_sum / n,
        per_stage_ade=per_stage,
        n_samples=n,
        n_modes=int(n_modes),
        unit=unit,
        config=config_echo or {},
    )


def evaluate_checkpoint(path, windows: list[TrajectoryWindow],
                        batch_size: int = 256) -> MetricReport:
    """Load a refiner checkpoint and evaluate it on the windows.

    The windows' unit must match the unit the checkpoint was trained on.
    """
    goal_model, stack, payload = load_checkpoint(path)
    norm = payload.get("normalization", {})
    units = {w.unit for w in windows}
    if norm.get("scheme") not in (None, NORMALIZATION_SCHEME):
        raise ConfigurationError(f"unsupported normalization scheme {norm.get('scheme')!r}")
    if norm.get("unit") is not None and units != {norm["unit"]}:
        raise ConfigurationError(
            f"checkpoint was trained on {norm['unit']!r} data but the dataset is in {sorted(units)}"
        )
    echo = {
        "refiner_config": payload.get("refiner_config", {}),
        "train_config": payload.get("train_config", {}),
        "normalization": norm,
        "epoch": payload.get("epoch"),
    }
    return evaluate_model(goal_model, stack, windows, batch_size, config_echo=echo)


def forecast(goal_model, stack, windows: list[TrajectoryWindow]) -> dict:
    """De-normalized per-sample predictions for plotting and downstream use.

    Returns arrays in scene units: goals (n, N, 2), proposals and finals
    (n, N, T, 2) position tracks.
    """
    cfg = stack.cfg
    states_np, offsets, unit = stack_windows(windows, cfg.channels)
    stack.eval()
    with torch.no_grad():
        gt = torch.as_tensor(states_np, dtype=torch.float32)
        goals, bundle = predict_modes(goal_model, stack, gt)
        b, n_modes = goals.shape[:2]
        shift = offsets[:, None, None, :]
        proposals = bundle.stage_states[0].reshape(b, n_modes, cfg.horizon, cfg.channels)
        finals = bundle.final.reshape(b, n_modes, cfg.horizon, cfg.channels)
    return {
        "unit": unit,
        "goals": goals.numpy().astype(np.float64) + offsets[:, None, :],
        "proposals": proposals[..., :2].numpy().astype(np.float64) + shift,
        "finals": finals[..., :2].numpy().astype(np.float64) + shift,
    }


def write_report(report: MetricReport, json_path) -> Path:
    """Serialize the report as a JSON document."""
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return json_path


def append_report_row(report: MetricReport, csv_path, label: str = "") -> Path:
    """Append a flat row (label, ade, fde, counts, per-stage ADEs) for sweeps."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    new = not csv_path.exists()
    stage_cols = [f"stage{i}_ade" for i in range(len(report.per_stage_ade))]
    with open(csv_path, "a", newline="") as handle:
        writer = csv.writer(handle)
        if new:
            writer.writerow(["label", "ade", "fde", "n_samples", "n_modes", "unit"] + stage_cols)
        writer.writerow(
            [label, repr(report.ade), repr(report.fde), report.n_samples,
             report.n_modes, report.unit] + [repr(v) for v in report.per_stage_ade]
        )
    return csv_path
