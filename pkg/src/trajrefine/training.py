"""End-to-end training of the refinement stack under a frozen goal predictor.

Losses are plain MSE on positions and velocities over the masked frames,
combined as L = L_p + lambda_v * L_v.  With N candidate goals per sample the
per-mode losses (averaged over batch, frames, and coordinates) are reduced
across modes either by winner-takes-all (min) or by their mean.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from .datasets import TrajectoryWindow, normalize_window
from .errors import ConfigurationError
from .goal import GoalConfig, GoalPredictor
from .proposal import proposal_batch
from .refiner import RefinementStack, RefinerConfig

LOSS_MASKS = ("future_only", "full_horizon")
MODAL_REDUCTIONS = ("winner_takes_all", "mean_over_modes")
METRIC_COLUMNS = ("step", "lr", "loss_pos", "loss_vel", "loss", "ade", "fde")
NORMALIZATION_SCHEME = "last_observed_position_origin"


@dataclass
class TrainConfig:
    batch_size: int = 512
    epochs: int = 500
    lr_init: float = 1e-3
    lr_min: float = 1e-5
    lambda_v: float = 5.0
    loss_mask: str = "future_only"
    modal_reduction: str = "winner_takes_all"
    grad_clip: float = 10.0
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 = only at the end

    def __post_init__(self):
        if self.loss_mask not in LOSS_MASKS:
            raise ConfigurationError(f"unknown loss mask {self.loss_mask!r}")
        if self.modal_reduction not in MODAL_REDUCTIONS:
            raise ConfigurationError(f"unknown modal reduction {self.modal_reduction!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")


def _masked_mse(pred: torch.Tensor, gt: torch.Tensor, mask) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ConfigurationError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    mask = torch.as_tensor(mask, dtype=torch.bool, device=pred.device)
    if mask.ndim != 1 or mask.shape[0] != pred.shape[-2]:
        raise ConfigurationError("mask must be one boolean per frame")
    if not bool(mask.any()):
        raise ConfigurationError("loss mask selects no frames")
    diff = pred[..., mask, :] - gt[..., mask, :]
    return torch.mean(diff ** 2)


def position_loss(pred, gt, mask) -> torch.Tensor:
    """MSE over masked frames and both coordinates of the position channels."""
    return _masked_mse(torch.as_tensor(pred), torch.as_tensor(gt), mask)


def velocity_loss(pred, gt, mask) -> torch.Tensor:
    """As :func:`position_loss`, on the velocity channels."""
    return _masked_mse(torch.as_tensor(pred), torch.as_tensor(gt), mask)


def total_loss(loss_pos, loss_vel, lambda_v):
    return loss_pos + lambda_v * loss_vel


def multimodal_loss(per_mode_losses, reduction: str):
    """Reduce N per-mode scalars: min for winner_takes_all, average otherwise."""
    values = per_mode_losses if torch.is_tensor(per_mode_losses) \
        else torch.as_tensor(per_mode_losses, dtype=torch.float64)
    if values.numel() < 1:
        raise ConfigurationError("need at least one mode")
    if reduction == "winner_takes_all":
        return values.min()
    if reduction == "mean_over_modes":
        return values.mean()
    raise ConfigurationError(f"unknown modal reduction {reduction!r}")


def cosine_lr(step: int, total_steps: int, lr_init: float, lr_min: float) -> float:
    """Cosine annealing from lr_init at step 0 to lr_min at total_steps."""
    if not 0 <= step <= total_steps:
        raise ConfigurationError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * step / max(1, total_steps)))


def frame_mask(loss_mask: str, horizon: int, history_len: int) -> np.ndarray:
    mask = np.ones(horizon, dtype=bool)
    if loss_mask == "future_only":
        mask[:history_len] = False
    return mask


def stack_windows(windows: list[TrajectoryWindow], channels: int = 4):
    """Normalized ground-truth states (n, T, C) plus per-window offsets (n, 2)."""
    if not windows:
        raise ConfigurationError("window set is empty")
    units = {w.unit for w in windows}
    if len(units) != 1:
        raise ConfigurationError(f"mixed units in window set: {sorted(units)}")
    states, offsets = [], []
    for w in windows:
        state, offset = normalize_window(w)
        states.append(state[:, :channels])
        offsets.append(offset)
    return np.asarray(states), np.asarray(offsets), units.pop()


def predict_modes(goal_model: GoalPredictor, stack: RefinementStack,
                  gt_states: torch.Tensor) -> tuple:
    """Goals, proposals, and the refinement bundle for a batch of samples.

    gt_states: (B, T, C) normalized states whose first T_h frames seed the
    proposals.  Returns (goals (B, N, 2), bundle over the folded (B*N) batch).
    """
    cfg = stack.cfg
    history = gt_states[:, :cfg.history_len]
    goals = goal_model.predict_goals(history[:, :, :2])
    props = proposal_batch(history.numpy(), goals.numpy().astype(np.float64), cfg.horizon)
    b, n = goals.shape[:2]
    proposals = torch.as_tensor(props, dtype=gt_states.dtype).reshape(b * n, cfg.horizon, -1)
    bundle = stack(proposals, goals.reshape(b * n, 2).to(gt_states.dtype))
    return goals, bundle


def _best_of_n_metrics(pred_pos: torch.Tensor, gt_pos: torch.Tensor) -> tuple:
    """(ADE_N, FDE_N) for (B, N, T_f, 2) predictions vs (B, T_f, 2) truth."""
    dist = torch.linalg.vector_norm(pred_pos - gt_pos[:, None], dim=-1)  # (B, N, T_f)
    ade = dist.mean(dim=-1).min(dim=1).values.mean()
    fde = dist[..., -1].min(dim=1).values.mean()
    return float(ade.item()), float(fde.item())


class MetricLog:
    """Append-only CSV step log with a fixed column set."""

    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        self.rows = []
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as handle:
                csv.writer(handle).writerow(METRIC_COLUMNS)

    def append(self, step, lr, loss_pos, loss_vel, loss, ade, fde):
        row = (step, repr(float(lr)), repr(float(loss_pos)), repr(float(loss_vel)),
               repr(float(loss)), repr(float(ade)), repr(float(fde)))
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as handle:
                csv.writer(handle).writerow(row)


def train_refiner(windows: list[TrajectoryWindow], goal_model: GoalPredictor,
                  stack: RefinementStack, cfg: TrainConfig,
                  run_dir=None) -> dict:
    """Train the stack on the given windows with the goal predictor frozen.

    Writes ``metrics.csv`` and ``checkpoint.pt`` into ``run_dir`` when given.
    Returns a summary with the final loss and training-set metrics.
    """
    rcfg = stack.cfg
    states_np, _, unit = stack_windows(windows, rcfg.channels)
    if states_np.shape[1] != rcfg.horizon:
        raise ConfigurationError(
            f"windows span {states_np.shape[1]} frames but the stack expects {rcfg.horizon}"
        )
    goal_model.freeze()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    states = torch.as_tensor(states_np, dtype=torch.float32)
    n = len(windows)
    batch = min(cfg.batch_size, n)
    steps_per_epoch = math.ceil(n / batch)
    total_steps = cfg.epochs * steps_per_epoch
    mask = frame_mask(cfg.loss_mask, rcfg.horizon, rcfg.history_len)
    mask_t = torch.as_tensor(mask)

    optimizer = torch.optim.Adam([p for p in stack.parameters() if p.requires_grad],
                                 lr=cfg.lr_init)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    log = MetricLog(run_dir / "metrics.csv" if run_dir is not None else None)

    step = 0
    stack.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = torch.as_tensor(order[b * batch:(b + 1) * batch])
            gt = states[idx]
            lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_min)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()

            goals, bundle = predict_modes(goal_model, stack, gt)
            n_modes = goals.shape[1]
            pred = bundle.final.reshape(len(idx), n_modes, rcfg.horizon, rcfg.channels)
            err = (pred - gt[:, None]) ** 2
            masked = err[:, :, mask_t]
            lp_modes = masked[..., :2].mean(dim=(0, 2, 3))
            if rcfg.velocity_augmentation:
                lv_modes = masked[..., 2:].mean(dim=(0, 2, 3))
            else:
                lv_modes = torch.zeros_like(lp_modes)
            mode_totals = total_loss(lp_modes, lv_modes, cfg.lambda_v)
            loss = multimodal_loss(mode_totals, cfg.modal_reduction)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at step {step}: loss={float(loss.item())} "
                    f"(lr={lr:.3g}, epoch={epoch})"
                )
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(
                    [p for p in stack.parameters() if p.requires_grad], cfg.grad_clip)
            optimizer.step()

            with torch.no_grad():
                if cfg.modal_reduction == "winner_takes_all":
                    sel = int(torch.argmin(mode_totals).item())
                    lp_log, lv_log = float(lp_modes[sel]), float(lv_modes[sel])
                else:
                    lp_log, lv_log = float(lp_modes.mean()), float(lv_modes.mean())
                ade, fde = _best_of_n_metrics(
                    pred[:, :, rcfg.history_len:, :2].detach(), gt[:, rcfg.history_len:, :2])
            log.append(step, lr, lp_log, lv_log, float(loss.item()), ade, fde)
            step += 1
        if run_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(run_dir / f"checkpoint_epoch{epoch + 1:05d}.pt",
                            goal_model, stack, cfg, unit, epoch + 1)

    stack.eval()
    checkpoint_path = None
    if run_dir is not None:
        checkpoint_path = save_checkpoint(run_dir / "checkpoint.pt",
                                          goal_model, stack, cfg, unit, cfg.epochs)
    last = log.rows[-1]
    return {
        "steps": step,
        "final_loss": float(last[4]),
        "final_ade": float(last[5]),
        "final_fde": float(last[6]),
        "unit": unit,
        "checkpoint": checkpoint_path,
        "log_rows": log.rows,
    }


def save_checkpoint(path, goal_model: GoalPredictor, stack: RefinementStack,
                    train_config: TrainConfig, unit: str, epoch: int) -> Path:
    payload = {
        "kind": "refiner",
        "stack_state": stack.state_dict(),
        "refiner_config": asdict(stack.cfg),
        "goal_state": goal_model.state_dict(),
        "goal_config": asdict(goal_model.cfg),
        "train_config": asdict(train_config),
        "normalization": {"scheme": NORMALIZATION_SCHEME, "unit": unit},
        "epoch": epoch,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> tuple[GoalPredictor, RefinementStack, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise ConfigurationError(f"checkpoint {path} does not exist") from None
    if payload.get("kind") != "refiner":
        raise ConfigurationError(f"{path} is not a refiner checkpoint")
    goal_model = GoalPredictor(GoalConfig(**payload["goal_config"]))
    goal_model.load_state_dict(payload["goal_state"])
    goal_model.freeze()
    stack = RefinementStack(RefinerConfig(**payload["refiner_config"]))
    stack.load_state_dict(payload["stack_state"])
    stack.eval()
    return goal_model, stack, payload
