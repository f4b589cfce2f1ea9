"""Endpoint prediction: a causal transformer first pretrained to forecast the
next frame from every history prefix, then extended with a learnable query
token whose output is decoded into N candidate goals.

The model operates in window-normalized coordinates (last observed position at
the origin).  After both pretraining stages it is frozen for downstream use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from .datasets import TrajectoryWindow
from .errors import ConfigurationError, UsageError
from .nets import TransformerEncoder, causal_mask, sinusoidal_encoding

STAGES = ("none", "next_frame", "goal_heads")


@dataclass
class GoalConfig:
    embed_dim: int = 64
    heads: int = 8
    layers: int = 1
    ff_dim: int = 2048
    n_modes: int = 20
    history_len: int = 8
    dropout: float = 0.0


@dataclass
class GoalTrainConfig:
    stage1_epochs: int = 600
    stage2_epochs: int = 900
    batch_size: int = 512
    lr_init: float = 1e-3
    lr_min: float = 1e-5
    grad_clip: float = 10.0
    seed: int = 0


class GoalPredictor(nn.Module):
    """Causal transformer over history tokens with two decoder heads.

    The next-frame head predicts the following position for every prefix; the
    goal head decodes the output of an appended learnable token into
    ``n_modes`` candidate endpoints.  A persistent stage buffer records how far
    pretraining has progressed.
    """

    def __init__(self, cfg: GoalConfig | None = None):
        super().__init__()
        self.cfg = cfg or GoalConfig()
        d = self.cfg.embed_dim
        self.token_embed = nn.Sequential(nn.Linear(2, d), nn.GELU())
        self.encoder = TransformerEncoder(
            d, self.cfg.heads, self.cfg.layers, self.cfg.ff_dim, self.cfg.dropout
        )
        self.next_head = nn.Linear(d, 2)
        self.goal_token = nn.Parameter(torch.randn(d) * 0.02)
        self.goal_head = nn.Linear(d, self.cfg.n_modes * 2)
        self.register_buffer("_stage", torch.tensor(0, dtype=torch.int64))

    @property
    def stage(self) -> str:
        return STAGES[int(self._stage.item())]

    def mark_stage(self, stage: str):
        self._stage.fill_(STAGES.index(stage))

    def _positional(self, length: int, like: torch.Tensor) -> torch.Tensor:
        # 1-based frame indices, matching the refinement stack's convention
        return sinusoidal_encoding(
            range(1, length + 1), self.cfg.embed_dim, dtype=like.dtype, device=like.device
        )

    def forward_next(self, history: torch.Tensor) -> torch.Tensor:
        """Per-prefix next-frame predictions: (B, T_h, 2) -> (B, T_h, 2)."""
        tokens = self.token_embed(history) + self._positional(history.shape[1], history)
        feats = self.encoder(tokens, attn_mask=causal_mask(tokens.shape[1], history.device))
        return self.next_head(feats)

    def forward_goals(self, history: torch.Tensor) -> torch.Tensor:
        """Candidate goals from history: (B, T_h, 2) -> (B, n_modes, 2)."""
        b, t_h, _ = history.shape
        tokens = self.token_embed(history)
        tokens = torch.cat([tokens, self.goal_token.expand(b, 1, -1)], dim=1)
        tokens = tokens + self._positional(t_h + 1, history)
        feats = self.encoder(tokens, attn_mask=causal_mask(t_h + 1, history.device))
        return self.goal_head(feats[:, -1]).reshape(b, self.cfg.n_modes, 2)

    @torch.no_grad()
    def predict_goals(self, history: torch.Tensor) -> torch.Tensor:
        """Deterministic inference; requires both pretraining stages."""
        if self.stage != "goal_heads":
            raise UsageError(
                f"goal predictor is at stage {self.stage!r}; run both pretraining stages first"
            )
        was_training = self.training
        self.eval()
        try:
            return self.forward_goals(history)
        finally:
            self.train(was_training)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


def _stack_normalized(windows: list[TrajectoryWindow], history_len: int):
    """(histories, next_targets, endpoints) in window-normalized coordinates."""
    if not windows:
        raise ConfigurationError("training set is empty")
    hist, nxt, end = [], [], []
    for w in windows:
        if len(w.history) != history_len:
            raise ConfigurationError(
                f"window history length {len(w.history)} != configured {history_len}"
            )
        offset = w.history[-1]
        h = w.history - offset
        f = w.future - offset
        hist.append(h)
        nxt.append(np.concatenate([h[1:], f[:1]], axis=0))
        end.append(f[-1])
    to = lambda arr: torch.as_tensor(np.asarray(arr), dtype=torch.float32)
    return to(hist), to(nxt), to(end)


def _cosine_lr(step: int, total: int, lr_init: float, lr_min: float) -> float:
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * step / max(1, total)))


def _run_stage(model, cfg: GoalTrainConfig, epochs, loss_fn, n_samples, seed_offset):
    torch.manual_seed(cfg.seed + seed_offset)
    rng = np.random.default_rng(cfg.seed + seed_offset)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_init)
    batch = min(cfg.batch_size, n_samples)
    steps_per_epoch = math.ceil(n_samples / batch)
    total_steps = epochs * steps_per_epoch
    curve = []
    step = 0
    model.train()
    for _ in range(epochs):
        order = rng.permutation(n_samples)
        for b in range(steps_per_epoch):
            idx = torch.as_tensor(order[b * batch:(b + 1) * batch])
            lr = _cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_min)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss = loss_fn(idx)
            if not torch.isfinite(loss):
                raise RuntimeError(f"goal pretraining diverged at step {step}: loss={loss.item()}")
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            curve.append((step, float(loss.item())))
            step += 1
    model.eval()
    return curve


def pretrain_next_frame(model: GoalPredictor, windows, cfg: GoalTrainConfig):
    """Stage one: causal next-frame MSE over all history prefixes."""
    histories, next_targets, _ = _stack_normalized(windows, model.cfg.history_len)

    def loss_fn(idx):
        pred = model.forward_next(histories[idx])
        return torch.mean((pred - next_targets[idx]) ** 2)

    curve = _run_stage(model, cfg, cfg.stage1_epochs, loss_fn, len(windows), seed_offset=1)
    model.mark_stage("next_frame")
    return curve


def pretrain_goal_heads(model: GoalPredictor, windows, cfg: GoalTrainConfig):
    """Stage two: winner-takes-all endpoint MSE over the candidate heads,
    fine-tuning the stage-one backbone jointly."""
    if model.stage == "none":
        raise UsageError("run the next-frame stage before the goal stage")
    histories, _, endpoints = _stack_normalized(windows, model.cfg.history_len)

    def loss_fn(idx):
        goals = model.forward_goals(histories[idx])
        sq = torch.mean((goals - endpoints[idx][:, None, :]) ** 2, dim=-1)  # (B, N)
        return torch.mean(torch.min(sq, dim=1).values)

    curve = _run_stage(model, cfg, cfg.stage2_epochs, loss_fn, len(windows), seed_offset=2)
    model.mark_stage("goal_heads")
    return curve


def pretrain(model: GoalPredictor, windows, cfg: GoalTrainConfig):
    """Run both pretraining stages; returns {stage: loss curve}."""
    return {
        "next_frame": pretrain_next_frame(model, windows, cfg),
        "goal_heads": pretrain_goal_heads(model, windows, cfg),
    }


def save_goal_checkpoint(model: GoalPredictor, path, train_config=None,
                         loss_curves=None, normalization=None):
    payload = {
        "kind": "goal",
        "stage": model.stage,
        "state": model.state_dict(),
        "config": asdict(model.cfg),
        "train_config": asdict(train_config) if train_config is not None else None,
        "loss_curves": loss_curves or {},
        "normalization": normalization or {"scheme": "last_observed_position_origin"},
    }
    torch.save(payload, path)
    return path


def load_goal_checkpoint(path) -> tuple[GoalPredictor, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise ConfigurationError(f"goal checkpoint {path} does not exist") from None
    if payload.get("kind") != "goal":
        raise ConfigurationError(f"{path} is not a goal-predictor checkpoint")
    model = GoalPredictor(GoalConfig(**payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload
