"""Coarse-to-fine trajectory refinement.

A stack of refinement stages, one per granularity level.  Each stage reshapes
the current full-horizon proposal to its level's segment view, embeds it
(trajectory + goal + timestep encodings, summed), runs a transformer encoder
over the segment tokens, and decodes an additive per-frame refinement.  The
proposal accumulates the refinements stage by stage.

Fusion across stages comes in four flavors:

  weight_shared  one transformer parameter set reused by every stage (default)
  no_fusion      independent transformers, no exchange between stages
  pre_fusion     independent transformers; each stage cross-attends to the
                 previous stage's tokens before its transformer
  post_fusion    as pre_fusion, but the cross-attention runs after the
                 transformer

Trajectory encoders and refinement decoders are always per-level since their
widths depend on the segment length.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError, UsageError
from .granularity import validate_levels
from .nets import CrossAttentionFusion, TransformerEncoder, count_trainable, sinusoidal_encoding

FUSION_MODES = ("weight_shared", "no_fusion", "pre_fusion", "post_fusion")


def timestep_encoding(horizon: int, level: int, embed_dim: int,
                      dtype=torch.float32, device=None) -> torch.Tensor:
    """Sinusoidal encoding of each segment's first frame index (1-based).

    At level ``l`` the segments start at frames 1, 1+l, 1+2l, ...; the finest
    level reduces to the plain per-frame positional encoding.
    """
    validate_levels([level], horizon)
    starts = range(1, horizon + 1, level)
    return sinusoidal_encoding(starts, embed_dim, dtype=dtype, device=device)


@dataclass
class RefinerConfig:
    """Architecture of the refinement stack."""

    embed_dim: int = 64
    heads: int = 8
    transformer_layers: int = 1
    ff_dim: int = 2048
    granularity_levels: tuple = (10, 4, 2, 1)
    fusion_mode: str = "weight_shared"
    refine_history: bool = True
    velocity_augmentation: bool = True
    horizon: int = 20
    history_len: int = 8
    dropout: float = 0.0

    def __post_init__(self):
        self.granularity_levels = tuple(int(l) for l in self.granularity_levels)
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} must be divisible by heads {self.heads}"
            )
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(
                f"unknown fusion mode {self.fusion_mode!r}; choose from {FUSION_MODES}"
            )
        if not 0 < self.history_len < self.horizon:
            raise ConfigurationError("history_len must lie strictly inside the horizon")
        validate_levels(self.granularity_levels, self.horizon)

    @property
    def channels(self) -> int:
        return 4 if self.velocity_augmentation else 2

    @property
    def n_stages(self) -> int:
        return len(self.granularity_levels)


@dataclass
class RefinementBundle:
    """Per-stage refinement record: X0, X0+d1, ..., and the deltas themselves."""

    deltas: list          # I tensors, each (B, T, C)
    stage_states: list    # I+1 tensors: input proposal then each refined state
    final: torch.Tensor   # == stage_states[-1]


class RefinementStack(nn.Module):
    def __init__(self, cfg: RefinerConfig | None = None):
        super().__init__()
        self.cfg = cfg or RefinerConfig()
        cfg = self.cfg
        d, c = cfg.embed_dim, cfg.channels
        self.traj_encoders = nn.ModuleList(
            nn.Sequential(nn.Linear(c * l, d), nn.GELU()) for l in cfg.granularity_levels
        )
        self.goal_encoder = nn.Sequential(nn.Linear(2, d), nn.GELU())
        self.decoders = nn.ModuleList(
            nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, c * l))
            for l in cfg.granularity_levels
        )
        if cfg.fusion_mode == "weight_shared":
            self.transformer = TransformerEncoder(
                d, cfg.heads, cfg.transformer_layers, cfg.ff_dim, cfg.dropout
            )
        else:
            self.transformers = nn.ModuleList(
                TransformerEncoder(d, cfg.heads, cfg.transformer_layers, cfg.ff_dim, cfg.dropout)
                for _ in cfg.granularity_levels
            )
        if cfg.fusion_mode in ("pre_fusion", "post_fusion"):
            # stage 0 has no previous tokens to fuse with
            self.fusion_blocks = nn.ModuleList(
                CrossAttentionFusion(d, cfg.heads, cfg.dropout)
                for _ in cfg.granularity_levels[1:]
            )
        for i, level in enumerate(cfg.granularity_levels):
            self.register_buffer(
                f"_timestep_{i}",
                timestep_encoding(cfg.horizon, level, d),
                persistent=False,
            )
        future = torch.ones(1, cfg.horizon, 1)
        future[:, :cfg.history_len] = 0.0
        self.register_buffer("_future_mask", future, persistent=False)

    def _transformer_at(self, stage: int) -> TransformerEncoder:
        if self.cfg.fusion_mode == "weight_shared":
            return self.transformer
        return self.transformers[stage]

    def embed_inputs(self, view: torch.Tensor, goal: torch.Tensor, stage: int) -> torch.Tensor:
        """Sum of trajectory, broadcast goal, and timestep embeddings: (B, T/l, d)."""
        emb_x = self.traj_encoders[stage](view)
        emb_g = self.goal_encoder(goal).unsqueeze(1)
        emb_t = getattr(self, f"_timestep_{stage}")
        assert emb_x.shape[1] == emb_t.shape[0], "segment count mismatch"
        return emb_x + emb_g + emb_t

    def step(self, state: torch.Tensor, goal: torch.Tensor, stage: int,
             prev_tokens: torch.Tensor | None = None):
        """One refinement stage: (B, T, C) state -> (delta (B, T, C), tokens).

        The returned tokens feed the next stage's cross-attention in the
        pre/post fusion modes.
        """
        cfg = self.cfg
        level = cfg.granularity_levels[stage]
        b, horizon, channels = state.shape
        if horizon != cfg.horizon or channels != cfg.channels:
            raise ConfigurationError(
                f"state shape {tuple(state.shape)} does not match config "
                f"(T={cfg.horizon}, C={cfg.channels})"
            )
        fusing = cfg.fusion_mode in ("pre_fusion", "post_fusion") and stage > 0
        if fusing and prev_tokens is None:
            raise UsageError(
                f"fusion mode {cfg.fusion_mode!r} requires the previous stage's "
                f"tokens at stage {stage}"
            )
        view = state.reshape(b, horizon // level, channels * level)
        tokens = self.embed_inputs(view, goal, stage)
        if fusing and cfg.fusion_mode == "pre_fusion":
            tokens = self.fusion_blocks[stage - 1](tokens, prev_tokens)
        feats = self._transformer_at(stage)(tokens)
        if fusing and cfg.fusion_mode == "post_fusion":
            feats = self.fusion_blocks[stage - 1](feats, prev_tokens)
        delta = self.decoders[stage](feats).reshape(b, horizon, channels)
        if not cfg.refine_history:
            delta = delta * self._future_mask
        return delta, feats

    def forward(self, proposal: torch.Tensor, goal: torch.Tensor) -> RefinementBundle:
        """Run all stages coarse to fine, accumulating refinements.

        The accumulation is a plain left fold, so ``final`` equals the proposal
        plus the deltas summed in stage order, bit for bit.
        """
        state = proposal
        deltas, stage_states = [], [state]
        prev_tokens = None
        for stage in range(self.cfg.n_stages):
            delta, prev_tokens = self.step(state, goal, stage, prev_tokens)
            state = state + delta
            deltas.append(delta)
            stage_states.append(state)
        return RefinementBundle(deltas=deltas, stage_states=stage_states, final=state)


def count_parameters(stack: RefinementStack) -> dict:
    """Exact trainable-parameter count, broken down by submodule.

    The shared transformer is stored (and counted) once regardless of the
    number of stages.
    """
    breakdown = {
        "trajectory_encoders": count_trainable(stack.traj_encoders),
        "goal_encoder": count_trainable(stack.goal_encoder),
        "decoders": count_trainable(stack.decoders),
    }
    if stack.cfg.fusion_mode == "weight_shared":
        breakdown["transformer"] = count_trainable(stack.transformer)
    else:
        breakdown["transformer"] = count_trainable(stack.transformers)
    if hasattr(stack, "fusion_blocks"):
        breakdown["fusion_blocks"] = count_trainable(stack.fusion_blocks)
    breakdown["total"] = sum(breakdown.values())
    assert breakdown["total"] == count_trainable(stack)
    return breakdown
