"""Initial trajectory proposals: straight-line completion from the last observed
position to a candidate goal, with the matching constant velocity.

Observed frames are copied verbatim.  Future positions advance by a constant
per-frame step toward the goal; future velocity channels hold that step.  The
step has its lowest mantissa bits cleared so that all of its small integer
multiples are exact in float64: when the anchor position is the origin (the
frame the pipeline works in), the proposed future is then *exactly* affine --
its second differences are bitwise zero and each position difference equals the
stored velocity.  The distortion of the step is below 2e-15 relative and is
zero whenever the displacement divides evenly.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ConfigurationError


def _clear_low_mantissa_bits(values: np.ndarray, bits: int) -> np.ndarray:
    """Zero the `bits` lowest mantissa bits of float64 values (toward zero)."""
    if bits <= 0:
        return values
    raw = np.ascontiguousarray(values, dtype=np.float64).copy()
    mask = np.uint64(0xFFFFFFFFFFFFFFFF ^ ((1 << bits) - 1))
    view = raw.view(np.uint64)
    view &= mask
    return raw


def _interpolate(history_state: np.ndarray, goals: np.ndarray, horizon: int) -> np.ndarray:
    """Core broadcasting implementation shared by the single and batched ops.

    history_state: (..., T_h, C) with C in {2, 4}; goals: (..., 2).
    Returns (..., horizon, C).
    """
    history_state = np.asarray(history_state, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    t_h, channels = history_state.shape[-2:]
    if channels not in (2, 4):
        raise ConfigurationError(f"history state must have 2 or 4 channels, got {channels}")
    if horizon <= t_h:
        raise ConfigurationError(f"horizon T={horizon} must exceed the observed length T_h={t_h}")
    if not np.isfinite(history_state).all() or not np.isfinite(goals).all():
        raise ConfigurationError("history state and goal must be finite")

    n_future = horizon - t_h
    anchor = history_state[..., -1, :2]
    step = (goals - anchor) / n_future
    step = _clear_low_mantissa_bits(step, max(1, math.ceil(math.log2(n_future + 1))))

    k = np.arange(1, n_future + 1, dtype=np.float64).reshape(
        (1,) * (step.ndim - 1) + (n_future, 1)
    )
    future_pos = anchor[..., None, :] + k * step[..., None, :]
    if channels == 4:
        future_vel = np.broadcast_to(step[..., None, :], future_pos.shape)
        future = np.concatenate([future_pos, future_vel], axis=-1)
    else:
        future = future_pos

    batch_shape = np.broadcast_shapes(history_state.shape[:-2], goals.shape[:-1])
    observed = np.broadcast_to(history_state, batch_shape + (t_h, channels))
    return np.concatenate([observed, future], axis=-2)


def initial_proposal(history_state, goal, horizon: int) -> np.ndarray:
    """Build one full-horizon proposal from an observed (T_h, C) state and a goal.

    Future positions follow the straight line from the last observed position
    to the goal; future velocities are the constant per-frame displacement.
    """
    history_state = np.asarray(history_state, dtype=np.float64)
    if history_state.ndim != 2:
        raise ConfigurationError(f"expected (T_h, C) history state, got shape {history_state.shape}")
    goal = np.asarray(goal, dtype=np.float64).reshape(2)
    return _interpolate(history_state, goal, horizon)


def proposal_batch(history_states, goals, horizon: int) -> np.ndarray:
    """Vectorized proposals for a batch of samples and modes.

    history_states: (B, T_h, C); goals: (B, N, 2).  Returns (B, N, horizon, C).
    """
    history_states = np.asarray(history_states, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    if history_states.ndim != 3 or goals.ndim != 3 or goals.shape[-1] != 2:
        raise ConfigurationError(
            f"expected (B, T_h, C) states and (B, N, 2) goals, got "
            f"{history_states.shape} and {goals.shape}"
        )
    return _interpolate(history_states[:, None], goals, horizon)
