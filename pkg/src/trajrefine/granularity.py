"""Reshaping trajectory states between the finest per-frame form and coarser segment views.

A state covering ``T`` frames with ``C`` channels per frame can be viewed at
granularity ``level`` as ``T / level`` segments of ``level`` consecutive frames
each, flattened frame-major into rows of width ``C * level``.  The reshape is
lossless and bit-exact in both directions; ``level`` must divide ``T``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GranularityError


@dataclass(frozen=True)
class GranularView:
    """A trajectory state viewed as segments of `level` consecutive frames."""

    level: int
    horizon: int
    channels: int
    data: np.ndarray  # (horizon // level, channels * level)

    def __post_init__(self):
        rows, width = self.data.shape
        if rows * self.level != self.horizon or width != self.channels * self.level:
            raise GranularityError(
                f"inconsistent view: {self.data.shape} does not match "
                f"level={self.level}, horizon={self.horizon}, channels={self.channels}"
            )


def validate_levels(levels, horizon: int) -> None:
    """Check that every granularity level divides the horizon.

    Repeats and arbitrary ordering are allowed; non-divisors raise a
    GranularityError naming every offending level.
    """
    levels = list(levels)
    if not levels:
        raise GranularityError("granularity list is empty")
    bad = sorted({int(l) for l in levels if int(l) < 1 or horizon % int(l) != 0})
    if bad:
        raise GranularityError(
            f"granularity levels {bad} do not divide the horizon T={horizon}"
        )


def to_granularity(state, level: int) -> GranularView:
    """Reshape a (T, C) state into segments of `level` frames, (T/level, C*level)."""
    state = np.asarray(state)
    if state.ndim != 2:
        raise GranularityError(f"expected a (T, C) state, got shape {state.shape}")
    horizon, channels = state.shape
    level = int(level)
    if level < 1 or horizon % level != 0:
        raise GranularityError(f"level {level} does not divide the horizon T={horizon}")
    data = state.reshape(horizon // level, channels * level)
    return GranularView(level=level, horizon=horizon, channels=channels, data=data)


def from_granularity(view: GranularView) -> np.ndarray:
    """Exact inverse of :func:`to_granularity`; returns the (T, C) state."""
    return view.data.reshape(view.horizon, view.channels)
