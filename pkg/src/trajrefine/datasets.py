"""Trajectory ingestion: annotation parsing, downsampling, windowing, velocity
augmentation, and desk-scale synthetic generators.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, ParseError

ETH_UCY_COLUMNS = ("frame", "agent", "x", "y")
SYNTHETIC_KINDS = ("line", "arc", "sine", "stop_and_go")


@dataclass(frozen=True)
class RawScene:
    """One scene's raw records: per-row frame index, agent id, and 2D position."""

    scene_id: str
    frames: np.ndarray     # (n,) int64
    agents: np.ndarray     # (n,) int64
    positions: np.ndarray  # (n, 2) float64
    unit: str = "meters"
    native_fps: float = 2.5

    def __post_init__(self):
        if self.unit not in ("meters", "pixels"):
            raise ConfigurationError(f"unknown unit {self.unit!r}")
        if self.native_fps <= 0:
            raise ConfigurationError("native_fps must be positive")
        n = len(self.frames)
        if len(self.agents) != n or self.positions.shape != (n, 2):
            raise ConfigurationError("inconsistent record arrays")
        if n and not np.isfinite(self.positions).all():
            raise ConfigurationError(f"scene {self.scene_id}: non-finite positions")
        pairs = np.stack([self.frames, self.agents], axis=1)
        if len(np.unique(pairs, axis=0)) != n:
            raise ConfigurationError(f"scene {self.scene_id}: duplicate (frame, agent) records")

    def __len__(self) -> int:
        return len(self.frames)

    def agent_ids(self) -> np.ndarray:
        return np.unique(self.agents)

    def track(self, agent_id: int):
        """Frame-sorted (frames, positions) for one agent."""
        sel = self.agents == agent_id
        frames = self.frames[sel]
        order = np.argsort(frames, kind="stable")
        return frames[order], self.positions[sel][order]


@dataclass(frozen=True)
class TrajectoryWindow:
    """One sample: T_h observed positions followed by T_f future positions."""

    history: np.ndarray  # (T_h, 2) float64
    future: np.ndarray   # (T_f, 2) float64
    delta_t: float
    scene_id: str = ""
    agent_id: int = 0
    unit: str = "meters"

    def __post_init__(self):
        for name, arr in (("history", self.history), ("future", self.future)):
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
                raise ConfigurationError(f"{name} must be a (T, 2) array, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ConfigurationError(f"{name} contains non-finite values")

    @property
    def horizon(self) -> int:
        return len(self.history) + len(self.future)


def _parse_float(token: str, path, lineno: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: cannot parse {what} from {token!r}") from None


def load_eth_ucy(path, column_order=ETH_UCY_COLUMNS, native_fps: float = 2.5,
                 scene_id: str | None = None, unit: str = "meters") -> RawScene:
    """Parse a whitespace-separated (frame, agent, x, y) annotation file.

    ``column_order`` names the role of each of the four columns; public copies
    of these files disagree on coordinate order, so it is configurable.
    """
    column_order = tuple(column_order)
    if sorted(column_order) != sorted(ETH_UCY_COLUMNS):
        raise ConfigurationError(
            f"column_order must be a permutation of {ETH_UCY_COLUMNS}, got {column_order}"
        )
    idx = {name: column_order.index(name) for name in ETH_UCY_COLUMNS}
    frames, agents, xs, ys = [], [], [], []
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 4:
                raise ParseError(f"{path}:{lineno}: expected 4 columns, got {len(tokens)}")
            values = [_parse_float(tokens[idx[c]], path, lineno, c) for c in ETH_UCY_COLUMNS]
            frames.append(int(values[0]))
            agents.append(int(values[1]))
            xs.append(values[2])
            ys.append(values[3])
    frames = np.asarray(frames, dtype=np.int64)
    agents = np.asarray(agents, dtype=np.int64)
    positions = np.stack([xs, ys], axis=1) if frames.size else np.zeros((0, 2))
    order = np.lexsort((frames, agents))
    return RawScene(
        scene_id=scene_id or str(path),
        frames=frames[order],
        agents=agents[order],
        positions=positions[order],
        unit=unit,
        native_fps=native_fps,
    )


def load_sdd(path, native_fps: float = 30.0, scene_id: str | None = None,
             labels=None) -> RawScene:
    """Parse a drone-annotation file with rows
    (agent, xmin, ymin, xmax, ymax, frame, lost, occluded, generated, label).

    The position is the bounding-box center in pixels; rows flagged lost are
    dropped.  ``labels`` optionally restricts to the given agent classes.
    """
    frames, agents, xs, ys = [], [], [], []
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 10:
                raise ParseError(f"{path}:{lineno}: expected 10 columns, got {len(tokens)}")
            agent = int(_parse_float(tokens[0], path, lineno, "agent id"))
            box = [_parse_float(t, path, lineno, "bounding box") for t in tokens[1:5]]
            frame = int(_parse_float(tokens[5], path, lineno, "frame"))
            lost = int(_parse_float(tokens[6], path, lineno, "lost flag"))
            label = " ".join(tokens[9:]).strip('"')
            if lost:
                continue
            if labels is not None and label not in labels:
                continue
            frames.append(frame)
            agents.append(agent)
            xs.append((box[0] + box[2]) / 2.0)
            ys.append((box[1] + box[3]) / 2.0)
    frames = np.asarray(frames, dtype=np.int64)
    agents = np.asarray(agents, dtype=np.int64)
    positions = np.stack([xs, ys], axis=1) if frames.size else np.zeros((0, 2))
    order = np.lexsort((frames, agents))
    return RawScene(
        scene_id=scene_id or str(path),
        frames=frames[order],
        agents=agents[order],
        positions=positions[order],
        unit="pixels",
        native_fps=native_fps,
    )


def downsample(scene: RawScene, target_fps: float) -> RawScene:
    """Keep every k-th frame per agent, k = native_fps / target_fps (must be integral).

    Kept frames are renumbered so that consecutive kept frames differ by one,
    anchored at each agent's first frame; gaps on the k-grid remain gaps.
    """
    if target_fps <= 0:
        raise ConfigurationError("target_fps must be positive")
    ratio = scene.native_fps / target_fps
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9:
        raise ConfigurationError(
            f"native_fps {scene.native_fps} is not an integer multiple of target_fps {target_fps}"
        )
    if k == 1:
        return replace(scene, native_fps=target_fps)
    keep = np.zeros(len(scene), dtype=bool)
    new_frames = scene.frames.copy()
    for agent in scene.agent_ids():
        sel = np.flatnonzero(scene.agents == agent)
        first = scene.frames[sel].min()
        offsets = scene.frames[sel] - first
        on_grid = offsets % k == 0
        keep[sel[on_grid]] = True
        new_frames[sel] = first + offsets // k
    return RawScene(
        scene_id=scene.scene_id,
        frames=new_frames[keep],
        agents=scene.agents[keep],
        positions=scene.positions[keep],
        unit=scene.unit,
        native_fps=target_fps,
    )


def extract_windows(scene: RawScene, history_len: int = 8, future_len: int = 12,
                    stride: int = 1) -> list[TrajectoryWindow]:
    """Slide a window of history_len + future_len frames over every contiguous
    per-agent run of consecutive frame indices, advancing by `stride`."""
    if history_len < 1 or future_len < 1 or stride < 1:
        raise ConfigurationError("history_len, future_len and stride must be >= 1")
    span = history_len + future_len
    delta_t = 1.0 / scene.native_fps
    windows = []
    for agent in scene.agent_ids():
        frames, positions = scene.track(agent)
        breaks = np.flatnonzero(np.diff(frames) != 1)
        for run in np.split(np.arange(len(frames)), breaks + 1):
            for start in range(0, len(run) - span + 1, stride):
                block = positions[run[start:start + span]]
                windows.append(TrajectoryWindow(
                    history=block[:history_len].copy(),
                    future=block[history_len:].copy(),
                    delta_t=delta_t,
                    scene_id=scene.scene_id,
                    agent_id=int(agent),
                    unit=scene.unit,
                ))
    return windows


def augment_velocity(window: TrajectoryWindow) -> np.ndarray:
    """Full-horizon (T, 4) state: positions plus per-frame displacement channels.

    v_t = p_t - p_{t-1} in frame units, computed across the history/future seam;
    the first frame duplicates the second frame's velocity.
    """
    positions = np.concatenate([window.history, window.future], axis=0)
    velocity = np.empty_like(positions)
    velocity[1:] = positions[1:] - positions[:-1]
    velocity[0] = velocity[1]
    return np.concatenate([positions, velocity], axis=1)


def normalize_window(window: TrajectoryWindow):
    """(T, 4) state translated so the last observed position is the origin.

    Returns (state, offset); velocities are translation invariant and untouched.
    Adding `offset` back to the position channels inverts the normalization.
    """
    state = augment_velocity(window)
    offset = window.history[-1].copy()
    state[:, :2] -= offset
    return state, offset


def _synth_positions(kind: str, rng: np.random.Generator, horizon: int) -> np.ndarray:
    t = np.arange(horizon, dtype=np.float64)
    start = rng.uniform(-1.0, 1.0, size=2)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(heading), np.sin(heading)])
    if kind == "line":
        speed = rng.uniform(0.05, 0.25)
        return start + speed * t[:, None] * direction
    if kind == "arc":
        speed = rng.uniform(0.05, 0.25)
        turn = rng.uniform(0.05, 0.3) * rng.choice([-1.0, 1.0])
        angles = heading + turn * t
        steps = speed * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return start + np.concatenate([np.zeros((1, 2)), np.cumsum(steps[:-1], axis=0)])
    if kind == "sine":
        speed = rng.uniform(0.08, 0.2)
        amplitude = rng.uniform(0.1, 0.4)
        period = rng.uniform(8.0, 20.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        normal = np.array([-direction[1], direction[0]])
        along = speed * t[:, None] * direction
        across = amplitude * np.sin(2.0 * np.pi * t / period + phase)[:, None] * normal
        return start + along + across
    if kind == "stop_and_go":
        speed = rng.uniform(0.1, 0.3)
        go1 = int(rng.integers(4, 9))
        stop = int(rng.integers(3, 7))
        moving = np.ones(horizon)
        moving[go1:go1 + stop] = 0.0
        steps = speed * moving[:, None] * direction
        return start + np.concatenate([np.zeros((1, 2)), np.cumsum(steps[:-1], axis=0)])
    raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")


def synthesize(kind: str, count: int, seed: int, history_len: int = 8,
               future_len: int = 12, delta_t: float = 0.4) -> list[TrajectoryWindow]:
    """Generate `count` deterministic synthetic windows of the given kind.

    Kinds and parameter ranges (units per frame):
      line:        speed U(0.05, 0.25), heading U(0, 2pi)
      arc:         line parameters plus a constant turn rate U(+-[0.05, 0.3]) rad
      sine:        speed U(0.08, 0.2) along a heading, lateral amplitude
                   U(0.1, 0.4), period U(8, 20) frames
      stop_and_go: speed U(0.1, 0.3) with a 3-6 frame standstill after 4-8 frames
    Start points are drawn from U(-1, 1)^2.  "stop-and-go" is accepted as an alias.
    """
    kind = kind.replace("-", "_")
    if kind not in SYNTHETIC_KINDS:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    horizon = history_len + future_len
    windows = []
    for i in range(count):
        positions = _synth_positions(kind, rng, horizon)
        windows.append(TrajectoryWindow(
            history=positions[:history_len],
            future=positions[history_len:],
            delta_t=delta_t,
            scene_id=f"synthetic-{kind}",
            agent_id=i,
        ))
    return windows


def synthesize_mixed(kinds, count: int, seed: int, history_len: int = 8,
                     future_len: int = 12, delta_t: float = 0.4) -> list[TrajectoryWindow]:
    """Round-robin mix of synthetic kinds totalling `count` windows."""
    kinds = list(kinds)
    if not kinds:
        raise ConfigurationError("kinds must be non-empty")
    per_kind = [count // len(kinds)] * len(kinds)
    for i in range(count % len(kinds)):
        per_kind[i] += 1
    windows = []
    for j, (kind, n) in enumerate(zip(kinds, per_kind)):
        if n:
            windows.extend(synthesize(kind, n, seed + j, history_len, future_len, delta_t))
    return windows
