"""Experiment configuration: a single structured document with layered
overrides (defaults < preset < file < environment < command line).

Environment overrides use the ``TRAJREFINE_`` prefix with ``__`` as the section
separator, e.g. ``TRAJREFINE_TRAINING__EPOCHS=50``.  Command-line overrides are
``--set section.field=value`` with YAML-parsed values.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .datasets import (ETH_UCY_COLUMNS, RawScene, TrajectoryWindow, downsample,
                       extract_windows, load_eth_ucy, load_sdd, synthesize_mixed)
from .errors import ConfigurationError
from .goal import GoalConfig, GoalTrainConfig
from .refiner import RefinerConfig
from .training import TrainConfig

ENV_PREFIX = "TRAJREFINE_"


@dataclass
class DatasetSection:
    source: str = "synthetic"            # synthetic | eth_ucy | sdd
    kinds: list = field(default_factory=lambda: ["line", "arc", "sine", "stop_and_go"])
    count: int = 32
    seed: int = 7
    paths: list = field(default_factory=list)
    column_order: list = field(default_factory=lambda: list(ETH_UCY_COLUMNS))
    native_fps: float = 2.5
    target_fps: float = 2.5
    unit: str = "meters"
    train_scenes: list = field(default_factory=list)
    test_scenes: list = field(default_factory=list)
    history_len: int = 8
    future_len: int = 12
    stride: int = 1


@dataclass
class GoalSection:
    embed_dim: int = 64
    heads: int = 8
    layers: int = 1
    ff_dim: int = 2048
    n_modes: int = 20
    dropout: float = 0.0
    stage1_epochs: int = 600
    stage2_epochs: int = 900
    batch_size: int = 512
    lr_init: float = 1e-3
    lr_min: float = 1e-5
    grad_clip: float = 10.0
    checkpoint: str | None = None


@dataclass
class RefinerSection:
    embed_dim: int = 64
    heads: int = 8
    transformer_layers: int = 1
    ff_dim: int = 2048
    granularity_levels: list = field(default_factory=lambda: [10, 4, 2, 1])
    fusion_mode: str = "weight_shared"
    refine_history: bool = True
    velocity_augmentation: bool = True
    dropout: float = 0.0


@dataclass
class TrainingSection:
    batch_size: int = 512
    epochs: int = 500
    lr_init: float = 1e-3
    lr_min: float = 1e-5
    lambda_v: float = 5.0
    loss_mask: str = "future_only"
    modal_reduction: str = "winner_takes_all"
    grad_clip: float = 10.0
    checkpoint_every: int = 0


@dataclass
class PlotSection:
    samples: int = 3
    dpi: int = 120


@dataclass
class AblationSection:
    sweep: str = "granularity"           # granularity | fusion | velocity
    values: list | None = None           # None = the built-in variant set


@dataclass
class ExperimentConfig:
    output_dir: str = "runs/experiment"
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    goal: GoalSection = field(default_factory=GoalSection)
    refiner: RefinerSection = field(default_factory=RefinerSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    plot: PlotSection = field(default_factory=PlotSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    @property
    def horizon(self) -> int:
        return self.dataset.history_len + self.dataset.future_len

    def goal_config(self) -> GoalConfig:
        g = self.goal
        return GoalConfig(embed_dim=g.embed_dim, heads=g.heads, layers=g.layers,
                          ff_dim=g.ff_dim, n_modes=g.n_modes,
                          history_len=self.dataset.history_len, dropout=g.dropout)

    def goal_train_config(self) -> GoalTrainConfig:
        g = self.goal
        return GoalTrainConfig(stage1_epochs=g.stage1_epochs, stage2_epochs=g.stage2_epochs,
                               batch_size=g.batch_size, lr_init=g.lr_init, lr_min=g.lr_min,
                               grad_clip=g.grad_clip, seed=self.seed)

    def refiner_config(self) -> RefinerConfig:
        r = self.refiner
        return RefinerConfig(embed_dim=r.embed_dim, heads=r.heads,
                             transformer_layers=r.transformer_layers, ff_dim=r.ff_dim,
                             granularity_levels=tuple(r.granularity_levels),
                             fusion_mode=r.fusion_mode, refine_history=r.refine_history,
                             velocity_augmentation=r.velocity_augmentation,
                             horizon=self.horizon, history_len=self.dataset.history_len,
                             dropout=r.dropout)

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(batch_size=t.batch_size, epochs=t.epochs, lr_init=t.lr_init,
                           lr_min=t.lr_min, lambda_v=t.lambda_v, loss_mask=t.loss_mask,
                           modal_reduction=t.modal_reduction, grad_clip=t.grad_clip,
                           seed=self.seed, checkpoint_every=t.checkpoint_every)


PRESETS: dict[str, dict] = {
    # Desk-scale profile: synthetic data and small-capacity networks so the
    # full pipeline (goal pretraining, training, evaluation) runs in minutes
    # on one CPU core.
    "desk": {
        "output_dir": "runs/desk",
        "dataset": {"source": "synthetic", "count": 32, "seed": 7},
        "goal": {"embed_dim": 32, "ff_dim": 128, "stage1_epochs": 400, "stage2_epochs": 800},
        "refiner": {"embed_dim": 32, "ff_dim": 128},
        "training": {"epochs": 1500, "lr_init": 2e-3},
    },
    # Micro profile for sweeping many variants quickly; accuracy is not the point.
    "desk_ablate": {
        "output_dir": "runs/desk-ablate",
        "dataset": {"source": "synthetic", "count": 16, "seed": 7},
        "goal": {"embed_dim": 16, "ff_dim": 32, "stage1_epochs": 40, "stage2_epochs": 60},
        "refiner": {"embed_dim": 16, "ff_dim": 32},
        "training": {"epochs": 30},
    },
    # Full-scale profile matching the published hyperparameters; expects real
    # dataset paths and a long GPU-class run.
    "paper": {
        "output_dir": "runs/paper",
        "dataset": {"source": "eth_ucy", "native_fps": 25.0, "target_fps": 2.5},
        "goal": {"stage1_epochs": 100, "stage2_epochs": 200},
        "training": {"batch_size": 512, "epochs": 500},
    },
}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def _merge_into(base: dict, override: dict, trail: str = "") -> None:
    for key, value in override.items():
        where = f"{trail}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config field {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config field {where!r} must be a mapping")
            _merge_into(base[key], value, trail=f"{where}.")
        else:
            base[key] = value


def _set_dotted(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigurationError(f"unknown config field {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigurationError(f"unknown config field {dotted!r}")
    node[parts[-1]] = value


def parse_override(expr: str):
    if "=" not in expr:
        raise ConfigurationError(f"override {expr!r} must look like section.field=value")
    key, raw = expr.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse override value {raw!r}: {exc}") from None
    return key.strip(), value


def env_overrides(env=None) -> list[tuple[str, object]]:
    env = os.environ if env is None else env
    out = []
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower().replace("__", ".")
        out.append((dotted, yaml.safe_load(raw)))
    return out


def _from_tree(tree: dict) -> ExperimentConfig:
    kwargs = {}
    for name, value in tree.items():
        if name in ("dataset", "goal", "refiner", "training", "plot", "ablation"):
            cls = {"dataset": DatasetSection, "goal": GoalSection, "refiner": RefinerSection,
                   "training": TrainingSection, "plot": PlotSection,
                   "ablation": AblationSection}[name]
            kwargs[name] = cls(**value)
        else:
            kwargs[name] = value
    return ExperimentConfig(**kwargs)


def load_config(path=None, preset: str | None = None, overrides=(), env=None) -> ExperimentConfig:
    """Build the experiment configuration from all layers."""
    tree = config_to_dict(ExperimentConfig())
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        _merge_into(tree, copy.deepcopy(PRESETS[preset]))
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} does not exist") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config file {path} is not valid YAML: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must contain a mapping")
        _merge_into(tree, loaded)
    for dotted, value in env_overrides(env):
        _set_dotted(tree, dotted, value)
    for expr in overrides:
        dotted, value = parse_override(expr)
        _set_dotted(tree, dotted, value)
    return _from_tree(tree)


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))
    return path


def _scene_windows(cfg: DatasetSection, scene: RawScene) -> list[TrajectoryWindow]:
    scene = downsample(scene, cfg.target_fps)
    return extract_windows(scene, cfg.history_len, cfg.future_len, cfg.stride)


def build_windows(cfg: DatasetSection):
    """Materialize (train_windows, test_windows) from the dataset section.

    Synthetic data serves both splits (the desk profile overfits on purpose).
    File-backed sources split scene-wise via train_scenes / test_scenes,
    supporting the leave-one-scene-out protocol through configuration.
    """
    if cfg.source == "synthetic":
        windows = synthesize_mixed(cfg.kinds, cfg.count, cfg.seed,
                                   cfg.history_len, cfg.future_len)
        return windows, list(windows)
    if cfg.source not in ("eth_ucy", "sdd"):
        raise ConfigurationError(f"unknown dataset source {cfg.source!r}")
    if not cfg.paths:
        raise ConfigurationError(f"dataset source {cfg.source!r} requires dataset.paths")
    train, test = [], []
    for path in cfg.paths:
        scene_id = Path(path).stem
        if cfg.source == "eth_ucy":
            scene = load_eth_ucy(path, tuple(cfg.column_order), cfg.native_fps,
                                 scene_id=scene_id, unit=cfg.unit)
        else:
            scene = load_sdd(path, cfg.native_fps, scene_id=scene_id)
        windows = _scene_windows(cfg, scene)
        in_train = not cfg.train_scenes or scene_id in cfg.train_scenes
        in_test = scene_id in cfg.test_scenes
        if in_test:
            test.extend(windows)
        elif in_train:
            train.extend(windows)
    if not train:
        raise ConfigurationError("dataset produced no training windows")
    return train, test or list(train)
