"""scikit-learn style facade over the full pipeline.

``TrajectoryForecaster.fit`` pretrains the goal predictor and trains the
refinement stack on full trajectories; ``predict`` returns the N candidate
future tracks for new histories.  Parameters follow the sklearn convention
(stored verbatim, ``get_params``/``set_params`` inherited), so the estimator
composes with model selection and pipeline tooling.
"""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .datasets import TrajectoryWindow
from .errors import ConfigurationError
from .evaluation import evaluate_model
from .goal import GoalConfig, GoalPredictor, GoalTrainConfig, pretrain
from .proposal import proposal_batch
from .refiner import RefinementStack, RefinerConfig
from .training import TrainConfig, train_refiner


def _as_windows(X, history_len: int, future_len: int, delta_t: float) -> list[TrajectoryWindow]:
    """Accept a list of TrajectoryWindow or an (n, T, 2) array of full tracks."""
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], TrajectoryWindow):
        return list(X)
    arr = np.asarray(X, dtype=np.float64)
    horizon = history_len + future_len
    if arr.ndim != 3 or arr.shape[1] != horizon or arr.shape[2] != 2:
        raise ConfigurationError(
            f"X must be a list of TrajectoryWindow or an (n, {horizon}, 2) array, "
            f"got shape {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ConfigurationError("X contains non-finite values")
    return [
        TrajectoryWindow(history=track[:history_len].copy(), future=track[history_len:].copy(),
                         delta_t=delta_t, scene_id="array", agent_id=i)
        for i, track in enumerate(arr)
    ]


def _check_histories(X, history_len: int) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != history_len or arr.shape[2] != 2:
        raise ConfigurationError(
            f"histories must have shape (n, {history_len}, 2), got {arr.shape}"
        )
    if not np.isfinite(arr).all():
        raise ConfigurationError("histories contain non-finite values")
    return arr


class TrajectoryForecaster(BaseEstimator):
    """Goal-guided multimodal trajectory forecaster with granular refinement.

    Parameters mirror the pipeline configuration; see the package README for
    their meaning.  ``fit`` expects full trajectories (history plus future),
    ``predict`` maps (n, history_len, 2) histories to (n, n_modes, future_len, 2)
    candidate futures in the input coordinate frame.
    """

    def __init__(self, granularity_levels=(10, 4, 2, 1), fusion_mode="weight_shared",
                 n_modes=20, embed_dim=64, heads=8, ff_dim=2048, transformer_layers=1,
                 lambda_v=5.0, loss_mask="future_only", modal_reduction="winner_takes_all",
                 velocity_augmentation=True, refine_history=True, history_len=8,
                 future_len=12, delta_t=0.4, goal_stage1_epochs=200, goal_stage2_epochs=300,
                 epochs=400, batch_size=512, lr_init=1e-3, lr_min=1e-5, grad_clip=10.0,
                 seed=0):
        self.granularity_levels = granularity_levels
        self.fusion_mode = fusion_mode
        self.n_modes = n_modes
        self.embed_dim = embed_dim
        self.heads = heads
        self.ff_dim = ff_dim
        self.transformer_layers = transformer_layers
        self.lambda_v = lambda_v
        self.loss_mask = loss_mask
        self.modal_reduction = modal_reduction
        self.velocity_augmentation = velocity_augmentation
        self.refine_history = refine_history
        self.history_len = history_len
        self.future_len = future_len
        self.delta_t = delta_t
        self.goal_stage1_epochs = goal_stage1_epochs
        self.goal_stage2_epochs = goal_stage2_epochs
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_init = lr_init
        self.lr_min = lr_min
        self.grad_clip = grad_clip
        self.seed = seed

    def _require_fitted(self):
        if not hasattr(self, "stack_"):
            raise NotFittedError("this TrajectoryForecaster is not fitted yet; call fit first")

    def fit(self, X, y=None):
        """Pretrain the goal predictor and train the refinement stack on X."""
        windows = _as_windows(X, self.history_len, self.future_len, self.delta_t)
        torch.manual_seed(self.seed)
        self.goal_model_ = GoalPredictor(GoalConfig(
            embed_dim=self.embed_dim, heads=self.heads, ff_dim=self.ff_dim,
            n_modes=self.n_modes, history_len=self.history_len))
        pretrain(self.goal_model_, windows, GoalTrainConfig(
            stage1_epochs=self.goal_stage1_epochs, stage2_epochs=self.goal_stage2_epochs,
            batch_size=self.batch_size, lr_init=self.lr_init, lr_min=self.lr_min,
            grad_clip=self.grad_clip, seed=self.seed))
        torch.manual_seed(self.seed + 1)
        self.stack_ = RefinementStack(RefinerConfig(
            embed_dim=self.embed_dim, heads=self.heads,
            transformer_layers=self.transformer_layers, ff_dim=self.ff_dim,
            granularity_levels=tuple(self.granularity_levels), fusion_mode=self.fusion_mode,
            refine_history=self.refine_history,
            velocity_augmentation=self.velocity_augmentation,
            horizon=self.history_len + self.future_len, history_len=self.history_len))
        self.train_summary_ = train_refiner(windows, self.goal_model_, self.stack_, TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, lr_init=self.lr_init,
            lr_min=self.lr_min, lambda_v=self.lambda_v, loss_mask=self.loss_mask,
            modal_reduction=self.modal_reduction, grad_clip=self.grad_clip, seed=self.seed))
        return self

    def predict(self, X) -> np.ndarray:
        """(n, history_len, 2) histories -> (n, n_modes, future_len, 2) futures."""
        self._require_fitted()
        histories = _check_histories(X, self.history_len)
        offsets = histories[:, -1]
        normalized = histories - offsets[:, None]
        with torch.no_grad():
            hist_t = torch.as_tensor(normalized, dtype=torch.float32)
            goals = self.goal_model_.predict_goals(hist_t)
            channels = self.stack_.cfg.channels
            if channels == 4:
                vel = np.empty_like(normalized)
                vel[:, 1:] = normalized[:, 1:] - normalized[:, :-1]
                vel[:, 0] = vel[:, 1]
                hist_state = np.concatenate([normalized, vel], axis=2)
            else:
                hist_state = normalized
            props = proposal_batch(hist_state, goals.numpy().astype(np.float64),
                                   self.stack_.cfg.horizon)
            b, n = goals.shape[:2]
            bundle = self.stack_(
                torch.as_tensor(props, dtype=torch.float32).reshape(b * n, -1, channels),
                goals.reshape(b * n, 2))
            pred = bundle.final.reshape(b, n, self.stack_.cfg.horizon, channels)
        future = pred[:, :, self.history_len:, :2].numpy().astype(np.float64)
        return future + offsets[:, None, None, :]

    def score(self, X, y) -> float:
        """Negative mean best-of-N ADE of predictions for histories X vs futures y."""
        preds = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (preds.shape[0], self.future_len, 2):
            raise ConfigurationError(
                f"y must have shape (n, {self.future_len}, 2), got {y.shape}"
            )
        dist = np.linalg.norm(preds - y[:, None], axis=-1)
        return -float(dist.mean(axis=-1).min(axis=1).mean())

    def evaluate(self, X):
        """Full metric report (best-of-N ADE/FDE plus per-stage attribution)."""
        self._require_fitted()
        windows = _as_windows(X, self.history_len, self.future_len, self.delta_t)
        return evaluate_model(self.goal_model_, self.stack_, windows)
