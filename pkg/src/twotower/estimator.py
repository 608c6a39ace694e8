"""scikit-learn compatible wrapper around the two-tower network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_depth_target, check_stereo_batch, unpack_samples
from .data import split
from .model import ModelConfig, build
from .train import TrainConfig, mean_l1, predict, train


class TwoTowerDepthEstimator(RegressorMixin, BaseEstimator):
    """Stereo depth regressor.

    ``X`` is a packed N x 7 x H x W batch: left RGB, right RGB, then the depth
    clue. With ``clue_enabled=False`` the clue channel (if present) is ignored
    and the primary tower sees the left image alone. ``y`` is the normalized
    ground-truth depth, N x 1 x H x W or N x H x W.

    When ``validation_fraction`` is positive a held-out split picks the best
    epoch; otherwise the weights after the last epoch are kept.
    """

    def __init__(
        self,
        levels=3,
        base_channels=8,
        clue_enabled=True,
        epochs=15,
        lr=1e-3,
        batch_size=4,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        validation_fraction=0.0,
        random_state=0,
    ):
        self.levels = levels
        self.base_channels = base_channels
        self.clue_enabled = clue_enabled
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            seed=self.random_state,
            clue_enabled=self.clue_enabled,
        )

    def _samples(self, X, y=None):
        X = check_stereo_batch(X, self.levels)
        if self.clue_enabled and X.shape[1] != 7:
            raise ValueError("clue_enabled=True needs a 7-channel input (left RGB, right RGB, clue)")
        if y is not None:
            y = check_depth_target(y, X)
        return unpack_samples(X, y)

    def fit(self, X, y):
        samples = self._samples(X, y)
        config = self._train_config()
        model = build(
            ModelConfig(self.levels, self.base_channels, in_primary=4 if self.clue_enabled else 3),
            self.random_state,
        )
        val = []
        if self.validation_fraction > 0:
            samples, val = split(samples, 1.0 - self.validation_fraction, self.random_state)
        result = train(model, samples, val, config)
        self.params_ = result.best if val else result.params
        self.loss_curve_ = result.curve
        self.input_shape_ = samples[0].size
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        samples = self._samples(X)
        return np.stack(predict(self.params_, samples))

    def score(self, X, y, sample_weight=None):
        """Negative mean absolute depth error (higher is better)."""
        check_is_fitted(self, "params_")
        return -mean_l1(self.params_, self._samples(X, y))
