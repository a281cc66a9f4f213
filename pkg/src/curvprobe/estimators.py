"""scikit-learn style wrappers around the model zoo and the curvedness probe."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .directions import DirectionMode
from .trainer import TrainConfig, train
from .trajectory import trajectories
from .zoo import ArchConfig, Classifier, build_model, outputs, softmax_np


def check_images(X, channels: int | None = None) -> np.ndarray:
    """Validate an (N, C, H, W) image batch with values in [0, 1]; returns float32."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4 or X.shape[2] != X.shape[3]:
        raise ValueError(f"expected square images of shape (N, C, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if channels is not None and X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got {X.shape[1]}")
    if not np.all(np.isfinite(X)) or X.min() < 0 or X.max() > 1:
        raise ValueError("image values must be finite and lie in [0, 1]")
    return X


def check_labels(y, n: int, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return y


class NetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Train one of the zoo architectures with the estimator interface.

    ``transform`` returns the penultimate features.
    """

    def __init__(self, arch: str = "cnn", epochs: int = 60, batch_size: int = 64, lr: float = 5e-4,
                 weight_decay: float = 0.05, optimizer: str = "adamw", num_classes: int = 10, seed: int = 0):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.num_classes = num_classes
        self.seed = seed

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, len(X), self.num_classes)
        config = ArchConfig.for_dataset(self.arch, X.shape[1], X.shape[2], self.num_classes)
        model = build_model(config, self.seed)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                          weight_decay=self.weight_decay, optimizer=self.optimizer, seed=self.seed,
                          ckpt_every=max(self.epochs, 1), track_n=0)
        res = train(model, Dataset(X, y, num_classes=self.num_classes), cfg, track_theta=False)
        self.model_ = res.model
        self.loss_curve_ = list(res.history)
        self.classes_ = np.arange(self.num_classes)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    @classmethod
    def from_model(cls, model: Classifier) -> "NetClassifier":
        est = cls(arch=model.arch, num_classes=model.num_classes)
        est.model_ = model
        est.classes_ = np.arange(model.num_classes)
        est.n_features_in_ = model.config.input_dim
        return est

    def _check(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return check_images(X, self.model_.config.in_channels)

    def decision_function(self, X) -> np.ndarray:
        X = self._check(X)
        return outputs(self.model_, X)[0].astype(np.float64)

    def predict_proba(self, X) -> np.ndarray:
        return softmax_np(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def transform(self, X) -> np.ndarray:
        X = self._check(X)
        return outputs(self.model_, X)[1]


class CurvednessProfiler(TransformerMixin, BaseEstimator):
    """Maps labeled images to (theta_1, total_turn, repr_distance) rows for a fixed model.

    ``y`` must be passed to :meth:`transform`, since directions depend on the
    label. Misclassified samples yield nan rows.
    """

    def __init__(self, model: Classifier | None = None, mode: str = "fgsm", n_steps: int = 50, step: float = 0.002,
                 eps_r: float = 0.05, seed: int = 0):
        self.model = model
        self.mode = mode
        self.n_steps = n_steps
        self.step = step
        self.eps_r = eps_r
        self.seed = seed

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("CurvednessProfiler needs a model")
        self.mode_ = DirectionMode(self.mode, self.eps_r, self.seed)
        self.n_features_in_ = self.model.config.input_dim
        return self

    def transform(self, X, y=None) -> np.ndarray:
        check_is_fitted(self, "mode_")
        if y is None:
            raise ValueError("labels are required to build travel directions")
        X = check_images(X, self.model.config.in_channels)
        y = check_labels(y, len(X), self.model.num_classes)
        recs, _ = trajectories(self.model, X, y, [self.mode_], self.n_steps, self.step)
        out = np.full((len(X), 3), np.nan)
        for r in recs:
            out[r.sample_id] = (r.theta1, r.total_turn, r.repr_distance)
        return out
