"""Scikit-learn style estimator facade.

``MgtClassifier`` wraps model construction and the training loop behind
fit/predict/score so the classifier composes with sklearn pipelines and
model selection utilities.  X is an array of shape (n_objects, n_points,
channels) with channels 3 (xyz) or 6 (xyz + normal).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .attention import AttentionConfig
from .errors import ConfigError
from .geometry import PointCloud, ScaleConfig, normalize
from .model import MgtModel, ModelConfig, predict as predict_cloud
from .training import AugmentConfig, TrainConfig, load_state, train


def validate_cloud_array(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ConfigError("X must have shape (n_objects, n_points, channels)")
    if X.shape[2] not in (3, 6):
        raise ConfigError("channels must be 3 or 6")
    if not np.all(np.isfinite(X)):
        raise ConfigError("X must be finite")
    return X


class MgtClassifier(BaseEstimator, ClassifierMixin):
    """Point-cloud classifier with geodesic self-attention over multi-scale
    patch embeddings."""

    def __init__(self, scales=((16, 16), (32, 8)), d_out=128, depth=2,
                 mlp_ratio=4, pos_hidden=128, attention="geodesic", blocks=1,
                 temperature=1.0, use_sphere_map=True, use_mrc=True,
                 epochs=30, batch_size=4, lr0=0.005, momentum=0.9,
                 weight_decay=1e-4, smoothing=0.2, test_fraction=0.25,
                 seed=0):
        self.scales = scales
        self.d_out = d_out
        self.depth = depth
        self.mlp_ratio = mlp_ratio
        self.pos_hidden = pos_hidden
        self.attention = attention
        self.blocks = blocks
        self.temperature = temperature
        self.use_sphere_map = use_sphere_map
        self.use_mrc = use_mrc
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.smoothing = smoothing
        self.test_fraction = test_fraction
        self.seed = seed

    def _clouds(self, X, y=None) -> list[PointCloud]:
        X = validate_cloud_array(X)
        labels = np.zeros(len(X), dtype=int) if y is None else np.asarray(y)
        return [normalize(PointCloud(pts, int(lbl))) for pts, lbl in zip(X, labels)]

    def fit(self, X, y):
        y = np.asarray(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ConfigError("need at least two classes")
        clouds = self._clouds(X, encoded)

        model_config = ModelConfig(
            scales=ScaleConfig(tuple(self.scales)),
            num_classes=len(self.classes_), c_in=clouds[0].channels,
            d_out=self.d_out, depth=self.depth, mlp_ratio=self.mlp_ratio,
            pos_hidden=self.pos_hidden,
            attention=AttentionConfig(kind=self.attention, blocks=self.blocks,
                                      temperature=self.temperature),
            use_sphere_map=self.use_sphere_map, use_mrc=self.use_mrc)
        self.model_ = MgtModel(model_config, seed=self.seed)

        # hold out a class-stratified slice to drive best-checkpoint retention
        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(clouds))
        n_val = max(int(self.test_fraction * len(clouds)), 1)
        val = [clouds[i] for i in order[:n_val]]
        fit_clouds = [clouds[i] for i in order[n_val:]] or clouds

        result = train(self.model_, fit_clouds, val, TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, lr0=self.lr0,
            momentum=self.momentum, weight_decay=self.weight_decay,
            smoothing=self.smoothing, aug=AugmentConfig(), seed=self.seed))
        load_state(self.model_, result["best_state"])
        self.history_ = result["history"]
        self.best_score_ = result["best_oa"]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        clouds = self._clouds(X)
        return np.stack([predict_cloud(c, self.model_, seed=None)[1]
                         for c in clouds])

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
