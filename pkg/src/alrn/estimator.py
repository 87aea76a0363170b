"""scikit-learn compatible wrapper around the attribute localization head."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .evaluator import (
    GzslConfig,
    SplitSpec,
    czsl_predict,
    evaluate,
    gzsl_scores,
    predict_batch,
)
from .model import ModelConfig
from .objective import LossConfig
from .trainer import TrainConfig, train


def check_feature_maps(X, n_channels=None):
    """Validate a stack of feature grids shaped ``(n_samples, C, H, W)``."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True)
    if X.ndim != 4:
        raise ValueError(f"expected feature maps of shape (n_samples, C, H, W), got {X.shape}")
    if n_channels is not None and X.shape[1] != n_channels:
        raise ValueError(f"X has {X.shape[1]} channels, estimator was fitted with {n_channels}")
    return X


def check_semantics(semantics):
    S = check_array(semantics, dtype=np.float64)
    return S


class ALRNClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Zero-shot classifier over class attribute vectors.

    ``semantics`` holds one column per class (attributes x classes). ``fit``
    sees seen-class images only; ``predict`` ranks every class in
    ``seen_classes`` and ``unseen_classes`` with calibrated stacking, and
    ``transform`` returns the fused attribute predictions.

    Parameters mirror the training and model configuration; ``random_state``
    seeds both initialization and episode sampling.
    """

    def __init__(self, semantics=None, seen_classes=None, unseen_classes=None, *,
                 tau=20.0, lam=1.0, mu=0.0, n_pre=5, epochs=20, batches_per_epoch=300,
                 n_way=16, k_shot=2, learning_rate=0.001, momentum=0.9,
                 weight_decay=1e-5, use_scu=True, use_global=True, use_arm=True,
                 revision_activation="sigmoid", adapter="identity",
                 feature_channels=None, random_state=0):
        self.semantics = semantics
        self.seen_classes = seen_classes
        self.unseen_classes = unseen_classes
        self.tau = tau
        self.lam = lam
        self.mu = mu
        self.n_pre = n_pre
        self.epochs = epochs
        self.batches_per_epoch = batches_per_epoch
        self.n_way = n_way
        self.k_shot = k_shot
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.use_scu = use_scu
        self.use_global = use_global
        self.use_arm = use_arm
        self.revision_activation = revision_activation
        self.adapter = adapter
        self.feature_channels = feature_channels
        self.random_state = random_state

    def _split(self, y=None):
        seen = self.seen_classes
        if seen is None:
            seen = np.unique(y)
        unseen = self.unseen_classes
        if unseen is None:
            unseen = sorted(set(range(self.semantics_.shape[1])) - set(int(c) for c in seen))
        return SplitSpec(seen, unseen)

    def fit(self, X, y):
        if self.semantics is None:
            raise ValueError("semantics (attributes x classes) is required")
        self.semantics_ = check_semantics(self.semantics)
        X = check_feature_maps(X)
        y = np.asarray(y, dtype=np.int64)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        self.split_ = self._split(y)
        stray = set(np.unique(y).tolist()) - set(self.split_.seen)
        if stray:
            raise ValueError(f"training labels {sorted(stray)} are not seen classes")
        self.n_features_in_ = X.shape[1]
        self.model_config_ = ModelConfig(
            num_attributes=self.semantics_.shape[0],
            feature_channels=self.feature_channels or X.shape[1],
            input_channels=X.shape[1],
            use_scu=self.use_scu, use_global=self.use_global, use_arm=self.use_arm,
            revision_activation=self.revision_activation, adapter=self.adapter,
        )
        cfg = TrainConfig(
            model_cfg=self.model_config_, loss_cfg=LossConfig(self.tau, self.lam),
            n_pre=self.n_pre, epochs_total=self.epochs,
            batches_per_epoch=self.batches_per_epoch, n_way=self.n_way, k_shot=self.k_shot,
            learning_rate=self.learning_rate, momentum=self.momentum,
            weight_decay=self.weight_decay, seed=self.random_state,
        )
        self.params_, self.train_log_ = train(X, y, self.semantics_, self.split_.seen, cfg)
        self.classes_ = np.asarray(self.split_.all_classes)
        return self

    def _forward(self, X):
        check_is_fitted(self, "params_")
        X = check_feature_maps(X, self.n_features_in_)
        return predict_batch(X, self.params_, self.semantics_, self.model_config_)

    def transform(self, X):
        """Fused attribute predictions, shape ``(n_samples, n_attributes)``."""
        return self._forward(X)[0]

    def decision_function(self, X):
        """Calibrated class scores over ``classes_``."""
        phi, revised = self._forward(X)
        scores, _ = gzsl_scores(phi, revised, self.split_, GzslConfig(self.mu, self.tau))
        return scores

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def predict_unseen(self, X):
        """Conventional zero-shot prediction restricted to unseen classes."""
        phi, revised = self._forward(X)
        return czsl_predict(phi, revised, self.split_)

    def evaluate(self, X, y):
        check_is_fitted(self, "params_")
        X = check_feature_maps(X, self.n_features_in_)
        return evaluate(X, y, self.params_, self.semantics_, self.split_,
                        self.model_config_, GzslConfig(self.mu, self.tau))

    def score(self, X, y, sample_weight=None):
        """Harmonic mean of per-class seen and unseen accuracy, in percent."""
        return self.evaluate(X, y).H
