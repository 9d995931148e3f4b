"""Scikit-learn style wrapper around the embedding network.

``SpeakerEmbedder`` is a transformer: ``fit(X, y)`` trains the classifier
on labeled utterances, ``transform(X)`` returns speaker embeddings,
``predict(X)`` returns speaker labels. ``X`` is (n, C, F, T) or (n, F, T)
(a singleton channel axis is added).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import train as training
from .autodiff import Tensor
from .errors import DataError, ShapeError
from .network import NetworkConfig, build
from .norm import NoiseMode
from .rng import substream


def validate_features(X, in_freq: int | None = None) -> np.ndarray:
    """Coerce to a finite float64 (n, C, F, T) array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise ShapeError(f"expected (n, C, F, T) or (n, F, T) input, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("input features contain non-finite values")
    if in_freq is not None and X.shape[2] != in_freq:
        raise ShapeError(f"expected F={in_freq}, got F={X.shape[2]}")
    return X


class SpeakerEmbedder(BaseEstimator, TransformerMixin):
    """Trainable speaker-embedding transformer with pluggable normalization."""

    def __init__(self, norm_variant="bwrfn", insertion_points=("pre-conv",),
                 channels=(4, 8, 16, 32), embedding_dim=32, lam=0.5,
                 epsilon=1e-5, epochs=10, batch_size=32, lr_init=0.1,
                 momentum=0.9, weight_decay=1e-4, lr_decay_factor=0.1,
                 lr_decay_every_epochs=10, mc_samples=1,
                 kl_scale_mode="per-example", random_state=0):
        self.norm_variant = norm_variant
        self.insertion_points = insertion_points
        self.channels = channels
        self.embedding_dim = embedding_dim
        self.lam = lam
        self.epsilon = epsilon
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_init = lr_init
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_decay_factor = lr_decay_factor
        self.lr_decay_every_epochs = lr_decay_every_epochs
        self.mc_samples = mc_samples
        self.kl_scale_mode = kl_scale_mode
        self.random_state = random_state

    def fit(self, X, y):
        X = validate_features(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise DataError(f"{len(X)} utterances but {len(y)} labels")
        self.classes_, labels = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise DataError("need utterances from at least 2 speakers")
        config = NetworkConfig(
            num_speakers=len(self.classes_),
            in_freq=X.shape[2],
            in_channels=X.shape[1],
            norm_variant=self.norm_variant,
            insertion_points=tuple(self.insertion_points),
            channels=tuple(self.channels),
            embedding_dim=self.embedding_dim,
            lam=self.lam,
            epsilon=self.epsilon,
        )
        cfg = training.TrainConfig(
            epochs=self.epochs,
            batch_size=min(self.batch_size, len(X)),
            lr_init=self.lr_init,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lr_decay_factor=self.lr_decay_factor,
            lr_decay_every_epochs=self.lr_decay_every_epochs,
            mc_samples=self.mc_samples,
            kl_scale_mode=self.kl_scale_mode,
            seed=self.random_state,
        )
        self.net_ = build(config, substream(self.random_state, "init"))
        self.train_log_ = training.train(self.net_, X, labels, cfg)
        self.n_features_in_ = X.shape[2]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        X = validate_features(X, in_freq=self.net_.config.in_freq)
        return self.net_.extract_embedding(Tensor(X), NoiseMode.mean())

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = validate_features(X, in_freq=self.net_.config.in_freq)
        logits = self.net_.forward_logits(Tensor(X), NoiseMode.mean()).data
        return self.classes_[logits.argmax(axis=1)]
