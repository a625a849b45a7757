"""Two-layer ReLU network for the 2D direction-preservation study."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .losses import toy_forward, toy_ssl_loss, toy_sup_loss
from .ndcore import make_rng

_STREAM_INIT, _STREAM_AUG = 0, 1


class ToyTwoLayerNet(TransformerMixin, BaseEstimator):
    """``relu(x W1) W2`` regressed onto one-hot labels by full-batch gradient descent.

    With ``alpha > 0`` the perturbation-consistency term on the target rows is
    added to the squared-error loss. ``transform`` returns ``relu(x W1)``.
    ``ssl_normalize`` compares unit-norm feature views instead of raw ones.
    """

    def __init__(
        self,
        width=8,
        alpha=0.0,
        sigma_aug=0.5,
        ssl_normalize=True,
        steps=3000,
        lr=0.01,
        init_scale=0.5,
        head_scale=0.3,
        random_state=0,
    ):
        self.width = width
        self.alpha = alpha
        self.sigma_aug = sigma_aug
        self.ssl_normalize = ssl_normalize
        self.steps = steps
        self.lr = lr
        self.init_scale = init_scale
        self.head_scale = head_scale
        self.random_state = random_state

    def fit(self, X, y, X_target=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.alpha > 0 and X_target is None:
            raise ValueError("the SSL term needs X_target")
        if self.width < 1 or self.steps < 1 or self.lr <= 0:
            raise ValueError("width and steps must be >= 1 and lr > 0")
        y = y.astype(np.int64)
        self.classes_ = np.unique(y)
        targets = (y[:, None] == self.classes_[None, :]).astype(np.float64)
        Xt = None if X_target is None else check_array(X_target, dtype=np.float64)

        rng_init = make_rng(int(self.random_state), _STREAM_INIT)
        rng_aug = make_rng(int(self.random_state), _STREAM_AUG)
        w1 = self.init_scale * rng_init.standard_normal((X.shape[1], self.width))
        w2 = self.head_scale * rng_init.standard_normal((self.width, len(self.classes_)))
        losses = []
        for _ in range(self.steps):
            l_s, g1, g2 = toy_sup_loss(w1, w2, X, targets)
            l_ssl = 0.0
            if self.alpha > 0:
                l_ssl, g_ssl = toy_ssl_loss(
                    w1, Xt, rng_aug, self.sigma_aug, normalize=self.ssl_normalize
                )
                g1 = g1 + self.alpha * g_ssl
            losses.append((l_s, l_ssl))
            w1 = w1 - self.lr * g1
            w2 = w2 - self.lr * g2
        self.W1_, self.W2_ = w1, w2
        self.n_features_in_ = X.shape[1]
        self.loss_curve_ = np.array(losses)
        return self

    def transform(self, X):
        check_is_fitted(self, "W1_")
        return toy_forward(self.W1_, self.W2_, check_array(X, dtype=np.float64))[1]

    def predict(self, X):
        """Network outputs (one column per class)."""
        check_is_fitted(self, "W1_")
        return toy_forward(self.W1_, self.W2_, check_array(X, dtype=np.float64))[2]

    def score(self, X, y, sample_weight=None):
        """Classification accuracy of the output argmax."""
        pred = self.classes_[self.predict(X).argmax(axis=1)]
        return float(np.mean(pred == np.asarray(y)))

    def feature_image(self, direction, at):
        """Jacobian of ``relu(x W1)`` at point ``at`` applied to ``direction``."""
        check_is_fitted(self, "W1_")
        active = (np.asarray(at, dtype=np.float64) @ self.W1_) > 0
        return (np.asarray(direction, dtype=np.float64) @ self.W1_) * active
