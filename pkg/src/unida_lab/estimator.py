"""Scikit-learn style estimator for partial domain alignment with an SSL term."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.cluster import KMeans
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import weighting as wt
from .losses import (
    LossWeights,
    ModelBundle,
    SslConfig,
    WeightedBatch,
    total_objective,
)
from .metrics import RejectionRule, UNKNOWN, noise_rate_from_mask, predict_with_rejection
from .ndcore import init_mlp, make_rng, mlp_forward, sgd_step, softmax
from .synthdata import AugmentConfig

WEIGHTINGS = ("uniform", "oracle") + wt.KINDS

# independent random streams per purpose, so switching one feature off never
# shifts the draws seen by another
_STREAM_INIT, _STREAM_BATCH, _STREAM_AUG, _STREAM_FLIP = range(4)


class NumericAbort(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, components: dict):
        self.step = step
        self.components = components
        super().__init__(f"non-finite loss at step {step}: {components}")


class UniDAClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Adversarial partial domain alignment with an optional target SSL term.

    ``fit`` trains a feature extractor, a label classifier over the source
    classes and a domain discriminator by minimizing
    ``L_s - lambda_adv * L_adv + alpha * L_ssl`` (the discriminator maximizes).
    ``predict`` returns a source class id or ``-1`` for samples the rejection
    rule calls unknown; ``transform`` returns learned features.

    Ground truth about the target (``target_common_mask``) is only consulted for
    ``weighting="oracle"``, ``ssl_on="common"`` and for logging noise rates.
    """

    def __init__(
        self,
        hidden_dim=64,
        feature_dim=32,
        disc_hidden=32,
        lambda_adv=0.5,
        alpha=0.5,
        ssl_variant="stop_grad_one_branch",
        ssl_normalize=False,
        sigma_aug=0.5,
        ssl_on="all",
        weighting="entropy",
        normalization="closed_form",
        flip_rate=0.0,
        centroid_interval=100,
        steps=2000,
        batch_size=32,
        lr=0.01,
        momentum=0.9,
        rejection="entropy_threshold",
        rejection_threshold=None,
        random_state=0,
    ):
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.disc_hidden = disc_hidden
        self.lambda_adv = lambda_adv
        self.alpha = alpha
        self.ssl_variant = ssl_variant
        self.ssl_normalize = ssl_normalize
        self.sigma_aug = sigma_aug
        self.ssl_on = ssl_on
        self.weighting = weighting
        self.normalization = normalization
        self.flip_rate = flip_rate
        self.centroid_interval = centroid_interval
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.rejection = rejection
        self.rejection_threshold = rejection_threshold
        self.random_state = random_state

    def _validate_params(self):
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        if self.ssl_on not in ("all", "common"):
            raise ValueError("ssl_on must be 'all' or 'common'")
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValueError("flip_rate must lie in [0, 1]")
        LossWeights(self.lambda_adv, self.alpha)

    def _init_models(self, dim: int, n_classes: int, rng) -> ModelBundle:
        return ModelBundle(
            init_mlp([dim, self.hidden_dim, self.feature_dim], ["relu", "relu"], rng),
            init_mlp([self.feature_dim, n_classes], ["identity"], rng),
            init_mlp(
                [self.feature_dim, self.disc_hidden, 1], ["relu", "sigmoid"], rng
            ),
        )

    def fit(
        self,
        X_source,
        y_source,
        X_target=None,
        *,
        n_common=None,
        target_common_mask=None,
    ):
        """Train on labeled source rows and unlabeled target rows.

        ``y_source`` ids must be ``0..K-1``; ids below ``n_common`` are the
        common classes (needed for oracle source weights and source noise rates).
        """
        self._validate_params()
        Xs, ys = check_X_y(X_source, y_source, dtype=np.float64)
        ys = ys.astype(np.int64)
        Xt = Xs if X_target is None else check_array(X_target, dtype=np.float64)
        if Xt.shape[1] != Xs.shape[1]:
            raise ValueError(f"source has {Xs.shape[1]} features, target has {Xt.shape[1]}")
        if ys.min() < 0:
            raise ValueError("source labels must be non-negative class ids")
        n_classes = int(ys.max()) + 1
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = Xs.shape[1]
        self.n_common_ = n_classes if n_common is None else int(n_common)

        mask_t = None
        if target_common_mask is not None:
            mask_t = np.asarray(target_common_mask, dtype=bool).reshape(-1)
            if mask_t.shape[0] != Xt.shape[0]:
                raise ValueError("target_common_mask must have one entry per target row")
        if self.weighting == "oracle" and mask_t is None:
            raise ValueError("oracle weighting needs target_common_mask")
        if self.ssl_on == "common" and mask_t is None:
            raise ValueError("ssl_on='common' needs target_common_mask")
        mask_s = ys < self.n_common_

        seed = int(self.random_state)
        rng_init = make_rng(seed, _STREAM_INIT)
        rng_batch = make_rng(seed, _STREAM_BATCH)
        rng_aug = make_rng(seed, _STREAM_AUG)
        rng_flip = make_rng(seed, _STREAM_FLIP)

        models = self._init_models(Xs.shape[1], n_classes, rng_init)
        weights = LossWeights(self.lambda_adv, self.alpha)
        ssl_cfg = SslConfig(
            self.ssl_variant, AugmentConfig(self.sigma_aug), normalize=self.ssl_normalize
        )
        wcfg = None if self.weighting in ("uniform", "oracle") else wt.WeightConfig(
            self.weighting, self.normalization
        )
        vel = {"feature": None, "classifier": None, "discriminator": None}
        bank = tgt_bank = None
        history = []
        bs = self.batch_size

        for step in range(self.steps):
            i_s = rng_batch.integers(0, Xs.shape[0], size=bs)
            i_t = rng_batch.integers(0, Xt.shape[0], size=bs)
            xs, yb, xt = Xs[i_s], ys[i_s], Xt[i_t]

            try:
                w_s, w_t, bank, tgt_bank = self._batch_weights(
                    models, xs, xt, i_s, i_t, mask_s, mask_t, wcfg, rng_flip, bank, tgt_bank,
                    (Xs, ys, Xt, n_classes, step, seed),
                )
                ssl_mask = mask_t[i_t] if self.ssl_on == "common" else None
                batch = WeightedBatch(xs, yb, xt, w_s, w_t, ssl_mask)
                res = total_objective(batch, models, weights, ssl_cfg, rng_aug)
            except FloatingPointError as exc:
                raise NumericAbort(step, {"error": str(exc)}) from exc
            if not all(np.isfinite(v) for v in res.components.values()):
                raise NumericAbort(step, res.components)

            f, vel["feature"] = sgd_step(models.feature, res.feature, self.lr, self.momentum, vel["feature"])
            c, vel["classifier"] = sgd_step(
                models.classifier, res.classifier, self.lr, self.momentum, vel["classifier"]
            )
            d, vel["discriminator"] = sgd_step(
                models.discriminator, res.discriminator, self.lr, self.momentum, vel["discriminator"]
            )
            models = ModelBundle(f, c, d)

            rec = {"step": step, **res.components}
            rec["noise_src"] = noise_rate_from_mask(w_s, mask_s[i_s])
            if mask_t is not None:
                rec["noise_tgt"] = noise_rate_from_mask(w_t, mask_t[i_t])
                rec["noise_pool"] = noise_rate_from_mask(
                    np.concatenate([w_s, w_t]), np.concatenate([mask_s[i_s], mask_t[i_t]])
                )
            else:
                rec["noise_tgt"] = rec["noise_pool"] = float("nan")
            history.append(rec)

        self.models_ = models
        self.history_ = history
        return self

    def _batch_weights(self, models, xs, xt, i_s, i_t, mask_s, mask_t, wcfg, rng_flip, bank, tgt_bank, ctx):
        """Source and target alignment weights for one batch (and the refreshed banks)."""
        bs = xs.shape[0]
        if self.weighting == "oracle":
            w_s = wt.inject_flip_noise(mask_s[i_s].astype(float), self.flip_rate, rng_flip)
            w_t = wt.inject_flip_noise(mask_t[i_t].astype(float), self.flip_rate, rng_flip)
        elif self.weighting == "uniform":
            w_s = w_t = np.ones(bs)
        elif self.weighting == "distance":
            step = ctx[4]
            if bank is None or step - bank.last_update >= bank.update_interval:
                bank, tgt_bank = self._refresh_banks(models, *ctx)
            ft, _ = mlp_forward(models.feature, xt)
            fs, _ = mlp_forward(models.feature, xs)
            w_t = wt.to_weight(wt.distance_uncertainty(ft, bank), wcfg)
            w_s = wt.to_weight(wt.distance_uncertainty(fs, tgt_bank), wcfg)
        else:
            probs = models.predict_proba(xt)
            w_t = wt.to_weight(wt.scores_for(self.weighting, probs), wcfg, ctx[3])
            w_s = np.ones(bs)
        return w_s, w_t, bank, tgt_bank

    def _refresh_banks(self, models, Xs, ys, Xt, n_classes, step, seed):
        fs, _ = mlp_forward(models.feature, Xs)
        ft, _ = mlp_forward(models.feature, Xt)
        bank = wt.init_centroids(fs, ys, n_classes, update_interval=self.centroid_interval, step=step)
        km = KMeans(n_clusters=min(n_classes, ft.shape[0]), n_init=1, random_state=seed).fit(ft)
        tgt_bank = wt.CentroidBank(km.cluster_centers_, self.centroid_interval, step)
        return bank, tgt_bank

    def predict_proba(self, X):
        check_is_fitted(self, "models_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.models_.predict_proba(X)

    def decision_function(self, X):
        check_is_fitted(self, "models_")
        feats = self.transform(X)
        logits, _ = mlp_forward(self.models_.classifier, feats)
        return logits

    def predict(self, X):
        """Class ids, with ``-1`` for rows the rejection rule marks unknown."""
        return predict_with_rejection(self.predict_proba(X), self.rejection_rule_)

    def transform(self, X):
        check_is_fitted(self, "models_")
        X = check_array(X, dtype=np.float64)
        feats, _ = mlp_forward(self.models_.feature, X)
        return feats

    @property
    def rejection_rule_(self) -> RejectionRule:
        return RejectionRule(self.rejection, self.rejection_threshold)


__all__ = ["UniDAClassifier", "NumericAbort", "UNKNOWN", "softmax"]
