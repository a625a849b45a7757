"""Training objectives and their analytic gradients.

Every loss returns its scalar together with the gradient of that scalar with
respect to the loss inputs, so callers can chain into :func:`mlp_backward`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndcore import (
    GradBundle,
    MlpParams,
    as_matrix,
    grad_reverse,
    mlp_backward,
    mlp_forward,
    softmax,
)
from .synthdata import AugmentConfig, augment

CLAMP = 1e-7
SSL_VARIANTS = ("plain_l2", "stop_grad_one_branch")


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.5
    alpha: float = 0.5

    def __post_init__(self):
        if self.lam < 0 or self.alpha < 0:
            raise ValueError(f"loss weights must be >= 0, got lam={self.lam}, alpha={self.alpha}")


@dataclass
class ModelBundle:
    """Feature extractor, label classifier and domain discriminator."""

    feature: MlpParams
    classifier: MlpParams
    discriminator: MlpParams

    def __post_init__(self):
        if self.feature.out_dim != self.classifier.in_dim:
            raise ValueError("feature extractor output does not match classifier input")
        if self.feature.out_dim != self.discriminator.in_dim:
            raise ValueError("feature extractor output does not match discriminator input")
        if self.discriminator.out_dim != 1 or self.discriminator.layers[-1].activation != "sigmoid":
            raise ValueError("discriminator must end in a single sigmoid unit")

    def copy(self) -> "ModelBundle":
        return ModelBundle(self.feature.copy(), self.classifier.copy(), self.discriminator.copy())

    def predict_proba(self, x) -> np.ndarray:
        feats, _ = mlp_forward(self.feature, x)
        logits, _ = mlp_forward(self.classifier, feats)
        return softmax(logits)


@dataclass
class WeightedBatch:
    source_x: np.ndarray
    source_y: np.ndarray
    target_x: np.ndarray
    w_source: np.ndarray
    w_target: np.ndarray
    # rows of target_x that receive the SSL term; None means all of them
    ssl_mask: np.ndarray | None = None

    def __post_init__(self):
        self.source_x = as_matrix(self.source_x, "source_x")
        self.target_x = as_matrix(self.target_x, "target_x")
        self.source_y = np.asarray(self.source_y, dtype=np.int64).reshape(-1)
        self.w_source = np.asarray(self.w_source, dtype=np.float64).reshape(-1)
        self.w_target = np.asarray(self.w_target, dtype=np.float64).reshape(-1)
        if self.source_y.shape[0] != self.source_x.shape[0]:
            raise ValueError("source_y length must match source_x rows")
        if self.w_source.shape[0] != self.source_x.shape[0]:
            raise ValueError("w_source length must match source_x rows")
        if self.w_target.shape[0] != self.target_x.shape[0]:
            raise ValueError("w_target length must match target_x rows")
        for name in ("w_source", "w_target"):
            w = getattr(self, name)
            if np.any(w < 0) or np.any(w > 1):
                raise ValueError(f"{name} entries must lie in [0, 1]")
        if self.ssl_mask is not None:
            self.ssl_mask = np.asarray(self.ssl_mask, dtype=bool).reshape(-1)
            if self.ssl_mask.shape[0] != self.target_x.shape[0]:
                raise ValueError("ssl_mask length must match target_x rows")


def source_ce_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient ``(softmax - onehot) / n``."""
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} logit rows")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label ids must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(n), labels] - log_z
    loss = float(-log_p.mean())
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def adv_alignment_loss(d_source, d_target, w_s, w_t) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted domain BCE: ``-mean(w_s log d_s) - mean(w_t log(1 - d_t))``.

    Discriminator outputs are clamped to ``[1e-7, 1 - 1e-7]``; clamped entries
    get zero gradient. Returned gradients are w.r.t. the (unclamped) outputs.
    """
    d_s = np.asarray(d_source, dtype=np.float64).reshape(-1)
    d_t = np.asarray(d_target, dtype=np.float64).reshape(-1)
    w_s = np.asarray(w_s, dtype=np.float64).reshape(-1)
    w_t = np.asarray(w_t, dtype=np.float64).reshape(-1)
    if w_s.shape != d_s.shape or w_t.shape != d_t.shape:
        raise ValueError(
            f"weights {w_s.shape}/{w_t.shape} do not match outputs {d_s.shape}/{d_t.shape}"
        )
    cs = np.clip(d_s, CLAMP, 1.0 - CLAMP)
    ct = np.clip(d_t, CLAMP, 1.0 - CLAMP)
    ns, nt = len(d_s), len(d_t)
    loss = float(-(w_s * np.log(cs)).sum() / ns - (w_t * np.log1p(-ct)).sum() / nt)
    g_s = np.where(cs == d_s, -w_s / (cs * ns), 0.0)
    g_t = np.where(ct == d_t, w_t / ((1.0 - ct) * nt), 0.0)
    return loss, g_s, g_t


def ssl_loss(view1, view2, variant: str = "stop_grad_one_branch"):
    """Mean squared distance between two feature views.

    ``plain_l2`` differentiates both branches. ``stop_grad_one_branch`` averages
    the two orderings in which one branch is held constant, which halves each
    branch's gradient; the reported scalar is the same in both variants.
    """
    v1 = as_matrix(view1, "view1")
    v2 = as_matrix(view2, "view2")
    if v1.shape != v2.shape:
        raise ValueError(f"view shapes differ: {v1.shape} vs {v2.shape}")
    if variant not in SSL_VARIANTS:
        raise ValueError(f"unknown SSL variant {variant!r}")
    n = v1.shape[0]
    diff = v1 - v2
    loss = float((diff**2).sum() / n)
    scale = 2.0 if variant == "plain_l2" else 1.0
    g1 = scale * diff / n
    return loss, g1, -g1


def l2_normalize(z, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize ``z``; also returns the row norms (offset by ``eps``)."""
    norms = np.linalg.norm(z, axis=1, keepdims=True) + eps
    return z / norms, norms


def l2_normalize_backward(u: np.ndarray, norms: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. normalized rows back to the raw rows."""
    return (grad_u - np.sum(grad_u * u, axis=1, keepdims=True) * u) / norms


@dataclass(frozen=True)
class SslConfig:
    """SSL settings. ``normalize`` compares unit-norm views (SimSiam's cosine form)."""

    variant: str = "stop_grad_one_branch"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    normalize: bool = False

    def __post_init__(self):
        if self.variant not in SSL_VARIANTS:
            raise ValueError(f"unknown SSL variant {self.variant!r}")


@dataclass
class ObjectiveResult:
    components: dict[str, float]
    feature: GradBundle
    classifier: GradBundle
    discriminator: GradBundle


def total_objective(
    batch: WeightedBatch,
    models: ModelBundle,
    weights: LossWeights,
    ssl_cfg: SslConfig,
    rng: np.random.Generator | None = None,
    *,
    views: tuple[np.ndarray, np.ndarray] | None = None,
) -> ObjectiveResult:
    """Component losses and descent directions for ``L_s - lam*L_adv + alpha*L_ssl``.

    Feature-extractor and classifier gradients are gradients of that scalar.
    The discriminator plays the max side, so its gradient is that of
    ``lam*L_adv`` (descending it ascends the objective); the feature extractor
    sees the discriminator's input gradient through a reversal layer.

    ``views`` fixes the two augmented target views instead of drawing them from
    ``rng`` (used for finite-difference checks).
    """
    f, c, d = models.feature, models.classifier, models.discriminator

    fs, cache_fs = mlp_forward(f, batch.source_x)
    logits, cache_c = mlp_forward(c, fs)
    l_s, g_logits = source_ce_loss(logits, batch.source_y)
    g_c = mlp_backward(c, cache_c, g_logits)
    g_f = mlp_backward(f, cache_fs, g_c.input_grad)

    l_adv = 0.0
    g_d = GradBundle.zeros_like(d)
    if weights.lam > 0 or np.any(batch.w_source) or np.any(batch.w_target):
        ft, cache_ft = mlp_forward(f, batch.target_x)
        ns = fs.shape[0]
        d_out, cache_d = mlp_forward(d, np.vstack([fs, ft]))
        l_adv, gd_s, gd_t = adv_alignment_loss(
            d_out[:ns, 0], d_out[ns:, 0], batch.w_source, batch.w_target
        )
        if weights.lam > 0:
            up = weights.lam * np.concatenate([gd_s, gd_t])[:, None]
            g_d = mlp_backward(d, cache_d, up)
            g_feat = grad_reverse(g_d.input_grad, 1.0)
            g_f = g_f + mlp_backward(f, cache_fs, g_feat[:ns])
            g_f = g_f + mlp_backward(f, cache_ft, g_feat[ns:])

    l_ssl = 0.0
    if weights.alpha > 0 or views is not None:
        tx = batch.target_x if batch.ssl_mask is None else batch.target_x[batch.ssl_mask]
        if tx.shape[0] > 0:
            if views is None:
                if rng is None:
                    raise ValueError("an rng is required to draw augmented views")
                a1 = augment(tx, ssl_cfg.augment, rng)
                a2 = augment(tx, ssl_cfg.augment, rng)
            else:
                a1, a2 = views
            z1, cache1 = mlp_forward(f, a1)
            z2, cache2 = mlp_forward(f, a2)
            if ssl_cfg.normalize:
                u1, n1 = l2_normalize(z1)
                u2, n2 = l2_normalize(z2)
                l_ssl, g1, g2 = ssl_loss(u1, u2, ssl_cfg.variant)
                g1 = l2_normalize_backward(u1, n1, g1)
                g2 = l2_normalize_backward(u2, n2, g2)
            else:
                l_ssl, g1, g2 = ssl_loss(z1, z2, ssl_cfg.variant)
            if weights.alpha > 0:
                g_f = g_f + mlp_backward(f, cache1, weights.alpha * g1)
                g_f = g_f + mlp_backward(f, cache2, weights.alpha * g2)

    for name, v in (("L_s", l_s), ("L_adv", l_adv), ("L_ssl", l_ssl)):
        if not np.isfinite(v):
            raise FloatingPointError(f"{name} is non-finite")
    g_f.input_grad = None
    g_c.input_grad = None
    g_d.input_grad = None
    return ObjectiveResult({"L_s": l_s, "L_adv": l_adv, "L_ssl": l_ssl}, g_f, g_c, g_d)


def composite_scalar(
    batch: WeightedBatch,
    models: ModelBundle,
    weights: LossWeights,
    views: tuple[np.ndarray, np.ndarray] | None = None,
    *,
    normalize: bool = False,
) -> float:
    """``L_s - lam*L_adv + alpha*L_ssl`` recomputed with forward passes only.

    The SSL term is the plain two-branch distance; this is the scalar whose
    gradient the ``plain_l2`` variant follows.
    """
    fwd = mlp_forward
    fs, _ = fwd(models.feature, batch.source_x)
    logits, _ = fwd(models.classifier, fs)
    l_s, _ = source_ce_loss(logits, batch.source_y)
    ft, _ = fwd(models.feature, batch.target_x)
    ds, _ = fwd(models.discriminator, fs)
    dt, _ = fwd(models.discriminator, ft)
    l_adv, _, _ = adv_alignment_loss(ds[:, 0], dt[:, 0], batch.w_source, batch.w_target)
    l_ssl = 0.0
    if views is not None:
        z1, _ = fwd(models.feature, views[0])
        z2, _ = fwd(models.feature, views[1])
        if normalize:
            z1, z2 = l2_normalize(z1)[0], l2_normalize(z2)[0]
        l_ssl, _, _ = ssl_loss(z1, z2, "plain_l2")
    return l_s - weights.lam * l_adv + weights.alpha * l_ssl


def toy_forward(w1, w2, x):
    h = x @ w1
    a = np.maximum(h, 0.0)
    return h, a, a @ w2


def toy_sup_loss(w1, w2, x, y) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean ``||relu(x W1) W2 - y||^2`` with gradients for ``W1`` and ``W2``."""
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[1] != w1.shape[0] or w1.shape[1] != w2.shape[0] or w2.shape[1] != y.shape[1]:
        raise ValueError(
            f"dimensions do not chain: x {x.shape}, W1 {w1.shape}, W2 {w2.shape}, y {y.shape}"
        )
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y need the same number of rows")
    h, a, out = toy_forward(w1, w2, x)
    r = out - y
    n = x.shape[0]
    loss = float((r**2).sum() / n)
    g_out = 2.0 * r / n
    g_w2 = a.T @ g_out
    g_w1 = x.T @ ((g_out @ w2.T) * (h > 0))
    return loss, g_w1, g_w2


def toy_ssl_loss(
    w1,
    x,
    rng: np.random.Generator | None = None,
    sigma: float = 0.5,
    *,
    noise=None,
    normalize: bool = False,
) -> tuple[float, np.ndarray]:
    """Mean ``||relu((x+e) W1) - relu((x+e') W1)||^2`` with its ``W1`` gradient.

    Both branches are differentiated. ``noise=(e, e')`` freezes the
    perturbations. With ``normalize`` the two feature rows are scaled to unit
    norm before the distance is taken.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    x = as_matrix(x, "x")
    if noise is None:
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        e1 = sigma * rng.standard_normal(x.shape)
        e2 = sigma * rng.standard_normal(x.shape)
    else:
        e1, e2 = noise
    x1, x2 = x + e1, x + e2
    h1, h2 = x1 @ w1, x2 @ w1
    a1, a2 = np.maximum(h1, 0.0), np.maximum(h2, 0.0)
    if normalize:
        (a1, n1), (a2, n2) = l2_normalize(a1), l2_normalize(a2)
    diff = a1 - a2
    n = x.shape[0]
    loss = float((diff**2).sum() / n)
    g1 = 2.0 * diff / n
    g2 = -g1
    if normalize:
        g1 = l2_normalize_backward(a1, n1, g1)
        g2 = l2_normalize_backward(a2, n2, g2)
    g_w1 = x1.T @ (g1 * (h1 > 0)) + x2.T @ (g2 * (h2 > 0))
    return loss, g_w1
