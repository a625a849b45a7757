"""Uncertainty scores, their mapping to alignment weights, and oracle weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("entropy", "confidence", "energy", "distance")
NORMALIZATIONS = ("batch_minmax", "closed_form")

# True when a larger score means the sample is more certain (more likely common).
_HIGHER_IS_CERTAIN = {"entropy": False, "confidence": True, "energy": False, "distance": False}


def _check_simplex(p, tol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim not in (1, 2) or p.shape[-1] < 1:
        raise ValueError(f"probabilities must be a vector or a batch of rows, got shape {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise ValueError("probabilities must sum to 1")
    return p


def entropy(p):
    """Shannon entropy in nats, with ``0 log 0 = 0``. Vector or row batch."""
    p = _check_simplex(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def confidence(p):
    return _check_simplex(p).max(axis=-1)


def energy(p):
    """``-log sum_i exp(p_i)`` taken over probabilities, not logits."""
    p = _check_simplex(p)
    m = p.max(axis=-1, keepdims=True)
    return -(np.log(np.exp(p - m).sum(axis=-1)) + m[..., 0])


@dataclass
class CentroidBank:
    centroids: np.ndarray
    update_interval: int = 100
    last_update: int = 0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2:
            raise ValueError("centroids must be a (classes, dim) matrix")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids must be finite")
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")


def distance_uncertainty(features, bank: CentroidBank):
    """Euclidean distance to the nearest centroid. Vector or row batch."""
    if bank.centroids.shape[0] == 0:
        raise ValueError("centroid bank is empty")
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != bank.centroids.shape[1]:
        raise ValueError(
            f"feature dim {x.shape[1]} != centroid dim {bank.centroids.shape[1]}"
        )
    d2 = ((x[:, None, :] - bank.centroids[None, :, :]) ** 2).sum(axis=2)
    out = np.sqrt(d2.min(axis=1))
    return float(out[0]) if single else out


def init_centroids(features, labels, n_classes: int, *, update_interval: int = 100, step: int = 0):
    """Per-class means; a class with no rows gets the overall mean."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    overall = x.mean(axis=0)
    cents = np.array(
        [x[labels == j].mean(axis=0) if np.any(labels == j) else overall for j in range(n_classes)]
    )
    return CentroidBank(cents, update_interval, step)


def update_centroids(bank: CentroidBank, source_features, source_labels, step: int) -> CentroidBank:
    """Recompute class means if ``k`` steps have passed since the last update.

    Classes absent from the batch keep their previous centroid.
    """
    if step - bank.last_update < bank.update_interval:
        return bank
    x = np.asarray(source_features, dtype=np.float64)
    labels = np.asarray(source_labels).reshape(-1)
    cents = bank.centroids.copy()
    for j in range(cents.shape[0]):
        rows = labels == j
        if np.any(rows):
            cents[j] = x[rows].mean(axis=0)
    return CentroidBank(cents, bank.update_interval, step)


@dataclass(frozen=True)
class WeightConfig:
    kind: str = "entropy"
    normalization: str = "closed_form"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown uncertainty kind {self.kind!r}; choose from {KINDS}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")


def _minmax(scores: np.ndarray, higher_is_certain: bool) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        return np.full(scores.shape, 0.5)
    scaled = (scores - lo) / (hi - lo)
    return scaled if higher_is_certain else 1.0 - scaled


def to_weight(scores, cfg: WeightConfig, n_classes: int | None = None) -> np.ndarray:
    """Map per-sample uncertainty scores to weights in [0, 1].

    Low uncertainty maps to high weight. ``closed_form`` uses ``1 - H/ln K`` for
    entropy and the raw value for confidence; energy and distance have no fixed
    range and are always min-max scaled over the batch. A batch whose scores are
    all equal gets weight 0.5 everywhere under min-max scaling.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise ValueError("need at least one score")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    certain = _HIGHER_IS_CERTAIN[cfg.kind]
    if cfg.normalization == "closed_form":
        if cfg.kind == "entropy":
            if n_classes is None:
                raise ValueError("closed-form entropy weights need n_classes")
            if n_classes == 1:
                return np.ones_like(s)
            return np.clip(1.0 - s / np.log(n_classes), 0.0, 1.0)
        if cfg.kind == "confidence":
            return np.clip(s, 0.0, 1.0)
    return _minmax(s, certain)


def scores_for(kind: str, probs=None, features=None, bank: CentroidBank | None = None) -> np.ndarray:
    """Uncertainty scores of a batch for the given kind."""
    if kind == "entropy":
        return entropy(probs)
    if kind == "confidence":
        return confidence(probs)
    if kind == "energy":
        return energy(probs)
    if kind == "distance":
        if bank is None or features is None:
            raise ValueError("distance scores need features and a centroid bank")
        return np.atleast_1d(distance_uncertainty(features, bank))
    raise ValueError(f"unknown uncertainty kind {kind!r}")


def oracle_weights(hidden_labels, common_set) -> np.ndarray:
    """1 for common-class rows, 0 for private rows."""
    labels = np.asarray(hidden_labels).reshape(-1)
    return np.isin(labels, sorted(int(c) for c in common_set)).astype(np.float64)


def flip_mask(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"flip rate must lie in [0, 1], got {rate}")
    return rng.random(n) < rate


def inject_flip_noise(binary_weights, rate: float, rng: np.random.Generator | None = None, *, mask=None):
    """Flip each 0/1 weight independently with probability ``rate``.

    Passing a precomputed ``mask`` applies exactly that flip pattern.
    """
    w = np.asarray(binary_weights, dtype=np.float64).reshape(-1)
    if not np.all((w == 0) | (w == 1)):
        raise ValueError("weights must be 0 or 1")
    if mask is None:
        mask = flip_mask(w.size, rate, rng)
    elif not 0.0 <= rate <= 1.0:
        raise ValueError(f"flip rate must lie in [0, 1], got {rate}")
    return np.where(mask, 1.0 - w, w)

