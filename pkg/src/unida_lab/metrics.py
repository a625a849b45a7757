"""Evaluation metrics, the batch noise rate, and principal-direction analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .weighting import confidence, entropy

UNKNOWN = -1


def h_score(a_common: float, a_private: float) -> float:
    """Harmonic mean of common-class and unknown-class accuracy (0 if both are 0)."""
    for v in (a_common, a_private):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"accuracies must lie in [0, 1], got {v}")
    if a_common + a_private == 0:
        return 0.0
    return 2.0 * a_common * a_private / (a_common + a_private)


@dataclass(frozen=True)
class RejectionRule:
    """Decides when a target sample is called "unknown".

    ``entropy_threshold`` rejects when entropy >= threshold;
    ``confidence_threshold`` rejects when max probability < threshold.
    """

    kind: str = "entropy_threshold"
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in ("entropy_threshold", "confidence_threshold"):
            raise ValueError(f"unknown rejection rule {self.kind!r}")
        if self.threshold is not None and not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    def resolved_threshold(self, n_classes: int) -> float:
        if self.kind == "entropy_threshold":
            t = 0.5 * math.log(n_classes) if self.threshold is None else self.threshold
            if n_classes > 1 and not 0 < t < math.log(n_classes):
                raise ValueError(f"entropy threshold must lie in (0, ln {n_classes})")
            return t
        return 0.5 if self.threshold is None else self.threshold

    def reject(self, probs: np.ndarray) -> np.ndarray:
        probs = np.atleast_2d(probs)
        k = probs.shape[1]
        if self.kind == "entropy_threshold":
            if k == 1:
                return np.zeros(probs.shape[0], dtype=bool)
            return entropy(probs) >= self.resolved_threshold(k)
        return confidence(probs) < self.resolved_threshold(k)


def predict_with_rejection(probs, rule: RejectionRule) -> np.ndarray:
    """Argmax class ids with rejected rows set to ``UNKNOWN``."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    pred = probs.argmax(axis=1)
    return np.where(rule.reject(probs), UNKNOWN, pred)


@dataclass
class EvalReport:
    acc_common: float
    acc_private: float
    h_score: float
    misclass_into_source_private: float
    per_class_accuracy: dict[int, float] = field(default_factory=dict)

    def as_row(self) -> dict[str, float]:
        return {
            "acc_common": self.acc_common,
            "acc_private": self.acc_private,
            "h_score": self.h_score,
            "misclass_sp": self.misclass_into_source_private,
        }


def report_from_predictions(
    predictions, true_labels, n_common: int, n_source_classes: int
) -> EvalReport:
    """Score predictions (``UNKNOWN`` = rejected) against hidden target labels.

    Class ids ``< n_common`` are common, ``[n_common, n_source_classes)`` are
    source-private, anything larger is target-private. Ratios are formed from
    integer counts; a domain part with no samples scores 0.
    """
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    y = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    if pred.shape != y.shape:
        raise ValueError("predictions and labels must align")
    common = y < n_common
    private = y >= n_source_classes
    n_c, n_p = int(common.sum()), int(private.sum())
    correct_c = int(np.sum(common & (pred == y)))
    rejected_p = int(np.sum(private & (pred == UNKNOWN)))
    into_sp = int(np.sum(common & (pred >= n_common) & (pred < n_source_classes)))
    acc_c = Fraction(correct_c, n_c) if n_c else Fraction(0)
    acc_p = Fraction(rejected_p, n_p) if n_p else Fraction(0)
    # harmonic mean on exact ratios so the only rounding is the final division
    h = 2 * acc_c * acc_p / (acc_c + acc_p) if acc_c + acc_p else Fraction(0)
    per_class = {}
    for k in np.unique(y):
        rows = y == k
        target = UNKNOWN if k >= n_source_classes else k
        per_class[int(k)] = int(np.sum(pred[rows] == target)) / int(rows.sum())
    return EvalReport(
        float(acc_c),
        float(acc_p),
        float(h),
        into_sp / n_c if n_c else 0.0,
        per_class,
    )


def evaluate(models, target, rule: RejectionRule | None = None, *, n_common: int | None = None) -> EvalReport:
    """Predict every target row (argmax or unknown) and score against hidden labels.

    ``models`` is anything with ``predict_proba`` (a model bundle or a fitted
    estimator). ``n_common`` defaults to the size of the target's common set.
    """
    rule = rule or RejectionRule()
    probs = models.predict_proba(target.features)
    nc = len(target.common_set) if n_common is None else n_common
    pred = predict_with_rejection(probs, rule)
    return report_from_predictions(pred, target.labels, nc, probs.shape[1])


def batch_noise_rate(weights, hidden_labels, common_set, threshold: float = 0.5) -> float:
    """Fraction of the batch whose thresholded weight disagrees with common membership."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    labels = np.asarray(hidden_labels).reshape(-1)
    if w.size == 0:
        raise ValueError("empty batch")
    if w.shape != labels.shape:
        raise ValueError("weights and labels must align")
    decided = w >= threshold
    truth = np.isin(labels, sorted(int(c) for c in common_set))
    return float(np.mean(decided != truth))


def noise_rate_from_mask(weights, common_mask, threshold: float = 0.5) -> float:
    """Same as :func:`batch_noise_rate` with membership given as a boolean mask."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    m = np.asarray(common_mask, dtype=bool).reshape(-1)
    if w.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((w >= threshold) != m))


class DegenerateDirectionError(ValueError):
    pass


@dataclass
class DirectionResult:
    direction: np.ndarray
    alignment: float | None
    eigenvalues: tuple[float, float]


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-15)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def principal_direction(
    features, reference=None, *, tol: float = 1e-10, max_iter: int = 100_000, min_gap: float = 1e-6
) -> DirectionResult:
    """Top eigenvector of the mean-centred covariance by power iteration.

    The sign is fixed so the first nonzero coordinate is positive. ``alignment``
    is ``|cos|`` against ``reference`` when one is given. Raises
    :class:`DegenerateDirectionError` for zero variance or a relative eigengap
    below ``min_gap``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a matrix with at least two rows")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    scale = float(np.trace(cov))
    if scale <= 0:
        raise DegenerateDirectionError("features have zero variance")
    # shift keeps the iteration on the largest eigenvalue of a PSD matrix
    m = cov / scale
    v = np.ones(m.shape[0]) / math.sqrt(m.shape[0]) + 1e-3 * np.arange(m.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            raise DegenerateDirectionError("power iteration collapsed")
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    lam = float(v @ m @ v)
    # second eigenvalue via deflation; only the gap is needed
    rest = m - lam * np.outer(v, v)
    second = float(np.linalg.eigvalsh(rest).max()) if m.shape[0] > 1 else 0.0
    if lam - second < min_gap:
        raise DegenerateDirectionError(
            f"eigengap {lam - second:.3g} below {min_gap:g}; no dominant direction"
        )
    v = _canonical_sign(v / np.linalg.norm(v))
    align = None
    if reference is not None:
        r = np.asarray(reference, dtype=np.float64).reshape(-1)
        rn = np.linalg.norm(r)
        if rn == 0:
            raise ValueError("reference direction must be nonzero")
        align = float(abs(v @ r) / rn)
    return DirectionResult(v, align, (lam * scale, second * scale))
