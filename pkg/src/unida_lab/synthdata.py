"""Synthetic universal-domain-adaptation datasets.

Class ids are laid out the same way everywhere:

* ``0 .. n_common-1`` common classes,
* ``n_common .. n_common+n_source_private-1`` source-private classes,
* the remaining ``n_target_private`` ids are target-private.

The label classifier therefore has ``n_common + n_source_private`` outputs and
predicted ids ``>= n_common`` are source-private.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ndcore import as_matrix

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class LabelSplit:
    n_source_private: int
    n_common: int
    n_target_private: int = 0

    def __post_init__(self):
        for name in ("n_source_private", "n_common", "n_target_private"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v}")
        if self.n_common < 1:
            raise ValueError("n_common must be >= 1")

    @property
    def n_source_classes(self) -> int:
        return self.n_common + self.n_source_private

    @property
    def n_target_classes(self) -> int:
        return self.n_common + self.n_target_private

    @property
    def n_total(self) -> int:
        return self.n_common + self.n_source_private + self.n_target_private

    @property
    def common_set(self) -> frozenset[int]:
        return frozenset(range(self.n_common))

    @property
    def source_classes(self) -> list[int]:
        return list(range(self.n_source_classes))

    @property
    def target_classes(self) -> list[int]:
        return list(range(self.n_common)) + list(range(self.n_source_classes, self.n_total))


def spcr(split: LabelSplit) -> float:
    """Source-private to source-common class ratio."""
    return split.n_source_private / split.n_common


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    domain: str
    common_set: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("one label per feature row is required")
        if self.domain not in (SOURCE, TARGET):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")
        self.common_set = frozenset(int(c) for c in self.common_set)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def unlabeled(self) -> np.ndarray:
        """Label-free view handed to training code."""
        return self.features.copy()

    def common_mask(self) -> np.ndarray:
        return np.isin(self.labels, sorted(self.common_set))


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class ToyConfig:
    """Two-dimensional toy problem.

    Each class is an elongated cloud ``t * mu_k + eps`` with ``t ~ N(1, spread^2)``
    and ``eps ~ N(0, noise_sigma^2 I)``, so class ``k`` lies along the ray through
    its centroid ``mu_k``. The common class has centroid ``tau*e1 + gamma*e2``;
    target data is the common-class generator rotated by ``theta``.
    """

    tau: float = 3.0
    gamma: float = 3.0
    theta: float | None = None
    noise_sigma: float = 0.3
    radial_spread: float = 0.3
    samples_per_class: int = 200
    split: LabelSplit = LabelSplit(4, 1, 0)

    def __post_init__(self):
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")
        if self.radial_spread < 0:
            raise ValueError("radial_spread must be >= 0")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.tau <= 0 or self.gamma <= 0:
            raise ValueError("tau and gamma must be > 0")
        if self.split.n_target_private != 0:
            raise ValueError("the toy problem has no target-private classes")

    @property
    def rotation_angle(self) -> float:
        # default: rotate the common class onto e1
        return -math.atan2(self.gamma, self.tau) if self.theta is None else self.theta


def toy_centroids(cfg: ToyConfig) -> np.ndarray:
    """Centroids, common classes first.

    Source-private centroids sit on the circle of radius ``|(tau, gamma)|`` at
    angles evenly spaced inside (0, 90) degrees, skipping the common direction.
    """
    radius = math.hypot(cfg.tau, cfg.gamma)
    common_angle = math.atan2(cfg.gamma, cfg.tau)
    n_c, n_p = cfg.split.n_common, cfg.split.n_source_private
    # common classes fan out around the common direction when there are several
    commons = [
        np.array([cfg.tau, cfg.gamma]) if n_c == 1 else
        radius * np.array([math.cos(a), math.sin(a)])
        for a in (np.linspace(-0.1, 0.1, n_c) + common_angle if n_c > 1 else [common_angle])
    ]
    grid = np.linspace(0.0, math.pi / 2, n_p + 3)[1:-1]
    # drop the grid angle nearest the common direction so no private class overlaps it
    if n_p:
        drop = int(np.argmin(np.abs(grid - common_angle)))
        grid = np.delete(grid, drop)
    privates = [radius * np.array([math.cos(a), math.sin(a)]) for a in grid[:n_p]]
    return np.array(commons + privates)


def _toy_class(center, cfg: ToyConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    t = 1.0 + cfg.radial_spread * rng.standard_normal(n)
    return t[:, None] * center[None, :] + cfg.noise_sigma * rng.standard_normal((n, 2))


def make_toy_dataset(cfg: ToyConfig, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    centers = toy_centroids(cfg)
    n = cfg.samples_per_class
    xs = np.vstack([_toy_class(c, cfg, rng, n) for c in centers])
    ys = np.repeat(np.arange(len(centers)), n)
    rot = rotation(cfg.rotation_angle)
    xt = np.vstack(
        [_toy_class(centers[k], cfg, rng, n) @ rot.T for k in range(cfg.split.n_common)]
    )
    yt = np.repeat(np.arange(cfg.split.n_common), n)
    common = cfg.split.common_set
    return Dataset(xs, ys, SOURCE, common), Dataset(xt, yt, TARGET, common)


@dataclass(frozen=True)
class ShiftSpec:
    """Target-common shift: rotation by ``angle`` in a random 2D subspace, then
    a translation of norm ``translation`` in a random direction."""

    angle: float = 0.0
    translation: float = 0.0


def _random_plane(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    return q


def subspace_rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation by ``angle`` inside a random 2D plane, identity on its complement."""
    q = _random_plane(dim, rng)
    r2 = rotation(angle)
    return np.eye(dim) + q @ (r2 - np.eye(2)) @ q.T


def _place_means(
    n: int, dim: int, separation: float, rng: np.random.Generator, max_tries: int
) -> np.ndarray:
    # uniform in a cube whose side grows with the number of clusters to keep rejection cheap
    side = separation * max(2.0, n ** (1.0 / dim) * 1.5)
    means: list[np.ndarray] = []
    tries = 0
    while len(means) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(
                f"could not place {n} clusters at separation {separation} in dim {dim} "
                f"after {max_tries} draws ({len(means)} placed)"
            )
        cand = rng.uniform(-side / 2, side / 2, size=dim)
        if all(np.linalg.norm(cand - m) >= separation for m in means):
            means.append(cand)
    return np.array(means)


def make_unida_dataset(
    split: LabelSplit,
    dim: int,
    separation: float,
    samples_per_class: int,
    shift: ShiftSpec,
    rng: np.random.Generator,
    *,
    noise_sigma: float = 1.0,
    max_tries: int = 100_000,
) -> tuple[Dataset, Dataset]:
    """Gaussian-cluster UniDA pair.

    Every class mean is drawn with pairwise distance ``>= separation``. Target
    common clusters are the source clusters pushed through the shift; private
    clusters of either domain are independent. Hidden target labels are kept on
    the returned dataset for evaluation only.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if separation <= 0:
        raise ValueError("separation must be > 0")
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    means = _place_means(split.n_total, dim, separation, rng, max_tries)
    transform = subspace_rotation(dim, shift.angle, rng)
    direction = rng.standard_normal(dim)
    offset = shift.translation * direction / np.linalg.norm(direction)

    n = samples_per_class
    src_x, src_y, tgt_x, tgt_y = [], [], [], []
    for k in split.source_classes:
        src_x.append(means[k] + noise_sigma * rng.standard_normal((n, dim)))
        src_y.append(np.full(n, k))
    centroid = means[split.source_classes].mean(axis=0)
    for k in split.target_classes:
        x = means[k] + noise_sigma * rng.standard_normal((n, dim))
        if k < split.n_common:
            # rotate about the source centroid so the shift does not fling clusters away
            x = (x - centroid) @ transform.T + centroid + offset
        tgt_x.append(x)
        tgt_y.append(np.full(n, k))
    common = split.common_set
    return (
        Dataset(np.vstack(src_x), np.concatenate(src_y), SOURCE, common),
        Dataset(np.vstack(tgt_x), np.concatenate(tgt_y), TARGET, common),
    )


@dataclass(frozen=True)
class AugmentConfig:
    sigma_aug: float = 0.5
    scale_jitter: tuple[float, float] | None = None

    def __post_init__(self):
        if self.sigma_aug <= 0:
            raise ValueError("sigma_aug must be > 0")
        if self.scale_jitter is not None:
            lo, hi = self.scale_jitter
            if not 0 < lo <= hi:
                raise ValueError("scale_jitter must be a range 0 < lo <= hi")


def augment(x, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random view ``s * x + eps`` with ``eps ~ N(0, sigma_aug^2 I)``.

    ``s`` is 1 unless a jitter range is configured. Accepts one row or a batch.
    """
    arr = np.asarray(x, dtype=np.float64)
    out = arr
    if cfg.scale_jitter is not None:
        lo, hi = cfg.scale_jitter
        shape = (arr.shape[0], 1) if arr.ndim == 2 else ()
        out = out * rng.uniform(lo, hi, size=shape)
    return out + cfg.sigma_aug * rng.standard_normal(arr.shape)


CSV_HEADER_PREFIX = ("domain", "label")


def write_datasets_csv(path, datasets: list[Dataset], *, hide_target_labels: bool = False) -> None:
    """Write datasets as ``domain,label,f0..f{d-1}`` rows (floats at 17 significant digits).

    With ``hide_target_labels`` every target row gets label -1, the label-free
    training view.
    """
    dims = {d.dim for d in datasets}
    if len(dims) != 1:
        raise ValueError(f"datasets disagree on feature dimension: {sorted(dims)}")
    dim = dims.pop()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(CSV_HEADER_PREFIX) + [f"f{j}" for j in range(dim)])
        for ds in datasets:
            for row, label in zip(ds.features, ds.labels):
                lab = -1 if (hide_target_labels and ds.domain == TARGET) else int(label)
                w.writerow([ds.domain, lab] + [format(v, ".17g") for v in row])


def read_datasets_csv(path, common_set=()) -> dict[str, Dataset]:
    """Inverse of :func:`write_datasets_csv`; returns datasets keyed by domain."""
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header[:2]) != CSV_HEADER_PREFIX:
        raise ValueError(f"expected header starting with domain,label; got {header}")
    expected = [f"f{j}" for j in range(len(header) - 2)]
    if header[2:] != expected:
        raise ValueError(f"feature columns must be f0..f{len(expected) - 1}, got {header[2:]}")
    rows: dict[str, tuple[list, list]] = {}
    for line_no, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise ValueError(f"line {line_no}: expected {len(header)} fields, got {len(rec)}")
        feats, labs = rows.setdefault(rec[0], ([], []))
        feats.append([float(v) for v in rec[2:]])
        labs.append(int(rec[1]))
    return {
        dom: Dataset(np.array(f, dtype=np.float64).reshape(len(f), -1), l, dom, common_set)
        for dom, (f, l) in rows.items()
    }
