"""Experiment configuration: a flat ``key = value`` text format with typed keys.

Lines are ``key = value``; ``#`` starts a comment. Lists are comma separated.
Ratios may be written as fractions (``spcr_list = 1/5, 1/3, 1, 3, 5``).
Unknown keys, repeated keys and values that do not parse as the key's type are
all rejected with :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import functools
import hashlib
import math
import typing
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..estimator import WEIGHTINGS
from ..losses import SSL_VARIANTS
from ..synthdata import LabelSplit
from ..weighting import KINDS, NORMALIZATIONS


class ConfigError(ValueError):
    """Invalid or unparseable experiment configuration."""


@functools.cache
def _hints() -> dict:
    return typing.get_type_hints(ExperimentConfig)


def _hint(name: str):
    return _hints()[name]


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset
    dataset: str = "synthetic"
    n_source_private: int = 10
    n_common: int = 5
    n_target_private: int = 4
    dim: int = 16
    separation: float = 4.0
    noise_sigma: float = 1.0
    samples_per_class: int = 200
    shift_angle: float = 0.8
    shift_translation: float = 3.0
    # toy dataset and toy network
    toy_spcr: int = 4
    toy_tau: float = 3.0
    toy_gamma: float = 3.0
    toy_theta: float | None = None
    toy_noise_sigma: float = 0.3
    toy_radial_spread: float = 0.3
    toy_width: int = 8
    toy_steps: int = 3000
    toy_lr: float = 0.01
    toy_alpha: float = 1.0
    toy_ssl_normalize: bool = True
    # model
    hidden_dim: int = 64
    feature_dim: int = 32
    disc_hidden: int = 32
    # objective
    lambda_adv: float = 0.5
    alpha: float = 0.5
    weighting: str = "entropy"
    normalization: str = "closed_form"
    flip_rate: float = 0.0
    centroid_interval: int = 100
    ssl_variant: str = "stop_grad_one_branch"
    ssl_normalize: bool = False
    ssl_on: str = "all"
    sigma_aug: float = 0.5
    rejection: str = "entropy_threshold"
    rejection_threshold: float | None = None
    # optimization
    steps: int = 2000
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    # sweep axes
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    spcr_list: tuple[float, ...] = (2.0, 5.0)
    flip_rates: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    alphas: tuple[float, ...] = (0.0, 0.3, 0.5, 0.7)
    target_private_list: tuple[int, ...] = (2, 6, 12)
    uncertainty_kinds: tuple[str, ...] = KINDS
    shared_classes: int = 16

    def __post_init__(self):
        # ints given for float keys (and lists for tuples) are stored in canonical form
        for f in fields(self):
            hint = _hint(f.name)
            value = getattr(self, f.name)
            if typing.get_origin(hint) is tuple and not isinstance(value, str):
                inner = typing.get_args(hint)[0]
                object.__setattr__(self, f.name, tuple(inner(v) for v in value))
            elif hint is float and isinstance(value, int) and not isinstance(value, bool):
                object.__setattr__(self, f.name, float(value))
        try:
            self._validate()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def _validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.dataset in ("synthetic", "toy"), "dataset must be 'synthetic' or 'toy'")
        need(self.steps >= 1, "steps must be >= 1")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.toy_steps >= 1, "toy_steps must be >= 1")
        need(self.lr > 0 and self.toy_lr > 0, "learning rates must be > 0")
        need(0 <= self.momentum < 1, "momentum must lie in [0, 1)")
        need(self.lambda_adv >= 0 and self.alpha >= 0, "lambda_adv and alpha must be >= 0")
        need(0 <= self.flip_rate <= 1, "flip_rate must lie in [0, 1]")
        need(self.weighting in WEIGHTINGS, f"weighting must be one of {', '.join(WEIGHTINGS)}")
        need(self.normalization in NORMALIZATIONS, f"normalization must be one of {', '.join(NORMALIZATIONS)}")
        need(self.ssl_variant in SSL_VARIANTS, f"ssl_variant must be one of {', '.join(SSL_VARIANTS)}")
        need(self.ssl_on in ("all", "common"), "ssl_on must be 'all' or 'common'")
        need(self.sigma_aug > 0, "sigma_aug must be > 0")
        need(self.dim >= 2 and self.separation > 0, "dim must be >= 2 and separation > 0")
        need(self.noise_sigma > 0 and self.toy_noise_sigma > 0, "noise levels must be > 0")
        need(self.samples_per_class >= 1, "samples_per_class must be >= 1")
        need(self.shared_classes >= 1, "shared_classes must be >= 1")
        for name in ("seeds", "spcr_list", "flip_rates", "alphas", "target_private_list", "uncertainty_kinds"):
            need(len(getattr(self, name)) > 0, f"{name} must be nonempty")
        need(all(0 <= f <= 1 for f in self.flip_rates), "flip_rates must lie in [0, 1]")
        need(all(0 <= a <= 1 for a in self.alphas), "alphas must lie in [0, 1]")
        need(all(s >= 0 for s in self.spcr_list), "spcr_list entries must be >= 0")
        need(all(k in KINDS for k in self.uncertainty_kinds), f"uncertainty_kinds must be among {KINDS}")
        LabelSplit(self.n_source_private, self.n_common, self.n_target_private)

    @property
    def split(self) -> LabelSplit:
        return LabelSplit(self.n_source_private, self.n_common, self.n_target_private)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_HINTS = _hints()
# the run seed is reported next to the hash, so it is not part of it
_UNHASHED = ("seed",)


def _parse_scalar(kind, text: str, key: str):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            value = float(Fraction(text)) if "/" in text else float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        if kind is str:
            if not text:
                raise ValueError("empty string")
            return text
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind.__name__}") from exc
    raise ConfigError(f"{key}: unsupported type {kind}")


def parse_value(key: str, text: str):
    """Parse ``text`` as the type declared for ``key``."""
    if key not in _HINTS:
        raise ConfigError(f"unknown key {key!r}")
    hint = _HINTS[key]
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is tuple:
        parts = [p for p in text.split(",") if p.strip()]
        return tuple(_parse_scalar(args[0], p, key) for p in parts)
    if type(None) in args:
        if text.strip().lower() in ("none", ""):
            return None
        inner = next(a for a in args if a is not type(None))
        return _parse_scalar(inner, text, key)
    return _parse_scalar(hint, text, key)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        values[key] = parse_value(key, value)
    return (base or ExperimentConfig()).replace(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Every key in declaration order; ``parse_config(dump_config(c)) == c``."""
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 prefix over every semantic key except the run seed."""
    body = "".join(
        f"{f.name}={_format(getattr(cfg, f.name))}\n" for f in fields(cfg) if f.name not in _UNHASHED
    )
    return hashlib.sha256(body.encode("utf-8")).hexdigest()[:16]


def split_for_spcr(spcr: float, shared_classes: int, n_target_private: int) -> LabelSplit:
    """Label split with the requested source-private to common ratio.

    Picks the common-class count ``c`` for which ``spcr * c`` is an integer and
    ``c + spcr * c`` is closest to ``shared_classes`` (ties go to the smaller
    ``c``). Raises :class:`ConfigError` when no ``c`` up to ``shared_classes``
    realizes the ratio exactly.
    """
    ratio = Fraction(spcr).limit_denominator(1000)
    if ratio < 0:
        raise ConfigError("spcr must be >= 0")
    best = None
    for c in range(1, shared_classes + 1):
        private = ratio * c
        if private.denominator != 1:
            continue
        gap = abs(c + int(private) - shared_classes)
        if best is None or gap < best[0]:
            best = (gap, c, int(private))
    if best is None:
        raise ConfigError(f"spcr {spcr} is not realizable with at most {shared_classes} common classes")
    return LabelSplit(best[2], best[1], n_target_private)


def run_seed(master: int, replicate: int) -> int:
    """Seed of one sweep cell, derived from the master seed and replicate index.

    Uses numpy's ``SeedSequence`` spawning rule, so cells are independent of
    the order in which they run.
    """
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(replicate),))
    return int(ss.generate_state(1, np.uint32)[0])
