"""Sweeps behind the noise-tolerance, SSL, alpha and SPCR studies, plus the toy study.

Every sweep is a list of independent cells. A cell trains one model on the
dataset determined by ``(cfg.seed, replicate, split)`` and returns one row, so
rows are identical whichever order (or process) the cells run in. Paired arms
share the dataset and the estimator seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from ..metrics import principal_direction
from ..ndcore import make_rng
from ..synthdata import LabelSplit, ToyConfig, make_toy_dataset
from ..toy import ToyTwoLayerNet
from .config import ExperimentConfig, run_seed, split_for_spcr
from .csvio import sort_rows
from .train import make_dataset, train_unida


@dataclass(frozen=True)
class Cell:
    cfg: ExperimentConfig
    replicate: int
    split: LabelSplit
    arm: str


def run_cell(cell: Cell) -> dict:
    seed = run_seed(cell.cfg.seed, cell.replicate)
    data = make_dataset(cell.cfg, seed, cell.split)
    row = train_unida(cell.cfg, data, seed=seed).eval_row(cell.arm)
    row["seed"] = cell.replicate
    return row


def run_cells(cells, jobs: int = 1) -> list[dict]:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]
    return sort_rows(rows)


def _split(cfg: ExperimentConfig, spcr_value: float, n_target_private: int | None = None) -> LabelSplit:
    tp = cfg.n_target_private if n_target_private is None else n_target_private
    return split_for_spcr(spcr_value, cfg.shared_classes, tp)


# noise tolerance ---------------------------------------------------------------


def noise_tolerance_cells(cfg: ExperimentConfig) -> list[Cell]:
    """Oracle weights with flip noise, a source-only baseline, and one run per uncertainty kind."""
    cells = []
    aligned = cfg.replace(weighting="oracle", alpha=0.0)
    for sp in cfg.spcr_list:
        split = _split(cfg, sp)
        for rep in cfg.seeds:
            cells.append(Cell(aligned.replace(lambda_adv=0.0, flip_rate=0.0), rep, split, "baseline"))
            for f in cfg.flip_rates:
                cells.append(Cell(aligned.replace(flip_rate=f), rep, split, "aligned"))
            for kind in cfg.uncertainty_kinds:
                c = cfg.replace(weighting=kind, alpha=0.0, flip_rate=0.0)
                cells.append(Cell(c, rep, split, f"uncertainty:{kind}"))
    return cells


def run_noise_tolerance_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    return run_cells(noise_tolerance_cells(cfg), jobs)


def _mean_by(rows, key, value):
    groups: dict = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r[value])
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


def misclass_curve(rows, spcr_value: float) -> tuple[list[float], list[float], float]:
    """Seed-averaged (flip rates, misclassification, baseline) at one SPCR."""
    sel = [r for r in rows if math.isclose(r["spcr"], spcr_value)]
    curve = _mean_by([r for r in sel if r["arm"] == "aligned"], "flip_rate", "misclass_sp")
    base = [r["misclass_sp"] for r in sel if r["arm"] == "baseline"]
    if not curve or not base:
        raise ValueError(f"no aligned/baseline rows at spcr {spcr_value}")
    return list(curve), list(curve.values()), float(np.mean(base))


def crossing_flip_rate(rows, spcr_value: float) -> float:
    """Smallest flip rate whose averaged misclassification exceeds the baseline (inf if none)."""
    rates, values, base = misclass_curve(rows, spcr_value)
    for f, v in zip(rates, values):
        if v > base:
            return f
    return math.inf


def monotonicity(rows, spcr_value: float) -> float:
    """Spearman correlation between flip rate and averaged misclassification."""
    rates, values, _ = misclass_curve(rows, spcr_value)
    if np.ptp(values) == 0:
        return 0.0
    return float(spearmanr(rates, values).statistic)


# SSL ablation ----------------------------------------------------------------------


def ssl_ablation_cells(cfg: ExperimentConfig) -> list[Cell]:
    """No SSL, SSL on all target rows, SSL restricted to target-common rows."""
    arms = {
        "no_ssl": cfg.replace(alpha=0.0),
        "ssl_all": cfg.replace(ssl_on="all"),
        "ssl_common": cfg.replace(ssl_on="common"),
    }
    base_split = cfg.split
    cells = []
    for tp in cfg.target_private_list:
        split = LabelSplit(base_split.n_source_private, base_split.n_common, tp)
        for rep in cfg.seeds:
            for arm, c in arms.items():
                cells.append(Cell(c.replace(n_target_private=tp), rep, split, arm))
    return cells


def run_ssl_ablation(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    if cfg.alpha <= 0:
        raise ValueError("the SSL ablation needs alpha > 0")
    return run_cells(ssl_ablation_cells(cfg), jobs)


def paired(rows, arm_a: str, arm_b: str, value: str, **where) -> list[tuple[float, float]]:
    """``(a, b)`` value pairs of two arms matched on seed, filtered by ``where``."""

    def keep(r):
        return all(
            math.isclose(r[k], v) if isinstance(v, float) else r[k] == v for k, v in where.items()
        )

    a = {r["seed"]: r[value] for r in rows if r["arm"] == arm_a and keep(r)}
    b = {r["seed"]: r[value] for r in rows if r["arm"] == arm_b and keep(r)}
    return [(a[s], b[s]) for s in sorted(a) if s in b]


def mean_of(rows, arm: str, value: str, **where) -> float:
    pairs = paired(rows, arm, arm, value, **where)
    if not pairs:
        raise ValueError(f"no rows for arm {arm!r} with {where}")
    return float(np.mean([p[0] for p in pairs]))


# alpha sensitivity -----------------------------------------------------------------


def alpha_cells(cfg: ExperimentConfig) -> list[Cell]:
    return [
        Cell(cfg.replace(alpha=a), rep, cfg.split, "alpha")
        for a in cfg.alphas
        for rep in cfg.seeds
    ]


def run_alpha_sensitivity(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    return run_cells(alpha_cells(cfg), jobs)


def alpha_spread(rows, lo: float = 0.3, hi: float = 0.7) -> float:
    """max - min of seed-averaged H-score over alphas in ``[lo, hi]``."""
    means = _mean_by([r for r in rows if lo - 1e-12 <= r["alpha"] <= hi + 1e-12], "alpha", "h_score")
    if not means:
        raise ValueError(f"no alpha inside [{lo}, {hi}]")
    return max(means.values()) - min(means.values())


# SPCR robustness -----------------------------------------------------------------


def spcr_cells(cfg: ExperimentConfig) -> list[Cell]:
    """Source-only, alignment only, and alignment plus SSL at each SPCR."""
    arms = {
        "source_only": cfg.replace(lambda_adv=0.0, alpha=0.0),
        "align": cfg.replace(alpha=0.0),
        "ssl": cfg,
    }
    cells = []
    for sp in cfg.spcr_list:
        split = _split(cfg, sp)
        for rep in cfg.seeds:
            for arm, c in arms.items():
                cells.append(Cell(c, rep, split, arm))
    return cells


def run_spcr_robustness_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[dict]:
    if cfg.alpha <= 0:
        raise ValueError("the SPCR sweep compares against SSL, so alpha must be > 0")
    return run_cells(spcr_cells(cfg), jobs)


# toy study -------------------------------------------------------------------------


def toy_config(cfg: ExperimentConfig, spcr_value: int | None = None) -> ToyConfig:
    sp = cfg.toy_spcr if spcr_value is None else spcr_value
    return ToyConfig(
        tau=cfg.toy_tau,
        gamma=cfg.toy_gamma,
        theta=cfg.toy_theta,
        noise_sigma=cfg.toy_noise_sigma,
        radial_spread=cfg.toy_radial_spread,
        samples_per_class=cfg.samples_per_class,
        split=LabelSplit(int(sp), 1, 0),
    )


@dataclass
class ToyResult:
    rows: list[dict]
    dumps: list[dict]

    def alignments(self, arm: str) -> list[float]:
        return [r["alignment"] for r in sorted(self.rows, key=lambda r: r["seed"]) if r["arm"] == arm]


def run_toy_experiment(cfg: ExperimentConfig, spcr_value: int | None = None) -> ToyResult:
    """Train L_s only and L_s + L_ssl toy networks for every seed.

    Alignment is ``|cos|`` between the top principal axis of the learned
    target features and the network's image of ``e1`` at the target mean.
    Feature dumps hold raw and learned coordinates for plotting.
    """
    tcfg = toy_config(cfg, spcr_value)
    rows, dumps = [], []
    for rep in cfg.seeds:
        seed = run_seed(cfg.seed, rep)
        source, target = make_toy_dataset(tcfg, make_rng(seed, 16))
        for arm, alpha in (("sup", 0.0), ("sup_ssl", cfg.toy_alpha)):
            net = ToyTwoLayerNet(
                width=cfg.toy_width,
                alpha=alpha,
                sigma_aug=cfg.sigma_aug,
                ssl_normalize=cfg.toy_ssl_normalize,
                steps=cfg.toy_steps,
                lr=cfg.toy_lr,
                random_state=seed,
            ).fit(source.features, source.labels, target.features)
            feats = net.transform(target.features)
            ref = net.feature_image([1.0, 0.0], target.features.mean(axis=0))
            if not np.any(ref) or np.allclose(feats.std(axis=0), 0):
                alignment = 0.0
            else:
                alignment = principal_direction(feats, ref).alignment
            rows.append(
                {
                    "seed": rep,
                    "spcr": float(tcfg.split.n_source_private),
                    "arm": arm,
                    "alignment": alignment,
                    "source_accuracy": net.score(source.features, source.labels),
                }
            )
            for ds in (source, target):
                dumps.append(
                    {
                        "seed": rep,
                        "arm": arm,
                        "domain": ds.domain,
                        "labels": ds.labels,
                        "raw": ds.features,
                        "features": net.transform(ds.features),
                    }
                )
    return ToyResult(rows, dumps)
