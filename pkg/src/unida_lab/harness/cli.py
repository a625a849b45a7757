"""Command line entry point: ``unida-lab <subcommand> [--config F] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 configuration or input error, 2 numeric abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..estimator import NumericAbort
from ..ndcore import make_rng
from ..synthdata import make_toy_dataset, write_datasets_csv
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, config_hash, dump_config, load_config, run_seed
from .csvio import EVAL_COLUMNS, STEP_COLUMNS, SWEEP_COLUMNS, SchemaError, write_rows
from .plots import emit_plots
from .train import make_dataset, train_unida

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
TOY_COLUMNS = ("seed", "spcr", "arm", "alignment", "source_accuracy")


class _Parser(argparse.ArgumentParser):
    # usage mistakes count as configuration errors, keeping 2 for numeric aborts
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(cfg, args) -> int:
    out = _out(args)
    if cfg.dataset == "toy":
        datasets = make_toy_dataset(ex.toy_config(cfg), make_rng(run_seed(cfg.seed, 0), 16))
    else:
        datasets = make_dataset(cfg, cfg.seed)
    write_datasets_csv(out / "dataset.csv", list(datasets))
    write_datasets_csv(out / "dataset_train.csv", list(datasets), hide_target_labels=True)
    print(f"wrote {out / 'dataset.csv'} and {out / 'dataset_train.csv'}")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    out = _out(args)
    rec = train_unida(cfg)
    write_rows(out / "step_log.csv", rec.log, STEP_COLUMNS, "step-log")
    write_rows(out / "eval.csv", [rec.eval_row()], EVAL_COLUMNS, "eval")
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    r = rec.report
    print(
        f"config {rec.config_hash} seed {rec.seed}: acc_common={r.acc_common:.4f} "
        f"acc_private={r.acc_private:.4f} h_score={r.h_score:.4f} "
        f"misclass_sp={r.misclass_into_source_private:.4f} ({rec.wall_time:.1f}s)"
    )
    return EXIT_OK


def cmd_toy(cfg, args) -> int:
    out = _out(args)
    res = ex.run_toy_experiment(cfg)
    write_rows(out / "toy_alignment.csv", res.rows, TOY_COLUMNS, "toy")
    width = res.dumps[0]["features"].shape[1]
    cols = ("seed", "arm", "domain", "label", "x0", "x1") + tuple(f"f{i}" for i in range(width))
    flat = []
    for d in res.dumps:
        for label, raw, feat in zip(d["labels"], d["raw"], d["features"]):
            row = {"seed": d["seed"], "arm": d["arm"], "domain": d["domain"], "label": int(label)}
            row.update({"x0": float(raw[0]), "x1": float(raw[1])})
            row.update({f"f{i}": float(v) for i, v in enumerate(feat)})
            flat.append(row)
    write_rows(out / "toy_features.csv", flat, cols, "toy-features")
    sup, ssl = res.alignments("sup"), res.alignments("sup_ssl")
    wins = sum(b > a for a, b in zip(sup, ssl))
    print(f"alignment L_s only:    {' '.join(f'{v:.4f}' for v in sup)}")
    print(f"alignment L_s + L_ssl: {' '.join(f'{v:.4f}' for v in ssl)}")
    print(f"SSL ahead on {wins} of {len(sup)} seeds")
    return EXIT_OK


def _write_sweep(out: Path, name: str, rows) -> Path:
    path = out / name
    write_rows(path, rows, SWEEP_COLUMNS, "sweep")
    print(f"wrote {len(rows)} rows to {path}")
    return path


def cmd_sweep_noise(cfg, args) -> int:
    rows = ex.run_noise_tolerance_sweep(cfg, args.jobs)
    _write_sweep(_out(args), "noise_sweep.csv", rows)
    for sp in cfg.spcr_list:
        print(
            f"spcr {sp:g}: crossing flip rate {ex.crossing_flip_rate(rows, sp):g}, "
            f"spearman {ex.monotonicity(rows, sp):.3f}"
        )
    return EXIT_OK


def cmd_ablate_ssl(cfg, args) -> int:
    rows = ex.run_ssl_ablation(cfg, args.jobs)
    _write_sweep(_out(args), "ssl_ablation.csv", rows)
    for tp in cfg.target_private_list:
        means = {
            arm: ex.mean_of(rows, arm, "h_score", n_target_private=tp)
            for arm in ("no_ssl", "ssl_all", "ssl_common")
        }
        print(f"target-private {tp}: " + " ".join(f"{k}={v:.4f}" for k, v in means.items()))
    return EXIT_OK


def cmd_sweep_alpha(cfg, args) -> int:
    rows = ex.run_alpha_sensitivity(cfg, args.jobs)
    _write_sweep(_out(args), "alpha_sweep.csv", rows)
    for a in cfg.alphas:
        print(f"alpha {a:g}: h_score {ex.mean_of(rows, 'alpha', 'h_score', alpha=float(a)):.4f}")
    if any(0.3 <= a <= 0.7 for a in cfg.alphas):
        print(f"spread over [0.3, 0.7]: {ex.alpha_spread(rows):.4f}")
    return EXIT_OK


def cmd_sweep_spcr(cfg, args) -> int:
    rows = ex.run_spcr_robustness_sweep(cfg, args.jobs)
    _write_sweep(_out(args), "spcr_sweep.csv", rows)
    for sp in cfg.spcr_list:
        means = {
            arm: ex.mean_of(rows, arm, "h_score", spcr=float(r))
            for arm in ("source_only", "align", "ssl")
            for r in {row["spcr"] for row in rows if abs(row["spcr"] - sp) < 1e-9}
        }
        print(f"spcr {sp:.3g}: " + " ".join(f"{k}={v:.4f}" for k, v in means.items()))
    return EXIT_OK


def cmd_plot(cfg, args) -> int:
    written = []
    for path in args.csv:
        written.extend(emit_plots(path, args.out))
    if not written:
        print("nothing to plot")
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


COMMANDS = {
    "generate": (cmd_generate, "write a dataset pair as CSV"),
    "train": (cmd_train, "train one model; write the step log and evaluation row"),
    "toy": (cmd_toy, "run the 2D direction-preservation study"),
    "sweep-noise": (cmd_sweep_noise, "oracle weights with flip noise against a source-only baseline"),
    "ablate-ssl": (cmd_ablate_ssl, "no SSL vs SSL on all target rows vs SSL on common rows"),
    "sweep-alpha": (cmd_sweep_alpha, "H-score across SSL weights"),
    "sweep-spcr": (cmd_sweep_spcr, "alignment with and without SSL across SPCR values"),
    "plot": (cmd_plot, "render SVG charts from CSV output"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the flags appear before or after the subcommand
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (u64)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: out)")
    parser = _Parser(prog="unida-lab", description="Desk-scale universal domain adaptation experiments.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, parents=[common])
        if name.startswith(("sweep", "ablate")):
            p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep cells")
        if name == "plot":
            p.add_argument("csv", nargs="*", help="CSV files written by the other subcommands")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "out")):
        if not hasattr(args, name):
            setattr(args, name, default)
    handler = COMMANDS[args.command][0]
    try:
        cfg = _load(args)
        return handler(cfg, args)
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
