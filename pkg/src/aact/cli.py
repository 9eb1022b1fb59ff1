"""Command-line entry point: ``aact <subcommand> [--config FILE] [--key value ...]``.

Every ``key = value`` config entry is also a flag (``--lambda-c 0.5``); flags
override the file. Each subcommand writes the effective config next to its
artifacts so the run can be replayed with ``--config``.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ConfigError, RunConfig, load_config, parse_value
from .data import DatasetError, read_dataset, write_dataset
from .evaluation import EvalReport, dataset_for, evaluate, run_suite
from .models import KINDS, init_model
from .training import (
    CheckpointError,
    GradientCheckError,
    checkpoint_load,
    checkpoint_save,
    gradient_check,
    train,
    write_history_csv,
)
from .rng import Xoshiro256

log = logging.getLogger("aact")

SUBCOMMANDS = ("gen-data", "train", "eval", "gradcheck", "ablate", "sweep-horizon")
CONFIG_NAME = "config.txt"


class UsageError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("config overrides (any key of the config file)")
    for f in dataclasses.fields(RunConfig):
        flags = ["--" + f.name.replace("_", "-")]
        if f.name == "model_kind":
            flags.append("--model")
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        g.add_argument(*flags, dest="cfg_" + f.name, metavar="V", default=None, help=f"default: {default}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aact", description="Action anticipation experiments on synthetic activity videos.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="key = value config file")
        _add_config_flags(p)
        return p

    p = cmd("gen-data", "generate a synthetic dataset file")
    p.add_argument("--out", type=Path, required=True)

    p = cmd("train", "train one model; writes checkpoint.bin and history.csv")
    p.add_argument("--data", type=Path, help="training dataset (default: generated from the seed)")
    p.add_argument("--val", type=Path, help="validation dataset (default: generated test split)")
    p.add_argument("--out-dir", type=Path, required=True)

    p = cmd("eval", "evaluate a checkpoint; writes report.csv")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, help="evaluation dataset (default: generated test split)")
    p.add_argument("--protocol", choices=("at_horizon", "dense_future"), default="at_horizon")
    p.add_argument("--out-dir", type=Path, required=True)

    p = cmd("gradcheck", "compare backward against central differences on every parameter")
    p.add_argument("--kinds", default="se,pv,act")

    p = cmd("ablate", "run an ablation suite; writes report.csv and plot-data files")
    p.add_argument("--out-dir", type=Path, required=True)

    p = cmd("sweep-horizon", "anticipation accuracy versus horizon k for each model")
    p.add_argument("--out-dir", type=Path, required=True)
    return parser


def _run_config(args) -> RunConfig:
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, "cfg_" + f.name)
        if v is not None:
            try:
                overrides[f.name] = parse_value(f.name, v)
            except ConfigError as e:
                raise ConfigError(f"--{f.name.replace('_', '-')}: {e}") from None
    return load_config(args.config, overrides)


def _write_echo(cfg: RunConfig, path: Path):
    path.write_text(cfg.echo())


def _gen_data(args, cfg: RunConfig):
    sc = cfg.suite_config()
    ds = dataset_for(sc, cfg.seed, cfg.split)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, args.out)
    _write_echo(cfg, args.out.with_name(args.out.name + ".config"))
    print(f"wrote {len(ds)} examples to {args.out}")


def _load_or_generate(path, cfg: RunConfig, split: str):
    if path is not None:
        return read_dataset(path)
    return dataset_for(cfg.suite_config(), cfg.seed, split)


def _train(args, cfg: RunConfig):
    tc = cfg.train_config()
    tr = _load_or_generate(args.data, cfg, "train")
    va = _load_or_generate(args.val, cfg, "test")
    params, history = train(tc, tr, va)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_save(params, args.out_dir / "checkpoint.bin", tc)
    write_history_csv(history, args.out_dir / "history.csv")
    _write_echo(cfg, args.out_dir / CONFIG_NAME)
    last = history.epochs[-1] if history.epochs else None
    if last is not None:
        print(f"{tc.model_kind}: final loss {last.loss.total:.4f}, val top1 {last.val_top1:.4f}")
    if history.max_gradcheck_error is not None:
        print(f"gradient check max relative error {history.max_gradcheck_error:.3e}")


def _eval(args, cfg: RunConfig):
    params, tc = checkpoint_load(args.checkpoint)
    ds = _load_or_generate(args.data, dataclasses.replace(cfg, seed=tc.seed, k=tc.k), "test")
    report = evaluate(params, ds, protocol=args.protocol, seed=tc.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out_dir / "report.csv")
    _write_echo(cfg, args.out_dir / CONFIG_NAME)
    sys.stdout.write(report.to_csv())


def _gradcheck(args, cfg: RunConfig) -> int:
    kinds = [k for k in args.kinds.split(",") if k]
    bad = set(kinds) - set(KINDS)
    if bad:
        raise UsageError(f"--kinds: unknown model kinds {sorted(bad)}")
    sc = dataclasses.replace(cfg, n_train=3, n_test=1).suite_config()
    ds = dataset_for(sc, cfg.seed, "train")
    worst = 0.0
    for kind in kinds:
        tc = cfg.train_config(model_kind=kind)
        params = init_model(kind, tc.d, tc.A, tc.M, tc.N, cfg.seed, tc.heads, tc.layers)
        err = gradient_check(params, tc, ds, list(range(len(ds))), None, Xoshiro256(cfg.seed))
        print(f"{kind}: max relative gradient error {err:.3e} over {params.num_parameters()} parameters")
        worst = max(worst, err)
    print(f"max relative gradient error {worst:.3e} (tolerance {cfg.gradcheck_tol:g})")
    return 0 if worst <= cfg.gradcheck_tol else 1


def _suite(args, cfg: RunConfig, suite: str):
    sc = cfg.suite_config(suite)
    report = run_suite(sc, progress=lambda m: log.info(m))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out_dir / "report.csv")
    metrics = sorted({r.metric for r in report.rows})
    for metric in metrics:
        report.write_plot_data(args.out_dir / f"plot_{metric}.csv", metric)
    _write_echo(dataclasses.replace(cfg, suite=suite), args.out_dir / CONFIG_NAME)
    _print_summary(report)


def _print_summary(report: EvalReport):
    cells = sorted({(r.protocol, r.model, r.param, r.metric) for r in report.rows})
    for p, m, par, met in cells:
        vals = [r.value for r in report.select(protocol=p, model=m, param=par, metric=met)]
        print(f"{p:14s} {m:4s} {par:24s} {met:5s} mean {np.mean(vals):.4f} over {len(vals)} seeds")


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _run_config(args)
        if args.command == "gen-data":
            _gen_data(args, cfg)
        elif args.command == "train":
            _train(args, cfg)
        elif args.command == "eval":
            _eval(args, cfg)
        elif args.command == "gradcheck":
            return _gradcheck(args, cfg)
        elif args.command == "ablate":
            _suite(args, cfg, cfg.suite if cfg.suite != "horizon_sweep" else "cycle_ablation")
        elif args.command == "sweep-horizon":
            _suite(args, cfg, "horizon_sweep")
    except (ConfigError, UsageError) as e:
        print(f"aact {args.command}: {e}", file=sys.stderr)
        return 2
    except (DatasetError, CheckpointError, GradientCheckError, T.ShapeError, ValueError, OSError, KeyError) as e:
        print(f"aact {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
