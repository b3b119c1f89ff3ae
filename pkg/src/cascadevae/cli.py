"""Command-line entry point.

Subcommands: gen-data, train, eval, traverse, assign-solve, check. Options
can come from a flat key=value config file (# comments allowed); explicit
flags override file values, and every run echoes its fully resolved
configuration before doing work. Exit code 0 on success, nonzero with a
one-line diagnostic on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, replace

import numpy as np

from . import metrics, nn, trainer, traversal
from .assignment import format_solution, parse_instance, solve_mcf
from .data import FactorSpec, generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, FormatError, MetricError
from .rng import Prng
from .trainer import TrainConfig


def _parse_config_file(path: str) -> dict:
    defaults = TrainConfig()
    values: dict = {}
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if not hasattr(defaults, key):
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        current = getattr(defaults, key)
        try:
            if isinstance(current, tuple):
                values[key] = tuple(int(v) for v in val.split(",")) if val else ()
            elif isinstance(current, float):
                values[key] = float(val)
            else:
                values[key] = int(val)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


_FLAG_TO_FIELD = {
    "seed": "seed",
    "iters": "max_iter",
    "beta_h": "beta_h",
    "beta_l": "beta_l",
    "r": "r",
    "t_d": "t_d",
    "lambda_prime": "lambda_prime",
    "m": "m",
    "s_card": "s_card",
    "batch": "batch_size",
    "lr": "learning_rate",
}


def _resolve_config(args) -> TrainConfig:
    values = _parse_config_file(args.config) if args.config else {}
    for flag, field in _FLAG_TO_FIELD.items():
        flag_val = getattr(args, flag, None)
        if flag_val is not None:
            values[field] = flag_val
    config = replace(TrainConfig(), **values)
    config.validate()
    return config


def _banner(config: TrainConfig) -> None:
    for key, val in asdict(config).items():
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        print(f"[config] {key}={val}")


def _add_train_flags(sub) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--iters", type=int)
    sub.add_argument("--beta-h", dest="beta_h", type=float)
    sub.add_argument("--beta-l", dest="beta_l", type=float)
    sub.add_argument("--r", type=int)
    sub.add_argument("--t-d", dest="t_d", type=int)
    sub.add_argument("--lambda-prime", dest="lambda_prime", type=float)
    sub.add_argument("--m", type=int)
    sub.add_argument("--s-card", dest="s_card", type=int)
    sub.add_argument("--batch", type=int)
    sub.add_argument("--lr", type=float)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadevae",
        description="train and evaluate an alternating discrete/continuous disentangler",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen-data", help="generate the synthetic factor dataset")
    gen.add_argument("--out", required=True, help="output dataset file")
    gen.add_argument("--width", type=int, default=16)
    gen.add_argument("--scales", default="0.3,0.5,0.7", help="comma list of scale fractions")
    gen.add_argument("--positions", type=int, default=8, help="grid points per position axis")

    train = subs.add_parser("train", help="run the training loop")
    train.add_argument("--data", required=True, help="dataset file")
    train.add_argument("--out", required=True, help="output prefix for checkpoint and trace")
    _add_train_flags(train)

    ev = subs.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", help="report file (default: stdout only)")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--L", type=int, default=100, help="samples per fixed-factor batch")
    ev.add_argument("--M", type=int, default=800, help="number of votes")

    tr = subs.add_parser("traverse", help="render latent traversal grids")
    tr.add_argument("checkpoint")
    tr.add_argument("--out", required=True, help="output prefix for PGM files")
    tr.add_argument("--range", dest="sweep_range", type=float, default=1.5)

    asn = subs.add_parser("assign-solve", help="solve a plain-text assignment instance")
    asn.add_argument("instance")

    chk = subs.add_parser("check", help="run identity and gradient checks")
    chk.add_argument("--trials", type=int, default=200)
    chk.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_gen_data(args) -> int:
    scales = tuple(float(v) for v in args.scales.split(","))
    pos = tuple(np.linspace(0.3, 0.7, args.positions))
    spec = FactorSpec(scales=scales, xs=pos, ys=pos, width=args.width)
    print(f"[config] width={args.width} scales={args.scales} positions={args.positions}")
    ds = generate_dataset(spec)
    save_dataset(ds, args.out)
    print(f"wrote {ds.count} images to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    _banner(config)
    ds = load_dataset(args.data)
    trainer.train_run(
        config,
        ds,
        checkpoint_path=f"{args.out}.cvck",
        trace_path=f"{args.out}.trace.csv",
    )
    print(f"wrote {args.out}.cvck and {args.out}.trace.csv")
    return 0


def _cmd_eval(args) -> int:
    state, config = trainer.load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    print(f"[config] checkpoint={args.checkpoint} iter={state.iteration} "
          f"seed={args.seed} L={args.L} M={args.M}")
    rng = Prng(args.seed).child("metrics")
    rep = metrics.infer_representation(state.params, ds)
    surviving = metrics.prune_dims(state.params, ds)
    report = metrics.score_representation(
        rep, ds.factors, ds.cards, surviving, args.M, args.L, rng
    )
    accuracy = metrics.cluster_accuracy(rep.discrete, ds.factors[:, 0])
    tc = metrics.estimate_tc_gaussian(rep.continuous)
    mi = metrics.estimate_mi_per_dim(
        state.params, ds, min(config.batch_size, ds.count), rng.child("mi")
    )
    values = {
        "disentanglement_score": repr(report.score),
        "cluster_accuracy": repr(accuracy),
        "tc_gaussian": repr(tc),
    }
    for j in range(config.m):
        values[f"mi_dim_{j}"] = repr(float(mi[j]))
    values["mi_discrete"] = repr(float(mi[-1]))
    text = metrics.format_report(values, report)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write(text)
        with open(f"{args.out}.votes.csv", "w", encoding="ascii") as fh:
            fh.write(metrics.votes_csv(report, ds.names))
        print(f"wrote {args.out} and {args.out}.votes.csv")
    return 0


def _cmd_traverse(args) -> int:
    state, _ = trainer.load_checkpoint(args.checkpoint)
    print(f"[config] checkpoint={args.checkpoint} range={args.sweep_range}")
    paths = traversal.write_traversals(
        state.params, args.out, lo=-args.sweep_range, hi=args.sweep_range
    )
    print("wrote " + " ".join(paths))
    return 0


def _cmd_assign_solve(args) -> int:
    try:
        with open(args.instance, "r", encoding="ascii") as fh:
            text = fh.read()
    except OSError as exc:
        raise FormatError(f"{args.instance}: cannot read instance: {exc}") from exc
    result = solve_mcf(parse_instance(text, source=args.instance))
    sys.stdout.write(format_solution(result))
    return 0


def _cmd_check(args) -> int:
    rng = Prng(args.seed)
    report = metrics.verify_identities(rng.child("identities"), args.trials)
    grad_err = nn.gradient_check_suite(5, rng.child("gradients"))
    print(f"identity chain_rule residual      {report.chain_rule:.3e}")
    print(f"identity partition residual       {report.partition:.3e}")
    print(f"identity telescoping residual     {report.telescoping:.3e}")
    print(f"identity kl_decomposition residual {report.kl_decomposition:.3e}")
    print(f"uniform bound violation           {report.uniform_bound:.3e}")
    print(f"max identity residual             {report.max_residual:.3e}")
    print(f"gradient max relative error       {grad_err:.3e}")
    ok = report.max_residual < 1e-9 and grad_err < 1e-4
    print("check " + ("PASSED" if ok else "FAILED"))
    return 0 if ok else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "traverse": _cmd_traverse,
    "assign-solve": _cmd_assign_solve,
    "check": _cmd_check,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FormatError, MetricError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
