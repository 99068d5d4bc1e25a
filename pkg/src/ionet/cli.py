"""Command-line front end: ``ionet {gen-data,train,eval,reproduce}``."""
from __future__ import annotations

import argparse
import contextlib
import sys

from threadpoolctl import threadpool_limits

from . import experiments as ex


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ex.UsageError(f"--set expects section.key=value, got '{item}'")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.seed is not None:
        out["data.seed"] = str(args.seed)
        out["train.seed"] = str(args.seed)
    if args.iters is not None:
        out["train.epochs"] = str(args.iters)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ionet", description="Operator learning for elliptic interface problems.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file, registered config name, or experiment id")
    common.add_argument("--seed", type=int, help="seed for data, initialization and batching")
    common.add_argument("--out", default="runs/out", help="output directory")
    common.add_argument("--iters", type=int, help="number of training iterations")
    common.add_argument("--threads", type=int, help="BLAS thread count")
    common.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for bit-reproducible runs")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    common.add_argument("--quiet", action="store_true", help="no per-iteration progress")
    sub.add_parser("gen-data", parents=[common], help="sample input functions and references")
    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--resume", action="store_true", help="continue from out/checkpoint.ckpt")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test set")
    p.add_argument("--checkpoint", help="checkpoint file (default out/model.ckpt)")
    p = sub.add_parser("reproduce", parents=[common], help="gen-data, train and eval in one go")
    p.add_argument("experiment", nargs="?", help="experiment id or registered config name")
    sub.add_parser("list", help="list registered configs")
    return parser


def _progress(every: int):
    def log(row):
        if (row["iteration"] + 1) % every == 0:
            print(f"it {row['iteration'] + 1:6d}  lr {row['lr']:.3e}  loss {row['total']:.4e}", flush=True)
    return log


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list":
        print("\n".join(ex.registered_configs()))
        return 0
    source = getattr(args, "experiment", None) or args.config
    if source is None:
        parser.error("pass --config (or an experiment id for reproduce)")
    try:
        cfg = ex.load_config(source, _overrides(args))
        threads = 1 if args.deterministic else args.threads
        limits = threadpool_limits(limits=threads) if threads else contextlib.nullcontext()
        with limits:
            return _dispatch(args, cfg)
    except ex.UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args, cfg) -> int:
    log = None if args.quiet else _progress(max(1, cfg.train.epochs // 20))
    figures = not args.no_figures
    if args.command == "gen-data":
        p = ex.cmd_gen_data(cfg, args.out)
        print(f"wrote {p['train']} and {p['test']}")
    elif args.command == "train":
        _, hist = ex.cmd_train(cfg, args.out, resume=args.resume, log=log)
        print(f"trained {len(hist)} iterations; final loss {hist[-1]['total']:.4e}")
    elif args.command == "eval":
        res = ex.cmd_eval(cfg, args.out, args.checkpoint, figures=figures)
        print(f"mean relative L2 {res['mean']:.4e} +- {res['std']:.4e}")
    else:
        res = ex.cmd_reproduce(cfg, args.out, log=log, figures=figures)
        print(f"{cfg.name}: mean relative L2 {res['mean']:.4e} +- {res['std']:.4e}")
        if res["passed"] is not None:
            print(f"acceptance ({cfg.threshold:g}): {'PASS' if res['passed'] else 'FAIL'}")
            return 0 if res["passed"] else 1
    return 0

if __name__ == "__main__":
    sys.exit(main())
