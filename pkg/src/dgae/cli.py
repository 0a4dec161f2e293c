"""Command line entry point: ``dgae {train,verify,sweep,eval}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from dgae.config import ConfigError, load_config

logger = logging.getLogger("dgae")


def _int_list(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgae", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seeds", type=_int_list, help="comma-separated seeds (overrides seeds)")
        p.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel")

    run_flags(sub.add_parser("train", help="train every seed and write curves"))
    sweep = sub.add_parser("sweep", help="train over a gamma/lambda grid")
    run_flags(sweep)
    sweep.add_argument("--gammas", type=_float_list, help="gamma grid (default: sweep.gamma)")
    sweep.add_argument("--lambdas", type=_float_list, help="lambda grid (default: sweep.lambda)")

    verify = sub.add_parser("verify", help="run the oracle and property checks")
    verify.add_argument("--quick", action="store_true", help="reduced sample counts")

    ev = sub.add_parser("eval", help="report the mean return of a checkpoint")
    ev.add_argument("--config", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=10)
    ev.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args) -> int:
    from dgae.harness import run_train

    cfg = load_config(args.config)
    path = run_train(cfg, out_dir=args.out, seeds=args.seeds, jobs=args.jobs)
    print(f"wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    from dgae.harness import run_sweep

    cfg = load_config(args.config)
    gammas = args.gammas or cfg.sweep.get("gamma")
    lambdas = args.lambdas or cfg.sweep.get("lambda")
    if not gammas or not lambdas:
        raise ConfigError("no grid given: pass --gammas/--lambdas or set sweep.gamma/sweep.lambda")
    path = run_sweep(cfg, gammas, lambdas, out_dir=args.out, seeds=args.seeds, jobs=args.jobs)
    print(f"wrote {path}")
    return 0


def _cmd_verify(args) -> int:
    from dgae.checks import format_table, run_checks

    t0 = time.perf_counter()
    results = run_checks(quick=args.quick)
    print(format_table(results))
    print(f"total {time.perf_counter() - t0:.2f} s")
    return 0 if all(r.passed for r in results) else 1


def _cmd_eval(args) -> int:
    from dgae.harness import run_eval

    cfg = load_config(args.config)
    mean, std = run_eval(cfg, args.checkpoint, episodes=args.episodes, seed=args.seed)
    print(f"mean_return {mean!r} std_return {std!r} episodes {args.episodes}")
    return 0


COMMANDS = {"train": _cmd_train, "sweep": _cmd_sweep, "verify": _cmd_verify, "eval": _cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FloatingPointError, RuntimeError, ValueError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
