"""Command-line entry point.

Subcommands: train, eval, reference, table, gl-consistency, energy.
Exit codes: 0 success, 2 configuration error, 3 numeric failure.

Only the standard library is imported at module level so that ``--threads``
can cap the BLAS pools before numpy is first loaded.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbo-control",
        description="Gradient-free policy search for stochastic control problems.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP thread pools (set before numpy loads)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, checkpoint=False):
        p.add_argument("--config", required=True, help="TOML (or JSON) experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default runs/<name>)")
        p.add_argument("--variant", choices=("mcbo", "adamcbo"), default=None,
                       help="override the optimizer variant")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="trained checkpoint.json")
        return p

    add_common(sub.add_parser("train", help="train a policy and write checkpoint/history"))
    eval_p = add_common(sub.add_parser("eval", help="Monte-Carlo value of a checkpoint"),
                        checkpoint=True)
    eval_p.add_argument("--trajectories", type=int, default=0,
                        help="also dump this many controlled trajectories")
    add_common(sub.add_parser("reference", help="emit reference values (no training)"))
    add_common(sub.add_parser("table", help="systemic-risk value table across bank counts"),
               checkpoint=True)
    add_common(sub.add_parser("gl-consistency",
                              help="policy vs value-gradient scatter for Ginzburg-Landau"),
               checkpoint=True)
    add_common(sub.add_parser("energy", help="energy-decay run on a benchmark objective"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("--threads must be >= 1", file=sys.stderr)
            return 2
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    # heavy imports only after the thread environment is fixed
    from .config import load_config
    from .errors import ConfigError, NumericError
    from . import runner

    try:
        cfg = load_config(args.config, seed_override=args.seed,
                          variant_override=args.variant)
        out = args.out if args.out is not None else os.path.join("runs", cfg.name)
        if args.command == "train":
            runner.cmd_train(cfg, out)
        elif args.command == "eval":
            runner.cmd_eval(cfg, args.checkpoint, out, n_trajectories=args.trajectories)
        elif args.command == "reference":
            runner.cmd_reference(cfg, out)
        elif args.command == "table":
            runner.cmd_table(cfg, args.checkpoint, out)
        elif args.command == "gl-consistency":
            runner.cmd_gl_consistency(cfg, args.checkpoint, out)
        elif args.command == "energy":
            runner.cmd_energy(cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
