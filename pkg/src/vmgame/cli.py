"""Command-line entry point: run experiments, fit regret slopes from trace
CSVs, generate synthetic environments, and verify serialized environments."""

from __future__ import annotations

import argparse
import json
import sys

from .discounted import (
    discounted_env_to_json,
    random_discounted_game,
    verify_discounted_env,
)
from .envs import env_to_json, random_finite_game, verify_env
from .errors import NonPositiveRegret, TraceTooShort
from .harness import fit_regret_slope, read_trace_csv, run_experiment


def _cmd_run(args):
    return run_experiment(args.config)


def _cmd_fit(args):
    gaps, _, _ = read_trace_csv(args.trace)
    try:
        slope, intercept, r2 = fit_regret_slope(gaps)
    except (TraceTooShort, NonPositiveRegret) as exc:
        print(f"slope undefined: {exc}")
        return 1
    print(json.dumps({"slope": slope, "intercept": intercept, "r2": r2}))
    return 0


def _cmd_gen_env(args):
    counts = tuple(int(c) for c in args.action_counts.split(","))
    if args.kind == "finite":
        game = random_finite_game(
            num_players=args.players, num_states=args.states,
            action_counts=counts, horizon=args.horizon, d=args.d,
            seed=args.seed, zero_sum=args.zero_sum)
        doc = env_to_json(game)
    else:
        game = random_discounted_game(
            num_players=args.players, num_states=args.states,
            action_counts=counts, gamma=args.gamma, d=args.d,
            seed=args.seed, zero_sum=args.zero_sum)
        doc = discounted_env_to_json(game)
    with open(args.output, "w") as fh:
        json.dump(doc, fh)
    print(f"wrote {args.kind} env to {args.output}")
    return 0


def _cmd_verify(args):
    with open(args.env) as fh:
        doc = json.load(fh)
    kind = doc.get("kind")
    if kind == "finite":
        problems = verify_env(doc)
    elif kind == "discounted":
        problems = verify_discounted_env(doc)
    else:
        problems = [f"unknown env kind {kind!r}"]
    if problems:
        for p in problems:
            print(f"INVALID: {p}")
        return 1
    print("OK")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vmg",
        description="Value-incentivized model-based game learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.set_defaults(func=_cmd_run)

    p_fit = sub.add_parser("fit", help="fit a regret slope from a trace CSV")
    p_fit.add_argument("trace", help="path to a trace CSV")
    p_fit.set_defaults(func=_cmd_fit)

    p_gen = sub.add_parser("gen-env", help="generate a synthetic environment")
    p_gen.add_argument("--kind", choices=("finite", "discounted"), required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("-o", "--output", required=True)
    p_gen.add_argument("--players", type=int, default=2)
    p_gen.add_argument("--states", type=int, default=4)
    p_gen.add_argument("--action-counts", default="2,2",
                       help="comma-separated per-player action counts")
    p_gen.add_argument("--horizon", type=int, default=3)
    p_gen.add_argument("--gamma", type=float, default=0.9)
    p_gen.add_argument("--d", type=int, default=4)
    p_gen.add_argument("--zero-sum", action="store_true")
    p_gen.set_defaults(func=_cmd_gen_env)

    p_ver = sub.add_parser("verify", help="re-check environment invariants")
    p_ver.add_argument("env", help="path to a serialized env JSON")
    p_ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
