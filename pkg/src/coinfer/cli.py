"""Command-line entry points: train, evaluate, baseline, verify, verify-allocator."""

import os

# Single-threaded kernels keep runs byte-reproducible; must be set before
# numpy loads its BLAS.  Respected only if the user has not chosen otherwise.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import argparse
import sys
from pathlib import Path

from .allocator import equivalence_sweep
from .config import default_scenario, load_config
from .harness import (DEFAULT_EVAL_EPISODES, build_policy, run_evaluation,
                      run_training, verify)

POLICIES = ("proposed", "proposed-fixed", "myopic", "static")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="scenario YAML (built-in defaults when omitted)")
    parser.add_argument("--seed", type=int, default=0, help="master seed")


def _scenario(args):
    return load_config(args.config) if args.config else default_scenario()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="coinfer",
        description="Collaborative-inference offloading simulator and learner.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy and write a checkpoint")
    _add_common(p_train)
    p_train.add_argument("--out", type=Path, required=True, help="output directory")

    p_eval = sub.add_parser("evaluate", help="evaluate a policy without learning")
    _add_common(p_eval)
    p_eval.add_argument("--out", type=Path, required=True)
    p_eval.add_argument("--policy", choices=POLICIES, default="proposed")
    p_eval.add_argument("--checkpoint", type=Path, default=None,
                        help="required for proposed / proposed-fixed")
    p_eval.add_argument("--episodes", type=int, default=DEFAULT_EVAL_EPISODES)

    p_base = sub.add_parser("baseline", help="evaluate a non-learned baseline policy")
    _add_common(p_base)
    p_base.add_argument("--out", type=Path, required=True)
    p_base.add_argument("--policy", choices=("myopic", "static"), required=True)
    p_base.add_argument("--episodes", type=int, default=DEFAULT_EVAL_EPISODES)

    p_va = sub.add_parser("verify-allocator",
                          help="closed form vs numeric oracle on random instances")
    p_va.add_argument("--samples", type=int, default=1000)
    p_va.add_argument("--seed", type=int, default=0)

    p_verify = sub.add_parser("verify", help="run every property suite")
    _add_common(p_verify)

    args = parser.parse_args(argv)

    if args.command == "train":
        scenario = _scenario(args)
        result, _ = run_training(scenario, args.seed, out_dir=args.out)
        s = result.summary
        print(f"trained {s['episodes']} episodes: mean delay {s['mean_delay']:.4f} s, "
              f"mean reward {s['mean_reward']:.4f}")
        print(f"outputs in {args.out}")
        return 0

    if args.command in ("evaluate", "baseline"):
        scenario = _scenario(args)
        checkpoint = getattr(args, "checkpoint", None)
        try:
            policy = build_policy(args.policy, scenario, checkpoint)
        except ValueError as exc:
            parser.error(str(exc))
        result = run_evaluation(scenario, policy, args.seed, episodes=args.episodes,
                                out_dir=args.out, policy_name=args.policy)
        s = result.summary
        acc = ", ".join(f"{a:.4f}" for a in s["mean_accuracy"])
        print(f"{args.policy}: mean delay {s['mean_delay']:.4f} s "
              f"(+/- {s['delay_ci95']:.4f}), accuracy [{acc}]")
        print(f"outputs in {args.out}")
        return 0

    if args.command == "verify-allocator":
        report = equivalence_sweep(instances=args.samples, seed=args.seed)
        print(f"{report['instances']} instances: "
              f"max component gap {report['max_component_gap']:.3e}, "
              f"max KKT spread {report['max_kkt_spread']:.3e}")
        ok = report["max_component_gap"] < 1e-5 and report["max_kkt_spread"] < 1e-9
        print("PASS" if ok else "FAIL")
        return 0 if ok else 1

    if args.command == "verify":
        scenario = _scenario(args)
        results = verify(scenario, seed=args.seed)
        failed = 0
        for check in results:
            status = "PASS" if check.passed else "FAIL"
            print(f"{status} {check.name}: {check.detail}")
            failed += 0 if check.passed else 1
        return 0 if failed == 0 else 1

    return 2  # unreachable with required=True


if __name__ == "__main__":
    sys.exit(main())
