"""Command-line front end: convergence, EMC, sampling-rate, and comparison runs.

Exit codes: 0 success, 1 configuration/usage error, 2 stability-gate refusal
(the stability report is printed to stderr as JSON). Heavy imports happen
inside `cli` so that `main` can apply the thread-count override first.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_STABILITY = 2

THREADS_ENV = "ENSFEM_THREADS"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; 2 is reserved for stability refusals
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ensfem", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("converge", help="manufactured-solution refinement study")
    conv.add_argument("--mode", choices=["ensemble", "independent"], default="ensemble")
    conv.add_argument("--levels", type=int, default=None)
    conv.add_argument("--degree", type=int, default=None)
    conv.add_argument("--out", default="convergence.csv")

    emc = sub.add_parser("emc", help="seeded ensemble Monte Carlo run")
    emc.add_argument("--j", type=int, default=None, help="sample count")
    emc.add_argument("--seed", type=int, default=None)
    emc.add_argument("--nx", type=int, default=None)
    emc.add_argument("--dt", type=float, default=None)
    emc.add_argument("--sigma", type=float, default=None, help="field amplitude override")
    emc.add_argument("--partition", action="store_true",
                     help="split unstable ensembles into stable subgroups")
    emc.add_argument("--out", default="emc.json")

    rate = sub.add_parser("rate", help="sampling-error decay study")
    rate.add_argument("--j-list", default=None, help="comma-separated sample counts")
    rate.add_argument("--j0", type=int, default=None, help="benchmark sample count")
    rate.add_argument("--replicas", type=int, default=None)
    rate.add_argument("--seed", type=int, default=None)
    rate.add_argument("--nx", type=int, default=None)
    rate.add_argument("--dt", type=float, default=None)
    rate.add_argument("--out", default="rate.csv")

    comp = sub.add_parser("compare", help="shared-matrix vs per-sample comparison")
    comp.add_argument("--j", type=int, default=None)
    comp.add_argument("--seed", type=int, default=None)
    comp.add_argument("--nx", type=int, default=None)
    comp.add_argument("--dt", type=float, default=None)
    comp.add_argument("--out", default="compare.json")

    return parser


def _emc_config(args, stochastic, defaults):
    spec_kwargs = {}
    if getattr(args, "sigma", None) is not None:
        spec_kwargs["sigma"] = args.sigma
    spec = stochastic.RandomFieldSpec(**spec_kwargs)
    kwargs = dict(spec=spec)
    if args.j is not None:
        kwargs["samples"] = args.j
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.nx is not None:
        kwargs["nx"] = args.nx
    if args.dt is not None:
        kwargs["dt"] = args.dt
    if getattr(args, "partition", False):
        kwargs["partition"] = True
    return stochastic.EmcConfig(**kwargs)


def cli(argv: list[str]) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(f"ensfem: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    from . import defaults, harness, stochastic

    try:
        if args.command == "converge":
            rows = harness.run_convergence(
                degree=args.degree if args.degree is not None else defaults.CONVERGENCE["degree"],
                levels=args.levels if args.levels is not None else defaults.CONVERGENCE["levels"],
                mode=args.mode)
            harness.write_text_atomic(args.out, harness.convergence_csv(rows))
            print(json.dumps(rows[-1].stats.to_json_dict()))
            return EXIT_OK

        if args.command == "emc":
            config = _emc_config(args, stochastic, defaults)
            result = stochastic.run_emc(config)
            harness.write_json_atomic(args.out, result.to_json_dict())
            print(json.dumps(result.stats.to_json_dict()))
            return EXIT_OK

        if args.command == "rate":
            j_list = (tuple(int(v) for v in args.j_list.split(","))
                      if args.j_list else defaults.RATE_STUDY["j_list"])
            config = stochastic.EmcConfig(
                samples=max(j_list),
                seed=args.seed if args.seed is not None else defaults.RATE_STUDY["seed"],
                nx=args.nx if args.nx is not None else defaults.RATE_STUDY["nx"],
                dt=args.dt if args.dt is not None else defaults.RATE_STUDY["dt"],
                partition=True)
            result = stochastic.mc_rate_study(
                config, j_list=j_list,
                j_benchmark=args.j0 if args.j0 is not None else defaults.RATE_STUDY["j_benchmark"],
                replicas=args.replicas if args.replicas is not None
                else defaults.RATE_STUDY["replicas"])
            text = "\n".join(result.csv_lines()) + "\n" + json.dumps(result.footer_dict()) + "\n"
            harness.write_text_atomic(args.out, text)
            print(json.dumps(result.footer_dict()))
            return EXIT_OK

        if args.command == "compare":
            config = stochastic.EmcConfig(
                samples=args.j if args.j is not None else defaults.EMC["samples"],
                seed=args.seed if args.seed is not None else defaults.EMC["seed"],
                nx=args.nx if args.nx is not None else defaults.EMC["nx"],
                dt=args.dt if args.dt is not None else defaults.EMC["dt"],
                partition=True)
            result = harness.run_compare(config)
            harness.write_json_atomic(args.out, result.to_json_dict())
            print(json.dumps({"max_field_gap": result.max_field_gap}))
            return EXIT_OK
    except stochastic.StabilityError as exc:
        print(json.dumps(exc.report.to_json_dict()), file=sys.stderr)
        return EXIT_STABILITY
    except ValueError as exc:
        print(f"ensfem: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    raise AssertionError(f"unhandled command {args.command!r}")


def main() -> None:
    threads = os.environ.get(THREADS_ENV)
    if threads:
        # the BLAS pools are already up by the time this runs, so cap them
        # directly; the env vars still cover any later-loaded libraries
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
        try:
            import threadpoolctl
            threadpoolctl.threadpool_limits(int(threads))
        except ImportError:
            pass
    sys.exit(cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
