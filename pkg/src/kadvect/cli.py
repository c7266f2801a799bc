"""Command line entry point: ``kadvect {run,validate,list}``.

Exit codes: 0 all checks pass, 1 a numeric check failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, diagnose, load_config, read_raw

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kadvect", description="Stochastic k-form advection lab")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out", default=None, help="output directory (overrides the config)")
    r.add_argument("--dump-paths", action="store_true", help="also write sampled trajectories")
    r.add_argument("--threads", type=int, default=1, help="worker threads for path chunks")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.add_argument("--seed", type=int, default=None)
    sub.add_parser("list", help="list scenarios")
    return p


def _validate(args) -> int:
    try:
        raw = read_raw(args.config)
    except OSError as e:
        print(f"error: cannot read {args.config}: {e.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        for d in e.diagnostics:
            print(d)
        return EXIT_USAGE
    if isinstance(raw, dict) and args.seed is not None:
        raw = {**raw, "seed": args.seed}
    diags = diagnose(raw)
    for d in diags:
        print(d)
    if not diags:
        print("config is valid")
    return EXIT_USAGE if diags else EXIT_PASS


def _run(args) -> int:
    from .scenarios import ScenarioError, run  # heavy imports only when running

    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except OSError as e:
        print(f"error: cannot read {args.config}: {e.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as e:
        for d in e.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_USAGE
    try:
        man = run(cfg, threads=args.threads, dump_paths=args.dump_paths)
    except (ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    for name, ok in man.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"{cfg.scenario}: {'pass' if man.passed else 'FAIL'} "
          f"({man.wall_time_s:.1f} s, outputs in {cfg.output})")
    return EXIT_PASS if man.passed else EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:  # argparse exits with 2 on usage errors
        return int(e.code) if e.code is not None else EXIT_USAGE
    if args.command == "list":
        from .scenarios import list_scenarios
        print(list_scenarios())
        return EXIT_PASS
    if args.command == "validate":
        return _validate(args)
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
