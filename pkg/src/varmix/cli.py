"""Command-line entry point: ``python -m varmix <command> [flags]``."""
import argparse
import sys

from . import harness


def build_parser():
    p = argparse.ArgumentParser(prog="varmix", description="Variance-aware linear bandit and mixture-MDP experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for kind in harness.KINDS:
        s = sub.add_parser(kind, help=f"run the {kind} experiment")
        s.add_argument("--config", help="TOML config; defaults are used when omitted")
        s.add_argument("--seeds", type=int, help="number of seeds (overrides the config)")
        s.add_argument("--base-seed", type=int, help="base seed (overrides the config)")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sub.add_parser("check", help="run the invariant checks")
    return p


def load(kind, args):
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = harness.parse_config(fh.read())
        if cfg.kind != kind:
            raise harness.ConfigError([f"kind: config is for {cfg.kind!r}, command is {kind!r}"])
    else:
        cfg = harness.default_config(kind)
    data = cfg.to_dict()
    if args.seeds is not None:
        data["seeds"], data["seed_count"] = [], args.seeds
    if args.base_seed is not None:
        data["base_seed"] = args.base_seed
    if args.out is not None:
        data["out"] = args.out
    return harness.config_from_dict(data)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "check":
        return 1 if harness.run_checks() else 0
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load(args.command, args)
    except harness.ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return harness.run_suite(cfg, jobs=args.jobs)


if __name__ == "__main__":
    sys.exit(main())
