"""Command-line entry point: ``qtrack run | compare | validate``."""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import ConfigError, QTrackError
from .harness import compare, load_config, run

EXIT_USAGE = 1


def _run_one(config_path, out, seed, strict):
    cfg = load_config(config_path)
    report, _ = run(cfg, out_dir=out, strict=strict, seed=seed)
    return report.to_dict()


def _summary(path, rep):
    phi = rep["final_phi"]
    phi_txt = "n/a" if phi is None else f"{phi:.9f}"
    return (f"{path}: {rep['algorithm']} stop={rep['stop_reason']} phi={phi_txt} "
            f"phi_max={rep['phi_max']:.9f} iterations={rep['iterations']} "
            f"pathlength={rep['pathlength']:.6f} exit={rep['exit_code']}")


def cmd_run(args):
    configs = args.config
    if len(configs) > 1 and args.out is None:
        print("several configs need --out; each run writes to <out>/<config stem>",
              file=sys.stderr)
        return EXIT_USAGE
    outs = []
    for c in configs:
        if args.out is None:
            outs.append(None)
        elif len(configs) == 1:
            outs.append(args.out)
        else:
            outs.append(str(Path(args.out) / Path(c).stem))
    jobs = max(1, args.jobs)
    try:
        if jobs == 1 or len(configs) == 1:
            reports = [_run_one(c, o, args.seed, args.strict) for c, o in zip(configs, outs)]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futs = [pool.submit(_run_one, c, o, args.seed, args.strict)
                        for c, o in zip(configs, outs)]
                reports = [f.result() for f in futs]
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QTrackError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for c, rep in zip(configs, reports):
        print(_summary(c, rep))
        if rep.get("error"):
            print(f"  {rep['error']}", file=sys.stderr)
    return max(rep["exit_code"] for rep in reports)


def cmd_compare(args):
    try:
        rows = compare(args.reports, args.out)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    failed = [r for r in rows if r["error"]]
    for r in failed:
        print(f"{r['path']}: {r['error']}", file=sys.stderr)
    if args.out is None:
        cols = ["path", "algorithm", "iterations", "pathlength", "final_phi", "compatible"]
        print(",".join(cols))
        for r in rows:
            print(",".join("" if r[c] is None else str(r[c]) for c in cols))
    return EXIT_USAGE if any("cannot read" in r["error"] for r in failed) else 0


def cmd_validate(args):
    status = 0
    for path in args.config:
        try:
            cfg = load_config(path)
        except (ConfigError, QTrackError) as exc:
            print(f"{path}: invalid: {exc}", file=sys.stderr)
            status = EXIT_USAGE
            continue
        print(f"{path}: ok")
        if args.echo:
            print(json.dumps(_plain(cfg.echo()), indent=2, sort_keys=True))
    return status


def _plain(x):
    from .harness import _jsonable
    return _jsonable(x)


def build_parser():
    parser = argparse.ArgumentParser(prog="qtrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one or more configured runs")
    p_run.add_argument("--config", action="append", required=True, metavar="PATH",
                       help="configuration file (repeatable)")
    p_run.add_argument("--out", metavar="DIR", help="output directory")
    p_run.add_argument("--seed", type=int, help="override the configured seed")
    p_run.add_argument("--strict", action="store_true", default=None,
                       help="abort on ill-conditioned correlation matrices")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel runs for several configs")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate several run reports")
    p_cmp.add_argument("reports", nargs="+", help="report.json files or run directories")
    p_cmp.add_argument("--out", metavar="CSV", help="write the table to this CSV file")
    p_cmp.set_defaults(func=cmd_compare)

    p_val = sub.add_parser("validate", help="check configuration files")
    p_val.add_argument("--config", action="append", required=True, metavar="PATH")
    p_val.add_argument("--echo", action="store_true", help="print the config with defaults")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
