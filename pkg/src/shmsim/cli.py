"""Command-line entry points: validate, run, compare, plot.

Exit codes: 0 on success, 2 on config/usage errors (with a machine-readable
JSON error report on stderr), 1 on unexpected failures.
"""

from __future__ import annotations

import argparse
import json
import sys

from .scenario import (
    MODES,
    PLOT_KEYS,
    ConfigError,
    compare_schemes,
    emit_plotdata,
    run_scenario,
    validate_config,
)


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _fail(errors, code=2):
    sys.stderr.write(json.dumps({"error": "invalid scenario", "details": list(errors)}) + "\n")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shmsim",
        description="Dependable WSN-based structural health monitoring simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="validate a scenario config")
    p_val.add_argument("config")

    p_run = sub.add_parser("run", help="run a scenario end to end")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", required=True, help="output directory")

    p_cmp = sub.add_parser("compare", help="run several schemes on identical seeds")
    p_cmp.add_argument("config")
    p_cmp.add_argument("--modes", required=True, help=f"comma list from {','.join(MODES)}")
    p_cmp.add_argument("--out", required=True)

    p_plot = sub.add_parser("plot", help="emit plot data from a finished run")
    p_plot.add_argument("run_dir")
    p_plot.add_argument("--which", required=True, help=f"one of {','.join(PLOT_KEYS)}")
    p_plot.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            _, resolved = validate_config(_load_config(args.config))
            print(json.dumps({"valid": True, "mode": resolved["mode"]}))
            return 0
        if args.command == "run":
            raw = _load_config(args.config)
            if args.seed is not None:
                raw["seed"] = args.seed
            manifest = run_scenario(raw, args.out)
            print(json.dumps({"ok": True, "out": args.out, "outputs": manifest.outputs}))
            return 0
        if args.command == "compare":
            raw = _load_config(args.config)
            path = compare_schemes(raw, args.modes.split(","), args.out)
            print(json.dumps({"ok": True, "table": path}))
            return 0
        if args.command == "plot":
            path = emit_plotdata(args.run_dir, args.which, args.out)
            print(json.dumps({"ok": True, "plot": path}))
            return 0
    except ConfigError as exc:
        return _fail(exc.errors)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail([str(exc)])
    except Exception as exc:  # unexpected: report, nonzero exit
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "details": [str(exc)]}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
