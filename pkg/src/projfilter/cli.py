"""Command line entry point: ``projfilter {run,sweep-epsilon,probe-orders,validate} CONFIG``.

Any config key can be overridden as ``--section.key VALUE``; ``--out DIR``
sets the output directory (the ``PROJFILTER_OUT`` environment variable takes
precedence over both).  Exit codes: 0 success, 2 config error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import CONFIG_KEYS, epsilon_sweep, load_config, probe_orders, run_scenario, validate
from .errors import ConfigError, NumericalError

log = logging.getLogger("projfilter")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parse_overrides(extra: list[str]) -> dict:
    overrides = {}
    i = 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument {arg!r}")
        key, sep, value = arg[2:].partition("=")
        if not sep:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {arg}")
            i += 1
            value = extra[i]
        if key == "out":
            key = "output.dir"
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown option --{key}")
        overrides[key] = value
        i += 1
    return overrides


def _cmd_run(config) -> int:
    results, summary = run_scenario(config)
    for r in results:
        for name, step in r.truncated.items():
            if step is not None:
                log.warning("seed %d: %s truncated at step %d (%s)", r.seed, name, step, r.flags[name])
    k = len(summary.times) - 1
    print(f"{'filter':<12}{'res_l2(T)':>14}{'res_hell(T)':>14}")
    for name in config.roster:
        print(f"{name:<12}{summary.res_l2[name][k]:>14.6g}{summary.res_hell[name][k]:>14.6g}")
    print(f"wrote {len(results)} run file(s) and summary.csv to {config.output_dir()}")
    return EXIT_OK


def _cmd_sweep(config) -> int:
    result = epsilon_sweep(config)
    for name, slope in result.slopes.items():
        shown = "exact match" if result.exact_match[name] else f"{slope:.3f}"
        print(f"slope |A_{name} - A_adf| vs epsilon: {shown}")
    print(f"wrote epsilon_sweep.csv to {config.output_dir()}")
    return EXIT_OK


def _cmd_probe(config) -> int:
    table = probe_orders(config)
    for row in table.rows:
        slope = "degenerate" if row["degenerate"] else f"{row['slope']:.3f}"
        print(f"{row['kind']:<12}{row['criterion']:<26}{slope:>12}  discarded={row['discarded']}")
    print(f"wrote probe_orders.csv to {config.output_dir()}")
    return EXIT_OK


def _cmd_validate(config) -> int:
    checks = validate(config)
    for c in checks:
        print(f"{'ok  ' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERICAL


COMMANDS = {"run": _cmd_run, "sweep-epsilon": _cmd_sweep, "probe-orders": _cmd_probe, "validate": _cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="projfilter", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="TOML scenario file")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config, _parse_overrides(extra))
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
