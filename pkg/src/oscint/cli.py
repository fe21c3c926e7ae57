"""``oscint`` command line interface.

Exit codes: 0 success, 1 configuration error, 2 numerical failure or blow-up.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .harness import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _parse_sweep(items):
    sweep = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        key = key.strip()
        if not sep or key not in ("m", "c", "l", "N"):
            raise ConfigError(f"bad --sweep {item!r}; expected KEY=v1,v2,... with KEY in m,c,l,N")
        try:
            conv = float if key == "c" else int
            vals = [conv(v) for v in values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --sweep values in {item!r}") from exc
        if not vals:
            raise ConfigError(f"empty sweep list for {key}")
        sweep[key] = vals
    return sweep


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not numerical ones
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(
        prog="oscint",
        description="Uniformly accurate integrators for oscillatory Klein-Gordon-type equations.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    p = sub.add_parser("converge", help="error sweep over m, c, l, N with order fits")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", action="append", metavar="KEY=v1,v2,...")
    p.add_argument("--out")

    p = sub.add_parser("quad-demo", help="quadrature error decay table")
    p.add_argument("--rule", required=True, choices=["trapezoid", "gauss", "gram", "double"])
    p.add_argument("--max-n", type=int, dest="max_n")
    return parser


def _solve(args):
    cfg = harness.load_config(args.config)
    return harness.solve(cfg, args.out)


def _converge(args):
    cfg = harness.load_config(args.config)
    sweep = _parse_sweep(args.sweep)
    report = harness.converge(cfg, sweep)
    harness.write_report(report, args.out or cfg.output)
    for row in report.slopes:
        print(f"c={row['c']:g} l={row['l']} N={row['N']}: slope={row['slope']:.3f} "
              f"({row['n_points']} points)")
    for key, u in report.uniformity.items():
        print(f"{key}: uniformity ratio {u['ratio']:.3f}")
    return EXIT_OK


def _quad_demo(args):
    if args.max_n is not None and args.max_n < 1:
        raise ConfigError("--max-n must be positive")
    rows = harness.quad_demo(args.rule, args.max_n)
    n = args.max_n or 5
    print(f"# {args.rule} rule nodes and weights")
    for x, w in harness.rule_table(args.rule, min(n, 12)):
        print(f"# {x: .16f} {w: .16f}")
    sys.stdout.write(harness.csv_text(harness.QUAD_COLUMNS, rows))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"solve": _solve, "converge": _converge, "quad-demo": _quad_demo}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"oscint: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError) as exc:
        print(f"oscint: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
