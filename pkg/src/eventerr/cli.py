"""Command line entry point ``estimate``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError
from .harness import build_reference, cache_dir, load_config, run
from .problems import CATALOG, make_problem


def _cmd_run(args) -> int:
    config = load_config(args.config)
    rows = run(config)
    for r in rows:
        if r.failed:
            print(f"N={r.N} event={r.event}: {r.error}", file=sys.stderr)
        else:
            rho = "" if r.rho_eff is None else f" rho_eff={r.rho_eff:.4f}"
            e_q = "" if r.e_Q is None else f" e_Q={r.e_Q:.4e}"
            print(f"N={r.N} event={r.event} t_c={r.t_c:.8g} nu={r.nu:.4e}{e_q}{rho}")
    print(f"wrote {config.output}/table.csv")
    return 2 if any(r.failed for r in rows) else 0


def _cmd_reference(args) -> int:
    config = load_config(args.config)
    if config.n_ref is None:
        raise ConfigError("reference needs n_ref")
    ref = build_reference(config.problem, config.n_ref, config.ref_degree, config.gravity,
                          cache_dir(config.output))
    state = "loaded" if ref.loaded else "built"
    print(f"{state} {ref.path}")
    for i, t in enumerate(ref.crossings, start=1):
        print(f"event {i}: t = {t!r}")
    return 0


def _cmd_list(args) -> int:
    for name in CATALOG:
        problem, event = make_problem(name)
        exact = "analytic" if problem.exact is not None else "reference"
        print(f"{name:18s} T={problem.t_final:<8g} R={event.threshold:<8g} truth={exact:9s} {problem.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="estimate", description="Error estimates for the time to an event.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a mesh sweep from a config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("reference", help="build or load the cached reference solution")
    p.add_argument("config")
    p.set_defaults(func=_cmd_reference)
    p = sub.add_parser("list-problems", help="list the problem catalog")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
