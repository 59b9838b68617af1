"""Command line entry point.

Exit status: 0 success, 2 configuration error, 3 scenario error,
4 budget or cap exhaustion.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .adaptation import Estimate, m_eps_adaptive, nested_budget_check
from .config import parse_config
from .diagnostics import telescoping_verify
from .errors import AdaptDiagError, ConfigError
from .markov import m_eps
from .runner import run
from .scenarios import build_scenario, list_scenarios


def _theta(scenario, text: str):
    try:
        return scenario.family.parse_theta(text)
    except ValueError as exc:
        raise ConfigError(f"bad parameter {text!r}: {exc}", "theta") from None


def cmd_list(args) -> int:
    for sid, desc in list_scenarios():
        print(f"{sid}\t{desc}")
    return 0


def cmd_run(args) -> int:
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cfg = parse_config(text)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.format is not None:
        changes["formats"] = tuple(f.strip() for f in args.format.split(",") if f.strip())
    if args.workers is not None:
        changes["workers"] = args.workers
    if changes:
        cfg = replace(cfg, **changes)
    files = run(cfg)
    for path in files.paths:
        print(path)
    return 0


def cmd_meps(args) -> int:
    sc = build_scenario(args.scenario)
    print(m_eps(args.x, _theta(sc, args.theta), sc.family, args.eps, args.cap))
    return 0


def cmd_adaptime(args) -> int:
    sc = build_scenario(args.scenario)
    mode = "exact"
    if args.R is not None:
        # an estimate may simulate R replicates out to the cap
        nested_budget_check(args.R * args.cap, args.budget)
        mode = Estimate(args.R, args.seed)
    print(m_eps_adaptive(args.x, _theta(sc, args.theta), sc.policy, sc.family, args.eps, args.cap, mode))
    return 0


def cmd_telescope(args) -> int:
    sc = build_scenario(args.scenario)
    thetas = [_theta(sc, t.strip()) for t in args.thetas.split(",")]
    chk = telescoping_verify(thetas, sc.family, args.base_index)
    print(f"lhs={chk.lhs!r} eta={chk.eta!r} bound={chk.bound!r} ok={str(chk.ok).lower()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptdiag", description="Adaptive MCMC convergence diagnostics")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list built-in scenarios").set_defaults(func=cmd_list)

    p = sub.add_parser("run", help="run all diagnostics from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", help="comma-separated subset of json,csv")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    for name, func, helptext in [("meps", cmd_meps, "frozen-kernel convergence time"),
                                 ("adaptime", cmd_adaptime, "adaptive convergence time")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--scenario", required=True)
        p.add_argument("--x", type=int, default=0)
        p.add_argument("--theta", required=True)
        p.add_argument("--eps", type=float, required=True)
        p.add_argument("--cap", type=int, default=100_000)
        if name == "adaptime":
            p.add_argument("--R", type=int, help="estimate with R replicates instead of exactly")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--budget", type=int, default=10**9, help="max replicate-steps for an estimate")
        p.set_defaults(func=func)

    p = sub.add_parser("telescope", help="check the telescoping bound on a parameter sequence")
    p.add_argument("--scenario", required=True)
    p.add_argument("--thetas", required=True, help="comma-separated parameters")
    p.add_argument("--base-index", type=int, default=0)
    p.set_defaults(func=cmd_telescope)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except AdaptDiagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
