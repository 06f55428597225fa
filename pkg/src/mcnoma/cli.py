"""Command-line front end: ``python -m mcnoma {scenario,solve,sweep,outage}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .channel import Scenario, SystemConfig, sample_links
from .report import INFEASIBLE, SolverReport
from .sic import Allocation

log = logging.getLogger(__name__)

SOLVE_METHODS = ("bnb", "dc", "oma", "random", "equal-rate", "oracle")


# --- helpers ------------------------------------------------------------------

def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def build_config(args) -> SystemConfig:
    """Flags override the ``--config`` file, which overrides the defaults."""
    values = {}
    if getattr(args, "config", None):
        values.update(_load_json(args.config))
    flags = {"n_subcarriers": args.nf, "n_users": args.users, "seed": args.seed,
             "err_var": args.kappa2}
    if args.rate is not None:
        flags["rate_range"] = (args.rate, args.rate)
    values.update({k: v for k, v in flags.items() if v is not None})
    values.setdefault("n_subcarriers", 8)
    values.setdefault("n_users", 12)
    known = {f.name for f in dataclasses.fields(SystemConfig)}
    unknown = set(values) - known
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    cfg = SystemConfig(**values)
    nf, m = cfg.n_subcarriers, cfg.n_users
    if not nf <= m <= 2 * nf:
        warnings.warn(f"N_F={nf}, M={m} is outside the overloaded range N_F <= M <= 2 N_F")
    return cfg


def load_allocation(path, scenario: Scenario | None = None) -> Allocation:
    alloc = Allocation.from_dict(_load_json(path))
    if scenario is not None:
        errs = alloc.check(scenario.rate_total)
        if errs:
            raise SystemExit(f"allocation {path} is invalid: {'; '.join(errs)}")
    return alloc


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with SystemConfig fields")
    p.add_argument("--nf", type=int, help="number of subcarriers")
    p.add_argument("--users", type=int, help="number of users")
    p.add_argument("--seed", type=int)
    p.add_argument("--kappa2", type=float, help="channel estimation error variance")
    p.add_argument("--rate", type=float, help="common target rate (bit/s/Hz)")


# --- commands -----------------------------------------------------------------

def cmd_scenario(args) -> int:
    cfg = build_config(args)
    sc = sample_links(cfg)
    _write_json(args.output, sc.to_dict())
    return 0


def solve_scenario(method: str, sc: Scenario, eps: float = 0.01, seed: int = 0,
                   time_limit=None):
    from . import baselines, bnb, dc

    rng = np.random.default_rng(seed)
    if method == "bnb":
        return bnb.solve_bnb(sc, eps=eps, time_limit=time_limit)
    if method == "dc":
        return dc.solve_dc(sc, eps=eps)
    if method == "oma":
        return baselines.solve_oma(sc, rng)
    if method == "random":
        return baselines.solve_random_pairing(sc, rng)
    if method in ("equal-rate", "equal_rate"):
        return baselines.solve_equal_rate(sc)
    if method == "oracle":
        alloc, value = baselines.brute_force_oracle(sc)
        status = "OPTIMAL" if alloc is not None else INFEASIBLE
        return alloc, SolverReport("oracle", status, 1, value, [value], alloc)
    raise ValueError(f"unknown method {method!r}")


def cmd_solve(args) -> int:
    sc = Scenario.from_dict(_load_json(args.input))
    alloc, rep = solve_scenario(args.method, sc, args.eps, args.seed, args.time_limit)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if alloc is not None:
        _write_json(out / "allocation.json", alloc.to_dict())
    _write_json(out / "report.json", rep.to_dict())
    print(f"{rep.method} {rep.status} power={rep.objective:.6g} W iterations={rep.iterations}")
    return rep.exit_code


def cmd_sweep(args) -> int:
    from .experiments import SweepSpec, run_sweep, summarize, summary_csv, trials_csv

    base = build_config(args)
    values = [float(v) for v in args.values.split(",")]
    spec = SweepSpec(args.axis, values, args.trials, tuple(args.methods.split(",")), base,
                     seed=args.seed or 0, bnb_time_limit=args.time_limit)
    rows = run_sweep(spec)
    text = summary_csv(summarize(rows), args.output)
    if args.trials_output:
        trials_csv(rows, args.trials_output)
    if args.output is None:
        sys.stdout.write(text)
    return 0


def cmd_outage(args) -> int:
    from .outage import monte_carlo_outage, naive_allocation

    sc = Scenario.from_dict(_load_json(args.input))
    if args.naive:
        alloc = naive_allocation(sc)
    elif args.allocation:
        alloc = load_allocation(args.allocation, sc)
    else:
        raise SystemExit("need --allocation or --naive")
    res = monte_carlo_outage(alloc, sc, args.trials, np.random.default_rng(args.seed))
    text = res.to_csv(args.output)
    if args.output is None:
        sys.stdout.write(text)
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m mcnoma",
                                 description="Multicarrier NOMA resource allocation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="generate a scenario file")
    p.add_argument("action", choices=["gen"])
    _add_config_flags(p)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("solve", help="solve one scenario")
    p.add_argument("--method", choices=SOLVE_METHODS, default="dc")
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0, help="seed for randomised baselines")
    p.add_argument("--time-limit", type=float, default=None, help="B&B wall-clock budget (s)")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="parameter sweep to CSV")
    p.add_argument("--axis", choices=["rate", "kappa2", "users", "RATE", "KAPPA2", "USERS"],
                   required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--trials", type=_positive_int, default=50)
    p.add_argument("--methods", default="dc,oma")
    p.add_argument("--time-limit", type=float, default=600.0, help="B&B budget per trial (s)")
    _add_config_flags(p)
    p.add_argument("-o", "--output")
    p.add_argument("--trials-output", help="optional per-trial CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("outage", help="Monte Carlo outage check")
    p.add_argument("--trials", type=_positive_int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-a", "--allocation")
    p.add_argument("--naive", action="store_true", help="use the perfect-CSIT allocation")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_outage)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)
