"""Command-line entry point: solve / forward / boundary / oracle runs.

Configs are TOML with sections [model], [design], [surrogate], [solver],
[intervention], [forward], [oracle]; every key has a stated default (see
docs/config.md).  All outputs are reproducible byte-for-byte from the
(config, seed) pair.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # python < 3.11
    import tomli as tomllib

from .design import DesignScheme, faustmann_lattice, federico_lattice
from .errors import (ConfigError, InvalidParameters, IrmcError, SolverError,
                     VersionMismatch)
from .intervention import OptimizerMode
from .model import ImpulseModel, make_preset
from .oracle import brute_force_dp, federico_solution
from .policy import (extract_boundary, forward_evaluate, scan_boundary,
                     write_boundary_csv, write_events_csv, write_forward_report)
from .solver import Lookahead, SolverConfig, solve
from .stack_io import load_stack, save_stack

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERSION = 4

_SCHEMES = {
    "explicit_lattice": DesignScheme.EXPLICIT_LATTICE,
    "iid": DesignScheme.IID_UNIFORM,
    "lhs": DesignScheme.LATIN_HYPERCUBE,
    "sobol": DesignScheme.SOBOL,
}
_LOOKAHEADS = {
    "one_step": Lookahead.ONE_STEP,
    "fixed_w": Lookahead.FIXED_W,
    "to_maturity": Lookahead.TO_MATURITY,
}


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")


def build_model(cfg: dict) -> ImpulseModel:
    section = dict(cfg.get("model", {}))
    preset = section.pop("preset", None)
    if preset is None:
        raise ConfigError("config requires [model] preset")
    if "x0" in section and isinstance(section["x0"], list):
        section["x0"] = tuple(section["x0"])
    return make_preset(preset, **section)


def build_solver_config(cfg: dict, model: ImpulseModel, seed=None,
                        threads=None, use_zhat=None) -> SolverConfig:
    design = dict(cfg.get("design", {}))
    surr = dict(cfg.get("surrogate", {}))
    solver = dict(cfg.get("solver", {}))
    inter = dict(cfg.get("intervention", {}))

    scheme_name = design.pop("scheme", "lhs")
    if scheme_name not in _SCHEMES:
        raise ConfigError(f"unknown design scheme {scheme_name!r}")
    scheme = _SCHEMES[scheme_name]
    sites = None
    lattice = design.pop("lattice", None)
    if lattice is not None:
        lattices = {"federico": federico_lattice, "faustmann": faustmann_lattice}
        if lattice not in lattices:
            raise ConfigError(f"unknown lattice preset {lattice!r}")
        sites = lattices[lattice]()[:, None]
    explicit = design.pop("sites", None)
    if explicit is not None:
        sites = np.asarray(explicit, dtype=float)
        if sites.ndim == 1:
            sites = sites[:, None]
    sites_file = design.pop("sites_file", None)
    if sites_file is not None:
        try:
            sites = np.loadtxt(sites_file, delimiter=",", ndmin=2)
        except OSError:
            raise ConfigError(f"sites_file not readable: {sites_file}")
    domain = design.pop("domain", None)
    if domain is None and sites is not None:
        pts = np.atleast_2d(sites)
        domain = np.stack([pts.min(axis=0), pts.max(axis=0)], axis=1)
    if domain is None:
        raise ConfigError("[design] requires a domain (or explicit sites)")
    domain = np.asarray(domain, dtype=float).reshape(model.dim, 2)
    schedule = design.pop("domain_schedule", None)
    if schedule is not None:
        schedule = np.asarray(schedule, dtype=float)
        if schedule.shape != (model.n_steps, model.dim, 2):
            raise ConfigError("[design] domain_schedule must be (K, dim, 2)")

    lk_name = solver.pop("lookahead", "to_maturity")
    if lk_name not in _LOOKAHEADS:
        raise ConfigError(f"unknown lookahead {lk_name!r}")

    mode = inter.pop("mode", None)
    if mode is not None:
        try:
            mode = OptimizerMode(mode)
        except ValueError:
            raise ConfigError(f"unknown intervention mode {mode!r}")

    family = surr.pop("family", "gp")
    if family not in ("gp", "tps"):
        raise ConfigError(f"unknown surrogate family {family!r}")
    n_knots = surr.pop("n_knots", None)
    if n_knots is not None:
        n_knots = int(n_knots)

    out = SolverConfig(
        domain=domain,
        scheme=scheme,
        n_unique=int(design.pop("n_unique", 128)),
        n_rep=int(design.pop("n_rep", 8)),
        sites=sites,
        domain_schedule=schedule,
        surrogate=family,
        kernel=surr.pop("kernel", None),
        lam=surr.pop("lam", "gcv"),
        n_knots=n_knots,
        restarts=int(surr.pop("restarts", 3)),
        lookahead=_LOOKAHEADS[lk_name],
        w=int(solver.pop("w", 1)),
        mpc_mode=bool(solver.pop("mpc", False)),
        mode=mode,
        tie_eps=float(inter.pop("tie_eps", 1e-9)),
        grid_points=int(inter.pop("grid_points", 64)),
        use_zhat=bool(inter.pop("use_zhat", False)),
        seed=int(solver.pop("seed", 0)),
        threads=int(solver.pop("threads", 1)),
    )
    for leftover, section_name in ((design, "design"), (surr, "surrogate"),
                                   (solver, "solver"), (inter, "intervention")):
        if leftover:
            key = sorted(leftover)[0]
            raise ConfigError(f"unknown key {key!r} in [{section_name}]")
    if seed is not None:
        out.seed = int(seed)
    if threads is not None:
        out.threads = int(threads)
    if use_zhat:
        out.use_zhat = True
    return out


def _stack_path(args) -> str:
    if getattr(args, "stack", None):
        return args.stack
    return os.path.join(args.out, "stack.bin")


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    scfg = build_solver_config(cfg, model, seed=args.seed, threads=args.threads,
                               use_zhat=args.use_zhat)
    stack, traces = solve(model, scfg)
    os.makedirs(args.out, exist_ok=True)
    save_stack(stack, os.path.join(args.out, "stack.bin"))
    if args.trace:
        with open(os.path.join(args.out, "traces.jsonl"), "w") as fh:
            for tr in traces:
                fh.write(json.dumps(tr.as_dict(), sort_keys=True) + "\n")
    return EXIT_OK


def cmd_forward(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    fwd = dict(cfg.get("forward", {}))
    inter = dict(cfg.get("intervention", {}))
    mode = inter.get("mode")
    if mode is not None:
        mode = OptimizerMode(mode)
    stack = load_stack(_stack_path(args), terminal=model.terminal_value)
    n_paths = int(fwd.get("n_paths", 10_000))
    if args.n_paths is not None:
        n_paths = int(args.n_paths)
    seed = int(fwd.get("seed", 1))
    if args.seed is not None:
        seed = int(args.seed)
    x0 = fwd.get("x0")
    if args.x0 is not None:
        x0 = [float(v) for v in args.x0.split(",")]
    use_zhat = (bool(fwd.get("use_zhat", False))
                or bool(inter.get("use_zhat", False)) or bool(args.use_zhat))
    report = forward_evaluate(model, stack, x0=x0, n_paths=n_paths, seed=seed,
                              use_zhat=use_zhat, mode=mode,
                              tie_eps=float(inter.get("tie_eps", 1e-9)),
                              grid_points=int(inter.get("grid_points", 64)))
    os.makedirs(args.out, exist_ok=True)
    write_forward_report(report, os.path.join(args.out, "forward_report.json"))
    write_events_csv(report, os.path.join(args.out, "impulse_events.csv"))
    bpath = os.path.join(args.out, "boundary.csv")
    if report.n_events:
        write_boundary_csv(extract_boundary(model, report), bpath)
    else:
        with open(bpath, "w") as fh:
            fh.write("step,s_k,S_k\n")
    return EXIT_OK


def cmd_boundary(args) -> int:
    cfg = load_config(args.config)
    model = build_model(cfg)
    inter = dict(cfg.get("intervention", {}))
    mode = inter.get("mode")
    if mode is not None:
        mode = OptimizerMode(mode)
    stack = load_stack(_stack_path(args), terminal=model.terminal_value)
    boundary = scan_boundary(model, stack, mode=mode,
                             tie_eps=float(inter.get("tie_eps", 1e-9)))
    os.makedirs(args.out, exist_ok=True)
    write_boundary_csv(boundary, os.path.join(args.out, "boundary.csv"))
    return EXIT_OK


def _fmt(x) -> str:
    return format(float(x), ".17g")


def cmd_oracle(args) -> int:
    if args.name == "federico":
        sol = federico_solution(r=args.r, mu=args.mu, sigma=args.sigma,
                                gamma=args.gamma, c0=args.c0, c1=args.c1)
        payload = {"m": sol.m, "C": sol.C, "B": sol.B, "s": sol.s, "S": sol.S,
                   "gamma": sol.gamma, "c0": sol.c0, "c1": sol.c1}
        print(json.dumps(payload, sort_keys=True, indent=2))
        return EXIT_OK
    if args.name == "dp":
        if not args.config:
            raise ConfigError("oracle dp requires --config")
        cfg = load_config(args.config)
        model = build_model(cfg)
        osec = dict(cfg.get("oracle", {}))
        sol = brute_force_dp(model,
                             n_grid=int(osec.get("n_grid", 400)),
                             lo=osec.get("lo"), hi=osec.get("hi"),
                             n_quad=int(osec.get("n_quad", 256)))
        os.makedirs(args.out, exist_ok=True)
        K = model.n_steps
        header = "x," + ",".join(f"k{j}" for j in range(K))
        with open(os.path.join(args.out, "dp_value.csv"), "w") as fh:
            fh.write(header + "\n")
            for i, x in enumerate(sol.grid):
                fh.write(_fmt(x) + "," +
                         ",".join(_fmt(sol.values[k][i]) for k in range(K)) + "\n")
        with open(os.path.join(args.out, "dp_policy.csv"), "w") as fh:
            fh.write(header + "\n")
            for i, x in enumerate(sol.grid):
                fh.write(_fmt(x) + "," +
                         ",".join(_fmt(sol.targets[k][i]) for k in range(K)) + "\n")
        print(json.dumps({"value_at_x0": float(sol.value_at(0, model.x0[0])[0]),
                          "n_grid": len(sol.grid), "n_steps": K},
                         sort_keys=True, indent=2))
        return EXIT_OK
    raise ConfigError(f"unknown oracle {args.name!r}")


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irmc",
                                description="Regression Monte Carlo impulse control")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="train the surrogate stack")
    ps.add_argument("--config", required=True)
    ps.add_argument("--out", required=True)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--threads", type=int, default=None)
    ps.add_argument("--trace", action="store_true")
    ps.add_argument("--use-zhat", action="store_true", dest="use_zhat")
    ps.set_defaults(func=cmd_solve)

    pf = sub.add_parser("forward", help="evaluate the trained policy forward")
    pf.add_argument("--config", required=True)
    pf.add_argument("--out", required=True)
    pf.add_argument("--stack", default=None)
    pf.add_argument("--seed", type=int, default=None)
    pf.add_argument("--n-paths", type=int, default=None, dest="n_paths")
    pf.add_argument("--x0", default=None)
    pf.add_argument("--threads", type=int, default=None)
    pf.add_argument("--use-zhat", action="store_true", dest="use_zhat")
    pf.set_defaults(func=cmd_forward)

    pb = sub.add_parser("boundary", help="scan the per-step action boundary")
    pb.add_argument("--config", required=True)
    pb.add_argument("--out", required=True)
    pb.add_argument("--stack", default=None)
    pb.set_defaults(func=cmd_boundary)

    po = sub.add_parser("oracle", help="reference solutions")
    po.add_argument("name", choices=["federico", "dp"])
    po.add_argument("--config", default=None)
    po.add_argument("--out", default=".")
    po.add_argument("--r", type=float, default=0.08)
    po.add_argument("--mu", type=float, default=-0.07)
    po.add_argument("--sigma", type=float, default=0.25)
    po.add_argument("--gamma", type=float, default=0.5)
    po.add_argument("--c0", type=float, default=-1.0)
    po.add_argument("--c1", type=float, default=-10.0)
    po.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidParameters) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VersionMismatch as exc:
        print(f"stack version error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except IrmcError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
