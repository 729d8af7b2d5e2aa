"""Command-line entry point: ``jointcache <command> ...``.

Thread count for the numerical libraries is taken from
``JOINTCACHE_THREADS`` (default 1) before numpy is imported.
"""

from __future__ import annotations

import os

_threads = os.environ.get("JOINTCACHE_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from dataclasses import asdict, replace  # noqa: E402

import numpy as np  # noqa: E402

from .harness.experiments import (ALGORITHMS, run_comparison, scaling_sweep, solve,  # noqa: E402
                                  write_rows_csv)
from .harness.generate import BENCHMARKS, GenConfig, build, preset, rescale_kappa  # noqa: E402
from .model import (Instance, dumps_instance, feasibility_report, instance_from_dict,  # noqa: E402
                    strategy_from_dict, validate_instance)
from .placement import estimate_marginals, node_plans, write_placements_csv  # noqa: E402
from .results import dumps_result, write_trajectory_csv  # noqa: E402
from .utility import LogShifted, UtilityProfile, utility_from_dict, utility_to_dict  # noqa: E402

log = logging.getLogger("jointcache")


def load_instance(path) -> tuple[Instance, UtilityProfile, dict]:
    """Instance, utility profile and raw JSON from an instance file.

    The optional ``utility`` key holds one utility spec or a list with one
    spec per request; the default is ``ln(lam + 0.1)``.
    """
    with open(path) as fh:
        d = json.load(fh)
    inst = instance_from_dict(d)
    spec = d.get("utility")
    if spec is None:
        fns = LogShifted(0.1)
    elif isinstance(spec, list):
        fns = [utility_from_dict(u) for u in spec]
    else:
        fns = utility_from_dict(spec)
    return inst, UtilityProfile(fns, inst.demands), d


def _gen_config(args) -> GenConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = GenConfig(**json.load(fh))
    else:
        cfg = preset(args.preset)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "kappa", None) is not None and not isinstance(args.kappa, list):
        over["kappa"] = args.kappa
    return replace(cfg, **over)


def _write(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def cmd_gen(args) -> int:
    cfg = _gen_config(args)
    inst = build(cfg)
    _write(dumps_instance(inst, utility=utility_to_dict(LogShifted(0.1)), generator=asdict(cfg),
                          fingerprint=cfg.fingerprint()), args.output)
    return 0


def cmd_solve(args) -> int:
    inst, profile, _ = load_instance(args.instance)
    res = solve(args.alg, inst, profile)
    _write(dumps_result(res), args.output)
    if args.trajectory:
        write_trajectory_csv(res.trajectory, args.trajectory)
    return 0 if res.feasible else 2


def _seeds(args) -> list[int]:
    base = args.seed if args.seed is not None else 0
    return list(range(base, base + args.seeds))


def cmd_compare(args) -> int:
    rows = []
    ok = True
    for seed in _seeds(args):
        cfg = replace(_gen_config(args), seed=seed)
        inst = build(cfg)
        res = run_comparison(inst, UtilityProfile.uniform(inst.demands), args.algs, None,
                             cfg.topology, seed, cfg.kappa, cfg.fingerprint())
        ok &= res.all_feasible
        rows.extend(res.rows())
    write_rows_csv(rows, args.output if args.output not in (None, "-") else sys.stdout)
    return 0 if ok else 2


def cmd_sweep(args) -> int:
    rows = []
    for seed in _seeds(args):
        cfg = replace(_gen_config(args), seed=seed)
        base = build(cfg)
        prof = UtilityProfile.uniform(base.demands)
        for kappa in args.kappa:
            res = run_comparison(rescale_kappa(base, kappa), prof, args.algs, None, cfg.topology, seed,
                                 kappa, cfg.fingerprint())
            rows.extend(res.rows())
    write_rows_csv(rows, args.output if args.output not in (None, "-") else sys.stdout)
    return 0


def cmd_scale(args) -> int:
    inst, profile, d = load_instance(args.instance)
    fns = profile.functions

    def profile_of(demand):
        return UtilityProfile(fns, demand)

    rows = scaling_sweep(inst, profile_of, args.m)
    cols = ["m", "lbsb", "upper_bound", "bound_residual", "ratio", "path_bound", "converged", "feasible"]
    write_rows_csv(rows, args.output if args.output not in (None, "-") else sys.stdout, cols)
    return 0


def cmd_place(args) -> int:
    inst, _, _ = load_instance(args.instance)
    with open(args.strategy) as fh:
        s = strategy_from_dict(json.load(fh))
    if args.output:
        write_placements_csv(inst, s, args.samples, args.output, rng_seed=args.seed)
    plans = node_plans(inst, s)
    worst = 0.0
    free = np.where(inst.pinned, 0.0, s.y)
    for v, plan in enumerate(plans):
        if plan.segments:
            est = estimate_marginals(plan, args.samples, rng_seed=None if args.seed is None else args.seed + v)
            worst = max(worst, float(np.abs(est - free[v]).max()))
    print(json.dumps({"samples": args.samples, "max_marginal_error": worst}))
    return 0


def cmd_validate(args) -> int:
    inst, _, _ = load_instance(args.instance)
    issues = validate_instance(inst)
    out = {"valid": not issues, "issues": issues}
    if args.strategy and not issues:
        with open(args.strategy) as fh:
            s = strategy_from_dict(json.load(fh))
        rep = feasibility_report(inst, s, tol=args.tol)
        out.update(feasible=rep.feasible, max_violation=rep.max_violation,
                   satisfied_ratio=rep.satisfied_ratio)
    print(json.dumps(out, indent=1))
    return 0 if not issues and out.get("feasible", True) else 1


def _add_gen_args(p, kappa_list: bool = False) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="GenConfig JSON file")
    src.add_argument("--preset", default="cycle", choices=sorted(BENCHMARKS), help="benchmark row")
    if kappa_list:
        p.add_argument("--kappa", type=float, nargs="+", required=True, help="looseness values")
    else:
        p.add_argument("--kappa", type=float, help="override looseness")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jointcache", description="Joint caching and rate control.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an instance JSON")
    _add_gen_args(g)
    g.add_argument("--seed", type=int)
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve an instance")
    s.add_argument("instance")
    s.add_argument("--alg", choices=sorted(ALGORITHMS), default="lbsb")
    s.add_argument("--seed", type=int, help="unused by the deterministic solvers; accepted for uniformity")
    s.add_argument("-o", "--output")
    s.add_argument("--trajectory", help="trajectory CSV path")
    s.set_defaults(func=cmd_solve)

    for name, func, kl in (("compare", cmd_compare, False), ("sweep", cmd_sweep, True)):
        c = sub.add_parser(name, help="compare algorithms over seeds" if name == "compare"
                           else "compare algorithms over looseness values")
        _add_gen_args(c, kappa_list=kl)
        c.add_argument("--seed", type=int, help="first seed")
        c.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
        c.add_argument("--algs", nargs="+", choices=sorted(ALGORITHMS),
                       default=["lbsb", "cr", "greedy1", "greedy2"])
        c.add_argument("-o", "--output")
        c.set_defaults(func=func)

    m = sub.add_parser("scale", help="LBSB against the upper bound for scaled demands")
    m.add_argument("instance")
    m.add_argument("--m", type=float, nargs="+", default=[1, 2, 4, 8])
    m.add_argument("--seed", type=int, help="accepted for uniformity")
    m.add_argument("-o", "--output")
    m.set_defaults(func=cmd_scale)

    pl = sub.add_parser("place", help="sample cache placements from a strategy")
    pl.add_argument("instance")
    pl.add_argument("strategy", help="strategy or result JSON with y and r")
    pl.add_argument("--samples", type=int, default=1000)
    pl.add_argument("--seed", type=int)
    pl.add_argument("-o", "--output", help="placements CSV path")
    pl.set_defaults(func=cmd_place)

    v = sub.add_parser("validate", help="check an instance and optionally a strategy")
    v.add_argument("instance")
    v.add_argument("strategy", nargs="?")
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--seed", type=int, help="accepted for uniformity")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
