"""Command-line entry points.

Every run persists a result record (JSON) carrying the fully resolved
configuration, its hash, timestamps and the numeric outputs, so any number in
an output file is traceable to the exact invocation that produced it.  All
files are written atomically (temp file + rename in the target directory).

Exit codes: 0 success, 2 solver failure, 3 invalid input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .behaviour import (
    Scenario,
    behaviour_from_json,
    behaviour_to_json,
    validate_behaviour,
)
from .fock import fock_oracle_distribution
from .guessing import (
    GuessingProblem,
    build_guessing_sdp,
    dump_conic_instance,
    extract_bell_inequality,
    resolve_solver,
    solve_guessing,
)
from .optimizer import N_SCAN, OptimizationConfig, optimize_randomness
from .spdc import (
    Efficiency,
    SetupParams,
    assemble_behaviour,
    pattern_to_outcomes,
    setting_distribution,
)
from .studies import (
    StudySpec,
    binning_disadvantage,
    eta_scan_study,
    one_detector_comparison,
    table1_study,
    write_csv,
)

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_INPUT = 3

LEVEL_ALIASES = {"1": "1", "1ab": "1+AB", "1+AB": "1+AB", "2": "2"}


class InputError(Exception):
    pass


class SolverFailure(Exception):
    pass


def atomic_write(path, text):
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_record(out_dir, name, config, payload):
    record = {
        "artifactVersion": __version__,
        "config": config,
        "configHash": config_hash(config),
        "startedAt": config.get("_startedAt"),
        "finishedAt": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "results": payload,
    }
    atomic_write(os.path.join(out_dir, name), json.dumps(record, indent=1))
    return record


def parse_scenario(text):
    parts = [int(v) for v in text.split(",")]
    if len(parts) == 2:
        parts += [4, 4]
    if len(parts) != 4:
        raise InputError(f"scenario must be mA,mB[,oA,oB], got {text!r}")
    return Scenario(*parts)


def parse_grid(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as e:
        raise InputError(str(e))


def load_behaviour(path):
    try:
        with open(path) as f:
            p = behaviour_from_json(f.read())
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"cannot load behaviour from {path}: {e}")
    bad = validate_behaviour(p)
    if bad:
        worst = max(bad, key=lambda v: v[2])
        raise InputError(f"invalid behaviour: {worst[0]} ({worst[1]}, "
                         f"magnitude {worst[2]:.3g})")
    return p


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dicert",
        description="Certify device-independent randomness from optical "
                    "Bell-experiment statistics.")
    parser.add_argument("--config", help="JSON file with default option values")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, target=True):
        p.add_argument("--level", default="1ab", choices=sorted(LEVEL_ALIASES),
                       help="relaxation level (default 1ab)")
        p.add_argument("--solver", default=None,
                       help="conic solver (env DICERT_SOLVER overrides)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel grid/scenario workers")
        if target:
            p.add_argument("--target", default="global",
                           choices=("global", "local"))
            p.add_argument("--x-star", type=int, default=0)
            p.add_argument("--y-star", type=int, default=0)

    p = sub.add_parser("certify", help="certify one behaviour file")
    p.add_argument("--behaviour", required=True, help="behaviour JSON file")
    p.add_argument("--dump-sdp", action="store_true",
                   help="also dump the conic instance")
    common(p)

    p = sub.add_parser("optimize", help="optimize the setup at fixed eta")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--scenario", default="2,2", help="mA,mB[,oA,oB]")
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--max-evals", type=int, default=400)
    p.add_argument("--n-values", default=",".join(str(n) for n in N_SCAN))
    common(p)

    p = sub.add_parser("scan", help="three-pipeline efficiency scan")
    p.add_argument("--eta-grid", default="0.83,0.85,0.9,0.95,1.0")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--max-evals", type=int, default=200)
    common(p, target=False)

    p = sub.add_parser("binning", help="binning-disadvantage study")
    p.add_argument("--eta-grid", default="0.85,0.9,0.95,0.99")
    common(p, target=False)

    p = sub.add_parser("one-detector", help="one- vs two-detector comparison")
    p.add_argument("--eta-grid", default="0.78,1.0")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--max-evals", type=int, default=200)
    common(p, target=False)

    p = sub.add_parser("table1", help="local randomness per scenario")
    p.add_argument("--scenarios", default="2,2;3,2;3,3",
                   help="semicolon-separated mA,mB pairs")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--max-evals", type=int, default=300)
    common(p, target=False)

    p = sub.add_parser("bell-dual", help="certifying inequality for a setup")
    p.add_argument("--params", help="comma list N,g1,g2,thA1,phA1,...")
    p.add_argument("--behaviour", help="behaviour JSON file (alternative)")
    p.add_argument("--eta", type=float, default=1.0)
    common(p)

    p = sub.add_parser("oracle-check",
                       help="Gaussian vs Fock click-statistics cross-check")
    p.add_argument("--tolerance", type=float, default=1e-8)
    common(p, target=False)
    return parser


def resolved_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "config"}
    cfg["solver"] = resolve_solver(args.solver)
    cfg["level"] = LEVEL_ALIASES[args.level]
    cfg["_startedAt"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    return cfg


def _cmd_certify(args, cfg):
    p = load_behaviour(args.behaviour)
    level = cfg["level"]
    prob = GuessingProblem(p, args.target, args.x_star, args.y_star, level)
    if args.dump_sdp:
        inst = build_guessing_sdp(prob)
        path = os.path.join(args.out, "instance.sdp")
        os.makedirs(args.out, exist_ok=True)
        with open(path, "w") as f:
            dump_conic_instance(inst, f)
    result = solve_guessing(prob, solver=cfg["solver"])
    if result.solver_status == "failed":
        raise SolverFailure("guessing SDP failed")
    write_record(args.out, "certify.json", cfg, result.to_dict())
    print(f"minEntropy {result.min_entropy:.6f} bits "
          f"(gUpper {result.g_upper:.6f}, {result.solver_status})")
    return EXIT_OK


def _cmd_optimize(args, cfg):
    scenario = parse_scenario(args.scenario)
    n_values = tuple(int(v) for v in args.n_values.split(","))
    config = OptimizationConfig(strategy="multistart", restarts=args.restarts,
                                max_sdp_evals=args.max_evals, seed=args.seed,
                                n_values=n_values)
    target = (("global", args.x_star, args.y_star)
              if args.target == "global" else ("local", args.x_star))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "trace.log"), "a") as log:
        trace = optimize_randomness(args.eta, scenario, target, cfg["level"],
                                    config=config, solver=cfg["solver"],
                                    log_file=log)
    payload = {
        "best": trace.best_result.to_dict(),
        "bestParams": trace.best_params.to_vector().tolist(),
        "entanglementRatio": trace.entanglement_ratio,
        "maxSqueezing": trace.max_squeezing,
        "nEvaluations": len(trace.evaluations),
    }
    write_record(args.out, "optimize.json", cfg, payload)
    print(f"best minEntropy {trace.best_min_entropy:.6f} bits at "
          f"P = {np.round(trace.best_params.to_vector(), 4).tolist()}")
    return EXIT_OK


def _run_grid(args, cfg, fn, grid, csv_name, study, scenarios=()):
    config = OptimizationConfig(restarts=getattr(args, "restarts", 2),
                                max_sdp_evals=getattr(args, "max_evals", 200),
                                seed=args.seed)
    spec = StudySpec(study, tuple(grid), tuple(scenarios), cfg["level"],
                     config, cfg["solver"])
    if args.jobs > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            chunks = list(pool.map(lambda e: fn([e]), grid))
        records = [r for chunk in chunks for r in chunk]
    else:
        records = fn(list(grid))
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, csv_name), records,
              preamble=[f"study={study} configHash={config_hash(cfg)}",
                        "columns: see header row; bits = certified "
                        "min-entropy lower bound"])
    atomic_write(os.path.join(args.out, f"{study}.spec.json"), spec.to_json())
    write_record(args.out, f"{study}.json", cfg, records)
    return records


def _cmd_scan(args, cfg):
    grid = parse_grid(args.eta_grid)
    config = OptimizationConfig(restarts=args.restarts,
                                max_sdp_evals=args.max_evals, seed=args.seed)

    def fn(g):
        return eta_scan_study(g, cfg["level"], config, cfg["solver"])

    records = _run_grid(args, cfg, fn, grid, "eta_scan.csv", "eta-scan")
    for r in records:
        print(f"eta={r['eta']:.3f} optimal={r['bits_optimal']:.4f} "
              f"binned={r['bits_binned']:.4f} chsh={r['bits_chsh']:.4f}")
    return EXIT_OK


def _cmd_binning(args, cfg):
    grid = parse_grid(args.eta_grid)

    def fn(g):
        return binning_disadvantage(g, cfg["level"], cfg["solver"])

    records = _run_grid(args, cfg, fn, grid, "binning.csv",
                        "binning-disadvantage")
    for r in records:
        print(f"eta={r['eta']:.3f} full={r['bits_full']:.4f} "
              f"BB={r['bits_BB']:.4f} BB'={r['bits_BBprime']:.4f}")
    return EXIT_OK


def _cmd_one_detector(args, cfg):
    grid = parse_grid(args.eta_grid)
    config = OptimizationConfig(restarts=args.restarts,
                                max_sdp_evals=args.max_evals, seed=args.seed)

    def fn(g):
        return one_detector_comparison(g, cfg["level"], config, cfg["solver"])

    records = _run_grid(args, cfg, fn, grid, "one_detector.csv",
                        "one-detector")
    for r in records:
        print(f"eta={r['eta']:.3f} 2det(g/l)={r['bits_global_2det']:.4f}/"
              f"{r['bits_local_2det']:.4f} 1det(g/l)="
              f"{r['bits_global_1det']:.4f}/{r['bits_local_1det']:.4f}")
    return EXIT_OK


def _cmd_table1(args, cfg):
    try:
        scenarios = [tuple(int(v) for v in s.split(","))
                     for s in args.scenarios.split(";")]
    except ValueError as e:
        raise InputError(str(e))
    config = OptimizationConfig(restarts=args.restarts,
                                max_sdp_evals=args.max_evals, seed=args.seed)

    def fn(scen):
        return table1_study(scen, cfg["level"], config, cfg["solver"],
                            eta=args.eta)

    records = _run_grid(args, cfg, lambda g: fn([tuple(s) for s in g]),
                        scenarios, "table1.csv", "table1",
                        scenarios=scenarios)
    for r in records:
        star = "*" if r["starred"] else ""
        print(f"{r['scenario']}{star} local bits {r['bits_local']:.4f} "
              f"(x*={r['x_star']}, {r['status']})")
    return EXIT_OK


def _cmd_bell_dual(args, cfg):
    if (args.params is None) == (args.behaviour is None):
        raise InputError("give exactly one of --params or --behaviour")
    if args.params is not None:
        try:
            vec = np.array([float(v) for v in args.params.split(",")])
            params = SetupParams.from_vector(vec)
        except ValueError as e:
            raise InputError(str(e))
        p = assemble_behaviour(params, Efficiency(args.eta))
    else:
        p = load_behaviour(args.behaviour)
    prob = GuessingProblem(p, args.target, args.x_star, args.y_star,
                           cfg["level"])
    result = solve_guessing(prob, solver=cfg["solver"])
    if result.solver_status == "failed":
        raise SolverFailure("guessing SDP failed")
    functional = extract_bell_inequality(result)
    payload = result.to_dict()
    payload["dualTableCG"] = functional.cg.tolist()
    payload["dualTableRescaled"] = extract_bell_inequality(
        result, rescale_to=np.abs(functional.cg).max()).cg.tolist()
    write_record(args.out, "bell_dual.json", cfg, payload)
    print(f"gUpper {result.g_upper:.6f} minEntropy {result.min_entropy:.6f}; "
          f"dual table shape {functional.cg.shape}")
    return EXIT_OK


def oracle_check(tolerance=1e-8, seed=0):
    """Gaussian vs Fock click statistics over the documented lattice."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        angles_a = tuple(zip(rng.uniform(0, np.pi, 2),
                             rng.uniform(0, 2 * np.pi, 2)))
        angles_b = tuple(zip(rng.uniform(0, np.pi, 2),
                             rng.uniform(0, 2 * np.pi, 2)))
        for n in (1, 2):
            for g1, g2 in ((0.15, 0.15), (0.1, 0.05)):
                params = SetupParams(n, g1, g2, angles_a, angles_b)
                for eta in (0.5, 0.8, 1.0):
                    for x in range(2):
                        for y in range(2):
                            gauss = pattern_to_outcomes(setting_distribution(
                                params, Efficiency(eta), x, y))
                            fock = fock_oracle_distribution(
                                params, Efficiency(eta), x, y)
                            worst = max(worst,
                                        float(np.abs(gauss - fock).max()))
    return worst, worst <= tolerance


def _cmd_oracle_check(args, cfg):
    worst, ok = oracle_check(args.tolerance, args.seed)
    write_record(args.out, "oracle_check.json", cfg,
                 {"maxDiscrepancy": worst, "tolerance": args.tolerance,
                  "passed": bool(ok)})
    print(f"max Gaussian/Fock discrepancy {worst:.3e} "
          f"({'OK' if ok else 'FAIL'} at {args.tolerance:.0e})")
    return EXIT_OK if ok else EXIT_SOLVER


COMMANDS = {
    "certify": _cmd_certify,
    "optimize": _cmd_optimize,
    "scan": _cmd_scan,
    "binning": _cmd_binning,
    "one-detector": _cmd_one_detector,
    "table1": _cmd_table1,
    "bell-dual": _cmd_bell_dual,
    "oracle-check": _cmd_oracle_check,
}


def main(argv=None):
    parser = build_parser()
    # config file values sit between defaults and explicit flags
    args, _ = parser.parse_known_args(argv)
    if getattr(args, "config", None):
        try:
            with open(args.config) as f:
                defaults = json.load(f)
        except (OSError, ValueError) as e:
            print(f"error: cannot read config file: {e}", file=sys.stderr)
            return EXIT_INPUT
        parser.set_defaults(**defaults)
        # subparsers resolve their own defaults, so push the overrides down
        # (only for options the subcommand actually declares)
        for action in parser._subparsers._group_actions:
            for sub in action.choices.values():
                known = {a.dest for a in sub._actions}
                sub.set_defaults(**{k: v for k, v in defaults.items()
                                    if k in known})
    args = parser.parse_args(argv)
    try:
        cfg = resolved_config(args)
        return COMMANDS[args.command](args, cfg)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SolverFailure as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
