"""Command-line front end.

Every subcommand is a pure function of its flags, the config file and the
seed, so reruns write byte-identical files. Exit codes: 0 success, 1 invalid
input, 2 solver did not converge (artifacts are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_game, parse_number
from .dpp import check_fixed_point, robust_policy_eval
from .mfe import SolveOptions, lambda_sweep, solve_mfe
from .model import ModelError, check_flow, check_policy, make_crowd_game, normalize_rows, validate_assumptions
from .nagent import (
    N_MAX,
    BudgetExceeded,
    ProfilePolicy,
    best_response_gap,
    chaos_diagnostic,
    fixed_policy_value_exact,
    simulate_plugin,
)

log = logging.getLogger("robust_mfg")

PAPER_MU0 = "0.2,0.1,0.05,0.25,0.4"
NAGENT_HEADER = ["N", "J_mc", "stderr", "J_exact", "nash_gap", "certified"]

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1); exit 2 is reserved for non-convergence
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _numbers(text: str) -> list[float]:
    try:
        return [parse_number(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _number(text: str) -> float:
    try:
        return parse_number(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _default_threads() -> int:
    env = os.environ.get("ROBUST_MFG_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"ROBUST_MFG_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise UsageError(f"ROBUST_MFG_THREADS must be a positive integer, got {env!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    game = common.add_argument_group("game")
    src = game.add_mutually_exclusive_group(required=True)
    src.add_argument("--crowd", action="store_true", help="built-in 5-state crowd-aversion model")
    src.add_argument("--config", type=Path, help="JSON game configuration (see docs/config.md)")
    game.add_argument("--c", type=_number, default=1e-7, help="congestion offset of the crowd reward")
    game.add_argument("--mu0", type=_numbers, default=None, help=f"initial law for --crowd (default {PAPER_MU0})")
    game.add_argument("--T", type=int, default=2, help="horizon for --crowd")
    game.add_argument("--lambda", dest="lam", type=_number, default=None, help="ambiguity radius (decimal or fraction)")
    run = common.add_argument_group("run")
    run.add_argument("--out", type=Path, default=Path("."), help="output directory")
    run.add_argument("--threads", type=int, default=None, help="worker cap (env ROBUST_MFG_THREADS)")
    run.add_argument("--tol", type=float, default=1e-10, help="flow fixed-point tolerance")
    run.add_argument("--max-iter", type=int, default=10_000)
    run.add_argument("--damping", type=float, default=1.0)
    run.add_argument("--backend", choices=("greedy", "lp"), default="greedy")
    run.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="robust-mfg", description="Robust mean-field games on finite spaces.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("solve", parents=[common], help="solve for the mean-field equilibrium")

    p = sub.add_parser("evaluate", parents=[common], help="robust value of a supplied policy")
    p.add_argument("--policy", type=Path, required=True, help='JSON {"policy": [T][nS][nA], "flow": [T][nS] (optional)}')

    p = sub.add_parser("sweep", parents=[common], help="equilibria over a list of radii")
    p.add_argument("--lambdas", type=_numbers, required=True, help="comma-separated radii, fractions allowed")

    p = sub.add_parser("nash-gap", parents=[common], help="exact N-agent value and best-response gap")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--agent", type=int, default=1, help="1-based agent index")
    p.add_argument("--budget", type=int, default=60_000, help="maximum number of deviations to enumerate")
    p.add_argument("--seed", type=int, default=0, help="seed for coordinate-descent restarts")

    for name, text in (("simulate", "Monte-Carlo N-agent values"), ("diagnose", "propagation-of-chaos table")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--N", type=_ints, default=[2], help="comma-separated numbers of agents")
        p.add_argument("--paths", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)

    sub.add_parser("validate", parents=[common], help="check the standing assumptions")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _game(args, lam=None):
    lam = args.lam if lam is None else lam
    if args.config is not None:
        return load_game(args.config, lam)
    mu0 = args.mu0 if args.mu0 is not None else _numbers(PAPER_MU0)
    try:
        mu0 = np.asarray(mu0, dtype=float)
        if mu0.shape != (5,):
            raise ConfigError("--mu0", "needs 5 comma-separated weights")
        mu0 = normalize_rows(mu0, name="--mu0")
        return make_crowd_game(0.0 if lam is None else lam, args.c, mu0, args.T)
    except ConfigError:
        raise
    except ModelError as exc:
        raise ConfigError("--crowd", str(exc)) from None


def _opts(args) -> SolveOptions:
    try:
        return SolveOptions(tol=args.tol, max_iter=args.max_iter, damping=args.damping, backend=args.backend)
    except ValueError as exc:
        raise ConfigError("--tol/--max-iter/--damping", str(exc)) from None


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _nagent_rows(reports):
    return [[_fmt(r.row()[k]) for k in NAGENT_HEADER] for r in reports]


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args, threads):
    spec = _game(args)
    eq = solve_mfe(spec, opts=_opts(args))
    fp = check_fixed_point(spec, eq.joint_laws(), backend=args.backend)
    out = eq.to_dict(spec)
    out["fixed_point"] = fp.to_dict()
    _write_json(args.out / "equilibrium.json", out)
    print(f"V = {eq.value!r}  iterations = {eq.iterations}  method = {eq.method}  converged = {eq.converged}")
    return EXIT_OK if eq.converged else EXIT_NOT_CONVERGED


def cmd_evaluate(args, threads):
    spec = _game(args)
    try:
        data = json.loads(args.policy.read_text())
    except OSError as exc:
        raise ConfigError(str(args.policy), f"cannot read policy: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(args.policy), f"invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict) or "policy" not in data:
        raise ConfigError("policy", "missing required field")
    try:
        policy = check_policy(data["policy"], spec.horizon, spec.nS, spec.nA)
    except (ModelError, ValueError) as exc:
        raise ConfigError("policy", str(exc)) from None
    status = EXIT_OK
    if data.get("flow") is not None:
        try:
            flow = check_flow(data["flow"], spec.horizon, spec.nS)
        except (ModelError, ValueError) as exc:
            raise ConfigError("flow", str(exc)) from None
        source = "supplied"
    else:
        eq = solve_mfe(spec, opts=_opts(args))
        flow, source = eq.flow, "equilibrium"
        status = EXIT_OK if eq.converged else EXIT_NOT_CONVERGED
    value = robust_policy_eval(spec, flow, policy, args.backend)
    _write_json(args.out / "evaluation.json", {"value": value, "flow_source": source, "flow": flow.tolist()})
    print(f"J = {value!r} (flow: {source})")
    return status


def cmd_sweep(args, threads):
    lambdas = args.lambdas
    if not lambdas:
        raise ConfigError("--lambdas", "needs at least one value")
    if any(lam < 0 for lam in lambdas):
        raise ConfigError("--lambdas", "radii must be >= 0")
    spec0 = _game(args, lambdas[0])
    rows = lambda_sweep(lambda lam: _game(args, lam), lambdas, opts=_opts(args), threads=threads)
    nS = spec0.nS
    S, A = spec0.states.labels, spec0.actions.labels
    header = ["lambda", "V"] + [f"mu1_{k}" for k in range(nS)] + [f"muT_{k}" for k in range(nS)]
    header += ["iterations", "converged"]
    table, kernels, policies = [], [], []
    status = EXIT_OK
    for r in rows:
        if r.error is not None:
            raise ConfigError(f"--lambdas[{r.lam!r}]", r.error)
        table.append([_fmt(r.lam), _fmt(r.value)] + [_fmt(x) for x in r.mu1] + [_fmt(x) for x in r.mu_terminal]
                     + [_fmt(r.iterations), _fmt(r.converged)])
        eq = r.equilibrium
        for t in range(spec0.horizon):
            for i, s in enumerate(S):
                policies.append([_fmt(r.lam), str(t), str(s)] + [_fmt(x) for x in eq.policy[t, i]])
                for j, a in enumerate(A):
                    kernels.append([_fmt(r.lam), str(t), str(s), str(a)] + [_fmt(x) for x in eq.kernel[t, i, j]])
        if not r.converged:
            status = EXIT_NOT_CONVERGED
    _write_csv(args.out / "sweep.csv", header, table)
    _write_csv(args.out / "kernels.csv", ["lambda", "t", "s", "a"] + [f"p_{s}" for s in S], kernels)
    _write_csv(args.out / "policies.csv", ["lambda", "t", "s"] + [f"pi_{a}" for a in A], policies)
    for r in rows:
        print(f"lambda = {r.lam!r}  V = {r.value!r}  converged = {r.converged}")
    return status


def _equilibrium(args):
    spec = _game(args)
    eq = solve_mfe(spec, opts=_opts(args))
    return spec, eq


def cmd_nash_gap(args, threads):
    spec, eq = _equilibrium(args)
    if not 1 <= args.N <= N_MAX:
        raise ConfigError("--N", f"exact evaluation supports 1 <= N <= {N_MAX}")
    if not 1 <= args.agent <= args.N:
        raise ConfigError("--agent", f"must lie in 1..{args.N}")
    try:
        rep = best_response_gap(spec, args.N, args.agent - 1, eq, budget=args.budget, seed=args.seed)
    except BudgetExceeded as exc:
        raise ConfigError("--budget", str(exc)) from None
    _write_csv(args.out / "nagent.csv", NAGENT_HEADER, _nagent_rows([rep]))
    out = rep.to_dict()
    out["V_mean_field"] = eq.value
    _write_json(args.out / "nash_gap.json", out)
    kind = "exact" if rep.certified else "lower bound"
    print(f"N = {args.N}  J_exact = {rep.J_exact!r}  nash_gap = {rep.nash_gap!r} ({kind})")
    return EXIT_OK if eq.converged else EXIT_NOT_CONVERGED


def _check_sim_args(args):
    if not args.N or any(n < 1 for n in args.N):
        raise ConfigError("--N", "needs positive integers")
    if args.paths < 1:
        raise ConfigError("--paths", "must be >= 1")
    if args.seed < 0:
        raise ConfigError("--seed", "must be >= 0")


def cmd_simulate(args, threads):
    _check_sim_args(args)
    spec, eq = _equilibrium(args)
    reports = []
    for N in args.N:
        profile = ProfilePolicy.symmetric(eq.policy, N)
        rep = simulate_plugin(spec, N, profile, eq, args.paths, args.seed, threads=threads, backend=args.backend)
        if N <= N_MAX:
            exact = fixed_policy_value_exact(spec, N, profile, seed=args.seed)
            rep.J_exact, rep.certified = exact.value, exact.certified
        reports.append(rep)
        print(f"N = {N}  J_mc = {rep.J_mc!r} +- {rep.stderr!r}  V = {eq.value!r}")
    _write_csv(args.out / "nagent.csv", NAGENT_HEADER, _nagent_rows(reports))
    return EXIT_OK if eq.converged else EXIT_NOT_CONVERGED


def cmd_diagnose(args, threads):
    _check_sim_args(args)
    spec, eq = _equilibrium(args)
    rows = []
    for N in args.N:
        profile = ProfilePolicy.symmetric(eq.policy, N)
        for r in chaos_diagnostic(spec, N, profile, eq, args.paths, args.seed, threads=threads, backend=args.backend):
            rows.append([str(r.N), str(r.t), _fmt(r.indicator), _fmt(r.w1_mean), _fmt(r.discrepancy)])
            print(f"N = {r.N}  t = {r.t}  discrepancy = {r.discrepancy:.6g}")
    _write_csv(args.out / "chaos.csv", ["N", "t", "indicator", "w1_mean", "discrepancy"], rows)
    return EXIT_OK if eq.converged else EXIT_NOT_CONVERGED


def cmd_validate(args, threads):
    spec = _game(args)
    rep = validate_assumptions(spec)
    _write_json(args.out / "validation.json", rep.to_dict())
    for c in rep.checks:
        print(f"{c.status:9s} {c.name} {c.detail}")
    return EXIT_OK if rep.ok else EXIT_INVALID


COMMANDS = {
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "nash-gap": cmd_nash_gap,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "validate": cmd_validate,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = args.threads if args.threads is not None else _default_threads()
        if threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, threads)
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
