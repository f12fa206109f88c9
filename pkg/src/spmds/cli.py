"""Command-line front end.

Subcommands: ``partition`` (grouping plan + heatmap ordering), ``run``
(solve a scenario, emit trace CSV and summary), ``compare`` (convergence
errors of several engines against the centralized optimum), ``certificate``
(parameter check), ``flops`` (analytic operation savings).  All randomness
flows from the scenario seed (overridable with ``--seed``).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from . import analysis, netmodel, partition, scenario, solver, traffic
from .errors import SpmdsError
from .fleet import ValleyFillingProblem


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpmdsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spmds",
        description="Reduced-dimension decentralized optimization toolkit",
    )
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("partition", help="cluster agents and write a grouping plan")
    _scenario_arg(p)
    p.add_argument("--r", type=int, default=None, help="group count override")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("run", help="solve a scenario and write trace + summary")
    _scenario_arg(p)
    _solver_args(p)
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument(
        "--no-timing",
        action="store_true",
        help="zero the wall_ms column for byte-reproducible traces",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser(
        "compare", help="convergence errors of several engines vs the optimum"
    )
    _scenario_arg(p)
    p.add_argument("--solvers", nargs="+", default=["spmds", "spds", "rpds"])
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("certificate", help="evaluate the parameter certificate")
    _scenario_arg(p)
    _solver_args(p)
    p.set_defaults(func=cmd_certificate)

    p = sub.add_parser("flops", help="analytic per-iteration operation savings")
    p.add_argument("--scenario", type=Path, default=None)
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--v", type=int)
    p.add_argument("--vm", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_flops)
    return parser


def _scenario_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, required=True)


def _solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", choices=solver.ALGORITHMS, default=None)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--tau-u", type=float, default=None)
    p.add_argument("--tau-l", type=float, default=None)
    p.add_argument("--eps0", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)


def _load(args) -> scenario.ScenarioConfig:
    cfg = scenario.load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _overrides(args) -> dict:
    return {
        "alpha": args.alpha,
        "beta": args.beta,
        "tau_u": args.tau_u,
        "tau_l": args.tau_l,
        "eps0": args.eps0,
        "max_iters": args.max_iters,
    }


def cmd_partition(args) -> int:
    cfg = _load(args)
    if cfg.kind != "ev":
        raise SpmdsError("partition expects an EV scenario")
    net = netmodel.load_network(cfg.resolve(cfg.raw["network"]))
    sens = netmodel.build_sensitivity(net)
    plan = scenario.build_grouping(cfg, sens.R, args.r)
    args.out.mkdir(parents=True, exist_ok=True)
    partition.save_plan(plan, args.out / "plan.yaml")
    _write_heatmap_order(plan, sens.R, args.out / "heatmap_order.csv")
    for s in range(plan.r):
        members = ",".join(str(i + 1) for i in plan.members(s))
        rows = ",".join(str(j) for j in plan.subset_rows[s])
        print(f"group {s + 1}: nodes [{members}]  rows [{rows}]")
    print(f"dimension reduction d={plan.d} (subset size {plan.subset_size})")
    return 0


def _write_heatmap_order(plan, sens_matrix: np.ndarray, path: Path) -> None:
    # nodes sorted by group (groups by smallest member), then by id; each row
    # carries the node's sensitivity column in that order for heatmap tools
    order = []
    groups = sorted(range(plan.r), key=lambda s: plan.members(s).min())
    for s in groups:
        order.extend(int(i) for i in plan.members(s))
    header = "position,node,group," + ",".join(f"sens_{i + 1}" for i in order)
    lines = [header]
    for pos, i in enumerate(order):
        col = ",".join(format(sens_matrix[j, i], ".10g") for j in order)
        lines.append(f"{pos},{i + 1},{int(plan.membership[i]) + 1},{col}")
    path.write_text("\n".join(lines) + "\n")


def cmd_run(args) -> int:
    cfg = _load(args)
    problem = scenario.build_problem(cfg, getattr(args, "r", None))
    algo = scenario.algorithm_name(cfg, args.solver)
    config = scenario.solver_config(cfg, **_overrides(args))
    trace = solver.run(problem, config, algo, threads=args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.no_timing and "wall_ms" in trace.columns:
        trace.columns["wall_ms"] = [0.0] * len(trace)
    trace.write_csv(args.out / "trace.csv")

    cert = solver.certificate(problem, config)
    summary = {
        "algorithm": algo,
        "iterations": len(trace),
        "converged": bool(trace.converged),
        "final_eps": float(trace.state.eps) if len(trace) else None,
        "objective": float(problem.objective(trace.state.U)),
        "max_violation": float(problem.max_violation(trace.state.U)),
        "certificate_feasible": bool(cert.feasible),
    }
    if isinstance(problem, ValleyFillingProblem):
        v0sq = problem.network.slack_voltage**2
        summary["max_violation_pu2"] = summary["max_violation"] / v0sq
        summary["min_voltage_pu"] = float(problem.voltages_pu(trace.state.U).min())
        summary["flatness"] = analysis.flatness_metrics(
            problem.total_load(trace.state.U)
        )
        plan = problem.node_plan
        rep = analysis.flops_report(
            n=problem.n_rows,
            d=plan.d,
            K=problem.block_size,
            v=problem.n_agents,
            v_m=int(problem.plan.group_sizes().max()),
            r=plan.r,
        )
        summary["flops"] = {
            "primal_saved": rep.primal_saved,
            "primal_pct": rep.primal_pct,
            "dual_saved": rep.dual_saved,
            "dual_pct": rep.dual_pct,
        }
    (args.out / "summary.yaml").write_text(yaml.safe_dump(summary, sort_keys=False))
    status = "converged" if trace.converged else "not converged"
    print(f"{algo}: {len(trace)} iterations, {status}, summary in {args.out}")
    if config.max_iters == 0:
        return 0
    return 0 if trace.converged else 1


def cmd_compare(args) -> int:
    cfg = _load(args)
    if cfg.kind != "traffic":
        raise SpmdsError(
            "compare needs a traffic scenario (the centralized optimum is its reference)"
        )
    problem = scenario.build_traffic_problem(cfg)
    overrides = {"max_iters": args.max_iters} if args.max_iters else {}
    config = scenario.solver_config(cfg, **overrides)
    x_star = traffic.centralized_oracle(problem)
    columns: dict[str, list[float]] = {}
    iters = config.max_iters
    for name in args.solvers:
        state = solver.initial_state(problem, name)
        step = solver._STEPS[name]
        chi = []
        for _ in range(iters):
            state = step(state, problem, config)
            chi.append(traffic.convergence_error(state.U, x_star))
        columns[_unique_name(name, columns)] = chi
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "compare.csv"
    names = list(columns)
    lines = ["iter," + ",".join(f"chi_{n}" for n in names)]
    for k in range(iters):
        lines.append(f"{k + 1}," + ",".join(format(columns[n][k], ".17g") for n in names))
    path.write_text("\n".join(lines) + "\n")
    finals = ", ".join(f"{n}={columns[n][-1]:.3e}" for n in names)
    print(f"final convergence errors: {finals}")
    return 0


def _unique_name(name: str, existing: dict) -> str:
    if name not in existing:
        return name
    k = 2
    while f"{name}_{k}" in existing:
        k += 1
    return f"{name}_{k}"


def cmd_certificate(args) -> int:
    cfg = _load(args)
    problem = scenario.build_problem(cfg, getattr(args, "r", None))
    config = scenario.solver_config(cfg, **_overrides(args))
    cert = solver.certificate(problem, config)
    for key in (
        "M", "N", "Psi", "mu_lower", "L_phi", "L_gradG", "L_d",
        "F_U", "F_lambda", "A", "B",
    ):
        print(f"{key} = {getattr(cert, key):.6g}")
    print(f"feasible = {cert.feasible}")
    return 0


def cmd_flops(args) -> int:
    if args.scenario is not None:
        cfg = scenario.load_scenario(args.scenario)
        problem = scenario.build_problem(cfg)
        plan = problem.plan
        rep = analysis.flops_report(
            n=problem.n_rows,
            d=plan.d,
            K=problem.block_size,
            v=problem.n_agents,
            v_m=int(plan.group_sizes().max()),
            r=plan.r,
        )
    else:
        needed = (args.n, args.d, args.K, args.v, args.vm, args.r)
        if any(x is None for x in needed):
            raise SpmdsError("flops needs --scenario or all of --n --d --K --v --vm --r")
        rep = analysis.flops_report(
            n=args.n, d=args.d, K=args.K, v=args.v, v_m=args.vm, r=args.r
        )
    print(rep.summary())
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(rep.CSV_HEADER + "\n" + rep.csv_row() + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
