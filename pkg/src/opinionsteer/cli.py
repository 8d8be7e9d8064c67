"""Command-line front end: run scenarios, analyze systems, ship the built-ins.

Subcommands
-----------
run      execute a scenario config; writes trajectory.csv (or .json) and
         report.json into the output directory
analyze  static analysis of a config's system matrices (no trajectory);
         prints the report JSON, or writes analysis.json with --out
demo     run a built-in scenario: dnn57, irreducible100, random-tv
report   pretty-print a previously written report.json

Exit codes: 0 success, 2 config/validation error, 3 numerical failure.  The
default output directory is $OPINIONSTEER_OUT, falling back to ./out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import analyze_system
from .dynamics import assemble_system, influence_from_rows
from .errors import ScenarioError
from .reward import reward_step
from .scenarios import BUILTIN_SCENARIOS, ScenarioConfig, build_scenario, load_config, save_config
from .simulator import TrajectoryLog, compile_scenario, run

__all__ = ["main"]


def _default_out() -> str:
    return os.environ.get("OPINIONSTEER_OUT", "out")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="override the config's run seed")
    parser.add_argument("--out", default=_default_out(), help="output directory (default: $OPINIONSTEER_OUT or ./out)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv", help="trajectory file format")


def _write_trajectory_json(log: TrajectoryLog, path: Path) -> None:
    rows = [
        {"k": k, "agent_id": agent, "subject": subject, "opinion": opinion, "lambda": bias, "utility": util}
        for k, agent, subject, opinion, bias, util in log.iter_rows()
    ]
    path.write_text(json.dumps({"scenario": log.scenario_name, "seed": log.seed, "records": rows}, indent=2) + "\n")


def _execute(config: ScenarioConfig, args) -> int:
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log, report = run(config)
    if args.format == "csv":
        trajectory_path = out_dir / "trajectory.csv"
        log.write_csv(trajectory_path)
    else:
        trajectory_path = out_dir / "trajectory.json"
        _write_trajectory_json(log, trajectory_path)
    report_path = out_dir / "report.json"
    report.write_json(report_path)
    save_config(config, out_dir / "scenario.json")
    print(f"wrote {trajectory_path} and {report_path}")
    step = report.convergence_step
    print(f"converged: {report.converged} (step {step})" if report.converged else "converged: False")
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config)
    return _execute(config, args)


def _cmd_demo(args) -> int:
    kwargs = {}
    if args.name == "irreducible100" and args.lambda_zero:
        kwargs["lambda_zero"] = True
    config = build_scenario(args.name, **kwargs)
    return _execute(config, args)


def _materialized_system(config: ScenarioConfig):
    """System matrices a config describes, without running a trajectory.

    Fixed-weight configs are assembled directly.  Reward-driven configs get
    the step-0 refresh (rewards observed at the initial opinions), so the
    report is tagged with step 0.
    """
    sc = compile_scenario(config)
    comm = sc.community
    if sc.static_edges is not None:
        edges = sc.static_edges
    else:
        from .simulator import sample_edge_set

        g = config.graph
        edges = sample_edge_set(
            comm, g.out_degree, config.seed, 0,
            allow_stubborn_prob=g.allow_stubborn_prob,
            require_reachability=g.require_reachability,
        )
    step = None
    if config.weights.mode == "reward":
        opinions = {a: sc.regular_initials[i] for i, a in enumerate(comm.regular)}
        opinions.update({a: sc.stubborn_opinions[i] for i, a in enumerate(comm.stubborn)})
        seeded = (
            {a: 0.5 for a in comm.regular},
            {a: {j: 1.0 / len(edges.in_neighbors_map[a]) for j in edges.in_neighbors_map[a]} for a in comm.regular},
        )
        result = reward_step(edges, opinions, opinions, sc.field, previous=seeded)
        weights = influence_from_rows(edges, result.weights)
        bias = np.array([result.bias[a] for a in comm.regular])
        step = 0
    else:
        if sc.fixed_weights is not None:
            weights = influence_from_rows(edges, sc.fixed_weights)
        else:
            uniform = {a: {j: 1.0 / len(nbrs) for j in nbrs} for a, nbrs in edges.in_neighbors_map.items()}
            weights = influence_from_rows(edges, uniform)
        bias = np.array([sc.fixed_bias[a] for a in comm.regular])
    return assemble_system(weights, bias), sc, edges, step


def _cmd_analyze(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    mats, sc, edges, step = _materialized_system(config)
    report = analyze_system(mats, sc.constant_input, edges=edges, partition=sc.partition, step=step)
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out is not None:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "analysis.json"
        path.write_text(payload + "\n")
        print(f"wrote {path}")
    else:
        print(payload)
    return 0


def _cmd_report(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise ScenarioError(f"report file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    lines = [
        f"scenario:          {data.get('scenario_name', '?')} (seed {data.get('seed', '?')})",
        f"converged:         {data.get('converged')} at step {data.get('convergence_step')}",
        f"matrices static:   {data.get('matrices_static')}",
        f"spectral radius:   {data.get('spectral_radius')}",
        f"hurwitz:           {data.get('hurwitz')}",
        f"equilibrium:       {data.get('equilibrium')}",
        f"convergence claim: {data.get('convergence')}",
        f"containment:       {data.get('containment')}",
    ]
    if data.get("notes"):
        lines.append("notes:")
        lines.extend(f"  - {note}" for note in data["notes"])
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opinionsteer", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("--config", required=True, help="path to a scenario JSON file")
    _add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_analyze = sub.add_parser("analyze", help="analyze a config's system matrices")
    p_analyze.add_argument("--config", required=True)
    p_analyze.add_argument("--seed", type=int, default=None)
    p_analyze.add_argument("--out", default=None, help="write analysis.json here instead of stdout")
    p_analyze.set_defaults(func=_cmd_analyze)

    p_demo = sub.add_parser("demo", help="run a built-in scenario")
    p_demo.add_argument("name", choices=sorted(BUILTIN_SCENARIOS))
    p_demo.add_argument("--lambda-zero", action="store_true", help="irreducible100: pin all biases to 0 (pure containment)")
    _add_common(p_demo)
    p_demo.set_defaults(func=_cmd_demo)

    p_report = sub.add_parser("report", help="pretty-print a report.json")
    p_report.add_argument("--input", required=True, help="path to a report.json")
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"opinionsteer: config error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"opinionsteer: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
