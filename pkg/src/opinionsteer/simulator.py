"""Scenario execution: edge sampling, the per-step pipeline, logs, reports.

A run advances one trajectory.  Each step, in order: resample edges (random
graphs only), refresh weights and biases from observed rewards (reward-driven
mode), assemble the update matrices, advance the opinions, log.  Runs with
static matrices stop early once the step delta drops below the configured
epsilon; time-varying runs go the full horizon and convergence is judged
from the recorded trajectory (and flagged as heuristic).

Randomness is fully reproducible: every stochastic draw at step k comes from
a fresh generator seeded with the pair (seed, k), so the edge set sampled at
step k does not depend on the horizon or on draws at other steps.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .analysis import AnalysisReport, analyze_system
from .dynamics import assemble_system, influence_from_rows, input_vector, stack_opinions, step_network, unstack_opinions
from .errors import ScenarioError
from .graph import Community, EdgeSet, LayerPartition, all_stubborn_reachable
from .reward import GaussianUtility, UtilityField, evaluate_utility, grid_from_csv, reward_step

if TYPE_CHECKING:
    from .scenarios import ScenarioConfig

__all__ = [
    "make_step_rng",
    "sample_edge_set",
    "CompiledScenario",
    "compile_scenario",
    "StepRecord",
    "TrajectoryLog",
    "read_trajectory_csv",
    "RunReport",
    "run",
    "detect_convergence",
    "MonteCarloReport",
    "monte_carlo",
]

REJECTION_CAP = 1000


def make_step_rng(seed: int, k: int) -> np.random.Generator:
    """Independent substream for step k of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(k))))


def sample_edge_set(
    community: Community,
    out_degree: int,
    seed: int,
    k: int,
    allow_stubborn_prob: float = 1.0,
    require_reachability: bool = True,
    max_attempts: int = REJECTION_CAP,
) -> EdgeSet:
    """Draw a random in-neighbor set for every regular agent.

    Each agent picks ``out_degree`` distinct influencers uniformly from the
    other agents; with probability ``1 - allow_stubborn_prob`` its candidate
    pool is restricted to regular agents.  If reachability is required the
    whole edge set is rejection-sampled until every regular agent is
    reachable from the stubborn set.  Deterministic given (seed, k).
    """
    if out_degree < 1 or out_degree >= community.size:
        raise ScenarioError(f"out_degree must satisfy 1 <= d < N, got {out_degree}")
    if allow_stubborn_prob < 1.0 and out_degree > community.num_regular - 1:
        raise ScenarioError("out_degree exceeds the regular-only candidate pool")
    rng = make_step_rng(seed, k)
    for _ in range(max_attempts):
        mapping: dict[int, set[int]] = {}
        for agent in community.regular:
            if allow_stubborn_prob >= 1.0 or rng.random() < allow_stubborn_prob:
                pool = [a for a in community.agents if a != agent]
            else:
                pool = [a for a in community.regular if a != agent]
            chosen = rng.choice(len(pool), size=out_degree, replace=False)
            mapping[agent] = {pool[int(c)] for c in chosen}
        edges = EdgeSet(community, mapping, k=k)
        if not require_reachability or all_stubborn_reachable(edges):
            return edges
    raise ScenarioError(
        f"no stubborn-reachable edge set found in {max_attempts} attempts; increase out_degree"
    )


def edge_hash(edges: EdgeSet) -> str:
    """Stable 16-hex-digit digest of the edge structure."""
    canonical = json.dumps(
        [[a, sorted(nbrs)] for a, nbrs in sorted(edges.in_neighbors_map.items())],
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class CompiledScenario:
    """Runtime objects built from a declarative scenario config."""

    config: "ScenarioConfig"
    community: Community
    regular_initials: np.ndarray
    stubborn_opinions: np.ndarray
    constant_input: np.ndarray
    static_edges: EdgeSet | None
    partition: LayerPartition | None
    field: UtilityField | None
    fixed_bias: dict[int, float] | None
    fixed_weights: dict[int, dict[int, float]] | None

    @property
    def matrices_static(self) -> bool:
        return self.static_edges is not None and self.config.weights.mode == "fixed"


def _build_field(cfg) -> UtilityField:
    if cfg.kind == "gaussian":
        if cfg.mean is None:
            raise ScenarioError("gaussian utility needs a mean vector")
        if cfg.cov is not None:
            return GaussianUtility(cfg.mean, np.asarray(cfg.cov, dtype=float))
        if cfg.cov_scale is None:
            raise ScenarioError("gaussian utility needs cov_scale or a full cov matrix")
        return GaussianUtility.isotropic(cfg.mean, cfg.cov_scale)
    if cfg.kind == "grid":
        if not cfg.file:
            raise ScenarioError("grid utility needs a file path")
        return grid_from_csv(cfg.file)
    raise ScenarioError(f"unknown utility kind {cfg.kind!r}")


def compile_scenario(config: "ScenarioConfig") -> CompiledScenario:
    """Validate a config and build the runtime objects it describes."""
    community = Community(config.n, tuple(config.regular), tuple(config.stubborn))
    missing = [a for a in community.agents if a not in config.initial_opinions]
    if missing:
        raise ScenarioError(f"initial opinions missing for agents {missing}")
    opinions = {}
    for agent, value in config.initial_opinions.items():
        arr = np.asarray(value, dtype=float)
        if arr.shape != (config.n,):
            raise ScenarioError(f"agent {agent}: opinion of shape {arr.shape}, expected ({config.n},)")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ScenarioError(f"agent {agent}: initial opinion {arr} outside [0,1]")
        opinions[int(agent)] = arr
    regular_initials = np.array([opinions[a] for a in community.regular])
    stubborn_opinions = np.array([opinions[a] for a in community.stubborn])
    constant = input_vector(stubborn_opinions, regular_initials)

    graph_cfg = config.graph
    static_edges = None
    partition = None
    if graph_cfg.kind in ("static", "layered"):
        if not graph_cfg.edges:
            raise ScenarioError(f"{graph_cfg.kind} graph needs an edge list")
        static_edges = EdgeSet(community, {a: set(nbrs) for a, nbrs in graph_cfg.edges.items()}, k=0)
        if graph_cfg.kind == "layered":
            if not graph_cfg.layers:
                raise ScenarioError("layered graph needs a layer partition")
            partition = LayerPartition(community, tuple(tuple(layer) for layer in graph_cfg.layers))
    elif graph_cfg.kind == "random":
        if graph_cfg.out_degree is None:
            raise ScenarioError("random graph needs out_degree")
        if graph_cfg.out_degree < 1 or graph_cfg.out_degree >= community.size:
            raise ScenarioError(f"out_degree must satisfy 1 <= d < N, got {graph_cfg.out_degree}")
    else:
        raise ScenarioError(f"unknown graph kind {graph_cfg.kind!r}")

    field = _build_field(config.utility) if config.utility is not None else None
    if field is not None and field.dim != config.n:
        raise ScenarioError(f"utility over {field.dim} subjects, community has {config.n}")

    weight_cfg = config.weights
    fixed_bias = fixed_weights = None
    if weight_cfg.mode == "fixed":
        bias = weight_cfg.bias
        if bias is None:
            raise ScenarioError("fixed weight mode needs bias values")
        if isinstance(bias, (int, float)):
            fixed_bias = {a: float(bias) for a in community.regular}
        else:
            fixed_bias = {int(a): float(v) for a, v in bias.items()}
        missing = [a for a in community.regular if a not in fixed_bias]
        if missing:
            raise ScenarioError(f"fixed bias missing for agents {missing}")
        bad = {a: v for a, v in fixed_bias.items() if not 0.0 <= v <= 1.0}
        if bad:
            raise ScenarioError(f"bias values outside [0,1]: {bad}")
        if weight_cfg.weights is not None:
            if static_edges is None:
                raise ScenarioError("explicit weight rows require a static or layered graph")
            fixed_weights = {int(a): {int(j): float(w) for j, w in row.items()} for a, row in weight_cfg.weights.items()}
    elif weight_cfg.mode == "reward":
        if field is None:
            raise ScenarioError("reward-driven weights need a utility field")
    else:
        raise ScenarioError(f"unknown weight mode {weight_cfg.mode!r}")

    if config.horizon < 1:
        raise ScenarioError(f"horizon must be >= 1, got {config.horizon}")
    if config.epsilon <= 0:
        raise ScenarioError(f"epsilon must be positive, got {config.epsilon}")

    return CompiledScenario(
        config=config,
        community=community,
        regular_initials=regular_initials,
        stubborn_opinions=stubborn_opinions,
        constant_input=constant,
        static_edges=static_edges,
        partition=partition,
        field=field,
        fixed_bias=fixed_bias,
        fixed_weights=fixed_weights,
    )


@dataclass(frozen=True)
class StepRecord:
    """State and bookkeeping at one logged step.

    ``bias``, ``row_sums``, and ``edge_digest`` describe the matrices used to
    step *from* this state; the final record repeats the last step's values.
    """

    k: int
    x: np.ndarray
    bias: np.ndarray
    row_sums: np.ndarray
    utilities: dict[int, float] | None
    edge_digest: str


@dataclass
class TrajectoryLog:
    scenario_name: str
    seed: int
    community: Community
    records: list[StepRecord]
    stubborn_opinions: np.ndarray

    def states(self) -> np.ndarray:
        return np.array([rec.x for rec in self.records])

    def step_deltas(self) -> np.ndarray:
        states = self.states()
        if len(states) < 2:
            return np.zeros(0)
        return np.abs(np.diff(states, axis=0)).max(axis=1)

    def iter_rows(self):
        """Long-format rows: (k, agent_id, subject, opinion, bias, utility|None).

        Stubborn agents appear with constant opinions and bias 1 so
        containment plots have every actor in one table; subjects are
        1-based.
        """
        comm = self.community
        for rec in self.records:
            opinions = unstack_opinions(rec.x, comm.num_regular)
            for idx, agent in enumerate(comm.regular):
                util = rec.utilities.get(agent) if rec.utilities else None
                for subject in range(comm.n):
                    yield rec.k, agent, subject + 1, float(opinions[idx, subject]), float(rec.bias[idx]), util
            for idx, agent in enumerate(comm.stubborn):
                util = rec.utilities.get(agent) if rec.utilities else None
                for subject in range(comm.n):
                    yield rec.k, agent, subject + 1, float(self.stubborn_opinions[idx, subject]), 1.0, util

    def write_csv(self, path) -> None:
        """Long-format export: one row per (step, agent, subject)."""
        with Path(path).open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["k", "agent_id", "subject", "opinion", "lambda", "utility"])
            for k, agent, subject, opinion, bias, util in self.iter_rows():
                writer.writerow([
                    k, agent, subject,
                    repr(opinion),
                    repr(bias),
                    "" if util is None else repr(float(util)),
                ])


def read_trajectory_csv(path) -> dict[tuple[int, int, int], tuple[float, float, float | None]]:
    """Parse a trajectory CSV back into {(k, agent, subject): (opinion, bias, utility)}."""
    out: dict[tuple[int, int, int], tuple[float, float, float | None]] = {}
    with Path(path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        for row in reader:
            key = (int(row["k"]), int(row["agent_id"]), int(row["subject"]))
            util = float(row["utility"]) if row["utility"] else None
            out[key] = (float(row["opinion"]), float(row["lambda"]), util)
    return out


@dataclass(frozen=True)
class RunReport:
    """Summary of one run: convergence verdict plus the final-matrices analysis."""

    scenario_name: str
    seed: int
    converged: bool
    convergence_step: int | None
    matrices_static: bool
    step_deltas: tuple[float, ...]
    analysis: AnalysisReport
    flagged_steps: tuple[int, ...]
    notes: tuple[str, ...]

    def to_dict(self) -> dict:
        payload = self.analysis.to_dict()
        payload.update(
            {
                "scenario_name": self.scenario_name,
                "seed": self.seed,
                "converged": self.converged,
                "convergence_step": self.convergence_step,
                "matrices_static": self.matrices_static,
                "step_deltas": [float(d) for d in self.step_deltas],
                "flagged_steps": list(self.flagged_steps),
                "notes": list(self.notes),
            }
        )
        return payload

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def detect_convergence(states, epsilon: float) -> int | None:
    """First step k whose move to k+1 stays below epsilon in the max norm.

    Accepts a TrajectoryLog or any (steps x state) array of states.
    """
    if hasattr(states, "states"):
        states = states.states()
    arr = np.asarray(states, dtype=float)
    if arr.ndim != 2 or len(arr) == 0:
        raise ScenarioError("need a nonempty sequence of state vectors")
    for k in range(len(arr) - 1):
        if np.abs(arr[k + 1] - arr[k]).max() < epsilon:
            return k
    return None


def _utilities_at(field: UtilityField | None, community: Community, x: np.ndarray, stubborn: np.ndarray):
    if field is None:
        return None
    opinions = unstack_opinions(x, community.num_regular)
    utils = {a: evaluate_utility(field, opinions[i]) for i, a in enumerate(community.regular)}
    utils.update({a: evaluate_utility(field, stubborn[i]) for i, a in enumerate(community.stubborn)})
    return utils


def run(config: "ScenarioConfig") -> tuple[TrajectoryLog, RunReport]:
    """Execute one scenario end to end.

    Any error raised while stepping is re-raised with the step index
    attached.  The returned report always carries an analysis snapshot of the
    last matrices used, tagged with their step.
    """
    sc = compile_scenario(config)
    comm = sc.community
    x = stack_opinions(sc.regular_initials)
    u = sc.constant_input
    seed = config.seed
    regular_ids = comm.regular

    # reward-mode seed row: uniform weights, bias 1/2, replaced before the first step
    prev_bias: dict[int, float] | None = None
    prev_weights: dict[int, dict[int, float]] | None = None
    initial_anchor = {a: sc.regular_initials[i] for i, a in enumerate(regular_ids)}
    initial_rewards: dict[int, float] | None = None

    records: list[StepRecord] = []
    flagged_steps: list[int] = []
    notes = ["per step: refresh edges, refresh weights from rewards, then advance opinions"]
    last_mats = None
    last_edges = None
    step_index = -1
    try:
        for k in range(config.horizon):
            step_index = k
            if sc.static_edges is not None:
                edges = sc.static_edges
            else:
                g = config.graph
                edges = sample_edge_set(
                    comm, g.out_degree, seed, k,
                    allow_stubborn_prob=g.allow_stubborn_prob,
                    require_reachability=g.require_reachability,
                )
            if config.weights.mode == "reward":
                opinion_rows = unstack_opinions(x, comm.num_regular)
                current = {a: opinion_rows[i] for i, a in enumerate(regular_ids)}
                current.update({a: sc.stubborn_opinions[i] for i, a in enumerate(comm.stubborn)})
                if prev_bias is None:
                    prev_bias = {a: 0.5 for a in regular_ids}
                    prev_weights = {a: {j: 1.0 / len(edges.in_neighbors_map[a]) for j in edges.in_neighbors_map[a]} for a in regular_ids}
                result = reward_step(
                    edges, current, initial_anchor, sc.field,
                    initial_rewards=initial_rewards, previous=(prev_bias, prev_weights),
                )
                initial_rewards = result.initial_rewards
                prev_bias, prev_weights = result.bias, result.weights
                if result.flagged:
                    flagged_steps.append(k)
                weights = influence_from_rows(edges, result.weights)
                bias = np.array([result.bias[a] for a in regular_ids])
            else:
                if sc.fixed_weights is not None:
                    weights = influence_from_rows(edges, sc.fixed_weights)
                else:
                    uniform = {a: {j: 1.0 / len(nbrs) for j in nbrs} for a, nbrs in edges.in_neighbors_map.items()}
                    weights = influence_from_rows(edges, uniform)
                bias = np.array([sc.fixed_bias[a] for a in regular_ids])
            mats = assemble_system(weights, bias)
            last_mats, last_edges = mats, edges
            records.append(StepRecord(
                k=k, x=x, bias=bias, row_sums=mats.full.sum(axis=1),
                utilities=_utilities_at(sc.field, comm, x, sc.stubborn_opinions),
                edge_digest=edge_hash(edges),
            ))
            x_next = step_network(x, mats, u)
            delta = float(np.abs(x_next - x).max())
            x = x_next
            if sc.matrices_static and delta < config.epsilon:
                break
        # final state, described by the last step's matrices
        records.append(StepRecord(
            k=records[-1].k + 1, x=x, bias=records[-1].bias, row_sums=records[-1].row_sums,
            utilities=_utilities_at(sc.field, comm, x, sc.stubborn_opinions),
            edge_digest=records[-1].edge_digest,
        ))
    except Exception as exc:
        message = f"run failed at step {step_index}: {exc}"
        if isinstance(exc, ScenarioError):
            raise ScenarioError(message) from exc
        raise type(exc)(message) from exc

    log = TrajectoryLog(config.name, seed, comm, records, sc.stubborn_opinions)
    states = log.states()
    convergence_step = detect_convergence(states, config.epsilon)
    if last_mats.effectively_stubborn.size:
        notes.append(f"{last_mats.effectively_stubborn.size} regular agents have bias exactly 1 (effectively stubborn)")
    if not sc.matrices_static:
        notes.append("matrices are time-varying; the convergence step is a settled-trajectory heuristic")
    analysis = analyze_system(last_mats, u, edges=last_edges, partition=sc.partition, step=records[-2].k)
    report = RunReport(
        scenario_name=config.name,
        seed=seed,
        converged=convergence_step is not None,
        convergence_step=convergence_step,
        matrices_static=sc.matrices_static,
        step_deltas=tuple(float(d) for d in log.step_deltas()),
        analysis=analysis,
        flagged_steps=tuple(flagged_steps),
        notes=tuple(notes),
    )
    return log, report


@dataclass(frozen=True)
class MonteCarloReport:
    """Aggregates over independent seeded runs of one scenario."""

    scenario_name: str
    seeds: tuple[int, ...]
    convergence_steps: tuple[int | None, ...]
    containment_pass_rate: float | None
    mean_distance_to_peak: float | None
    errors: tuple[tuple[int, str], ...]

    def to_dict(self) -> dict:
        return {
            "scenario_name": self.scenario_name,
            "seeds": list(self.seeds),
            "convergence_steps": list(self.convergence_steps),
            "containment_pass_rate": self.containment_pass_rate,
            "mean_distance_to_peak": self.mean_distance_to_peak,
            "errors": [list(e) for e in self.errors],
        }


def monte_carlo(config: "ScenarioConfig", seeds: Sequence[int]) -> MonteCarloReport:
    """Run the scenario once per seed and aggregate; per-seed errors are collected, not fatal."""
    if not seeds:
        raise ScenarioError("monte_carlo needs at least one seed")
    convergence: list[int | None] = []
    containment_flags: list[bool] = []
    distances: list[float] = []
    errors: list[tuple[int, str]] = []
    peak = None
    if config.utility is not None and config.utility.kind == "gaussian":
        peak = np.asarray(config.utility.mean, dtype=float)
    for seed in seeds:
        try:
            log, report = run(replace(config, seed=int(seed)))
        except Exception as exc:  # noqa: BLE001 - collected per contract
            errors.append((int(seed), f"{type(exc).__name__}: {exc}"))
            continue
        convergence.append(report.convergence_step)
        if report.analysis.containment is not None:
            containment_flags.append(report.analysis.containment.passed)
        if peak is not None:
            final = unstack_opinions(log.records[-1].x, log.community.num_regular)
            distances.append(float(np.linalg.norm(final - peak, axis=1).mean()))
    return MonteCarloReport(
        scenario_name=config.name,
        seeds=tuple(int(s) for s in seeds),
        convergence_steps=tuple(convergence),
        containment_pass_rate=(sum(containment_flags) / len(containment_flags)) if containment_flags else None,
        mean_distance_to_peak=(float(np.mean(distances)) if distances else None),
        errors=tuple(errors),
    )
