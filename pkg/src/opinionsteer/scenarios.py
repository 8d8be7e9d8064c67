"""Declarative scenario configs, their JSON form, and the built-in scenarios.

A scenario file is a single JSON document with the top-level keys
``community``, ``opinions``, ``graph``, ``weights``, ``utility``, ``run``
(plus an optional ``name``):

* community: ``{"n": 2, "regular": [...], "stubborn": [...]}``, or
  ``{"n": 2, "N": 100, "N_R": 96}`` for the default id convention
  (regular = 1..N_R, stubborn = N_R+1..N);
* opinions: ``[{"agent": 1, "opinion": [0.1, 0.9]}, ...]`` covering every
  agent (stubborn entries are their constant opinions);
* graph: ``{"kind": "static", "edges": [{"agent": 6, "neighbors": [1, 2]},
  ...]}``; kind "layered" adds ``"layers": [[ids...], ...]``; kind "random"
  takes ``out_degree``, ``allow_stubborn_prob``, ``require_reachability``;
* weights: ``{"mode": "reward"}`` or ``{"mode": "fixed", "lambda": 0.0}``
  (scalar or per-agent object), optionally with explicit rows
  ``"w": {"6": {"1": 0.5, "2": 0.5}}``; without rows, weights are uniform
  over each agent's in-neighbors;
* utility: ``{"kind": "gaussian", "mean": [0.25, 0.6], "cov_scale": 0.1}``
  (or a full ``"cov"`` matrix), ``{"kind": "grid", "file": "path.csv"}``, or
  null;
* run: ``{"horizon": 200, "epsilon": 1e-9, "seed": 0}``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScenarioError
from .graph import Community
from .simulator import sample_edge_set

__all__ = [
    "GraphConfig",
    "WeightConfig",
    "UtilityConfig",
    "ScenarioConfig",
    "load_config",
    "save_config",
    "dnn57",
    "irreducible100",
    "random_tv",
    "BUILTIN_SCENARIOS",
    "build_scenario",
]


@dataclass(frozen=True)
class GraphConfig:
    kind: str
    edges: dict[int, tuple[int, ...]] | None = None
    layers: tuple[tuple[int, ...], ...] | None = None
    out_degree: int | None = None
    allow_stubborn_prob: float = 1.0
    require_reachability: bool = True


@dataclass(frozen=True)
class WeightConfig:
    mode: str
    bias: float | dict[int, float] | None = None
    weights: dict[int, dict[int, float]] | None = None


@dataclass(frozen=True)
class UtilityConfig:
    kind: str
    mean: tuple[float, ...] | None = None
    cov_scale: float | None = None
    cov: tuple[tuple[float, ...], ...] | None = None
    file: str | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    n: int
    regular: tuple[int, ...]
    stubborn: tuple[int, ...]
    initial_opinions: dict[int, tuple[float, ...]]
    graph: GraphConfig
    weights: WeightConfig
    utility: UtilityConfig | None
    horizon: int = 200
    epsilon: float = 1e-9
    seed: int = 0

    def to_dict(self) -> dict:
        graph: dict = {"kind": self.graph.kind}
        if self.graph.edges is not None:
            graph["edges"] = [
                {"agent": a, "neighbors": sorted(nbrs)} for a, nbrs in sorted(self.graph.edges.items())
            ]
        if self.graph.layers is not None:
            graph["layers"] = [list(layer) for layer in self.graph.layers]
        if self.graph.kind == "random":
            graph["out_degree"] = self.graph.out_degree
            graph["allow_stubborn_prob"] = self.graph.allow_stubborn_prob
            graph["require_reachability"] = self.graph.require_reachability
        weights: dict = {"mode": self.weights.mode}
        if self.weights.bias is not None:
            if isinstance(self.weights.bias, dict):
                weights["lambda"] = {str(a): v for a, v in sorted(self.weights.bias.items())}
            else:
                weights["lambda"] = self.weights.bias
        if self.weights.weights is not None:
            weights["w"] = {
                str(a): {str(j): w for j, w in sorted(row.items())}
                for a, row in sorted(self.weights.weights.items())
            }
        utility = None
        if self.utility is not None:
            utility = {"kind": self.utility.kind}
            if self.utility.mean is not None:
                utility["mean"] = list(self.utility.mean)
            if self.utility.cov_scale is not None:
                utility["cov_scale"] = self.utility.cov_scale
            if self.utility.cov is not None:
                utility["cov"] = [list(row) for row in self.utility.cov]
            if self.utility.file is not None:
                utility["file"] = self.utility.file
        return {
            "name": self.name,
            "community": {"n": self.n, "regular": list(self.regular), "stubborn": list(self.stubborn)},
            "opinions": [
                {"agent": a, "opinion": list(op)} for a, op in sorted(self.initial_opinions.items())
            ],
            "graph": graph,
            "weights": weights,
            "utility": utility,
            "run": {"horizon": self.horizon, "epsilon": self.epsilon, "seed": self.seed},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ScenarioError("scenario config must be a JSON object")
        try:
            community = data["community"]
            n = int(community["n"])
            if "regular" in community:
                regular = tuple(int(a) for a in community["regular"])
                stubborn = tuple(int(a) for a in community["stubborn"])
            else:
                total, num_regular = int(community["N"]), int(community["N_R"])
                regular = tuple(range(1, num_regular + 1))
                stubborn = tuple(range(num_regular + 1, total + 1))
            opinions = {
                int(rec["agent"]): tuple(float(v) for v in rec["opinion"]) for rec in data["opinions"]
            }
            graph_data = data["graph"]
            kind = graph_data["kind"]
            edges = None
            if "edges" in graph_data:
                edges = {
                    int(rec["agent"]): tuple(int(j) for j in rec["neighbors"]) for rec in graph_data["edges"]
                }
            layers = None
            if "layers" in graph_data:
                layers = tuple(tuple(int(a) for a in layer) for layer in graph_data["layers"])
            graph = GraphConfig(
                kind=kind,
                edges=edges,
                layers=layers,
                out_degree=(int(graph_data["out_degree"]) if "out_degree" in graph_data else None),
                allow_stubborn_prob=float(graph_data.get("allow_stubborn_prob", 1.0)),
                require_reachability=bool(graph_data.get("require_reachability", True)),
            )
            weights_data = data["weights"]
            bias = weights_data.get("lambda")
            if isinstance(bias, dict):
                bias = {int(a): float(v) for a, v in bias.items()}
            elif bias is not None:
                bias = float(bias)
            rows = weights_data.get("w")
            if rows is not None:
                rows = {int(a): {int(j): float(w) for j, w in row.items()} for a, row in rows.items()}
            weights = WeightConfig(mode=weights_data["mode"], bias=bias, weights=rows)
            utility_data = data.get("utility")
            utility = None
            if utility_data is not None:
                utility = UtilityConfig(
                    kind=utility_data["kind"],
                    mean=(tuple(float(v) for v in utility_data["mean"]) if "mean" in utility_data else None),
                    cov_scale=(float(utility_data["cov_scale"]) if "cov_scale" in utility_data else None),
                    cov=(
                        tuple(tuple(float(v) for v in row) for row in utility_data["cov"])
                        if "cov" in utility_data else None
                    ),
                    file=utility_data.get("file"),
                )
            run_data = data.get("run", {})
            return cls(
                name=str(data.get("name", "scenario")),
                n=n,
                regular=regular,
                stubborn=stubborn,
                initial_opinions=opinions,
                graph=graph,
                weights=weights,
                utility=utility,
                horizon=int(run_data.get("horizon", 200)),
                epsilon=float(run_data.get("epsilon", 1e-9)),
                seed=int(run_data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed scenario config: {exc!r}") from exc


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def save_config(config: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# built-in scenarios
# ---------------------------------------------------------------------------

_PEAK = (0.25, 0.6)
_GAUSSIAN = UtilityConfig(kind="gaussian", mean=_PEAK, cov_scale=0.1)


def _uniform_opinions(rng: np.random.Generator, agents, lo=0.05, hi=0.95) -> dict[int, tuple[float, ...]]:
    return {a: tuple(float(v) for v in rng.uniform(lo, hi, size=2)) for a in agents}


def dnn57() -> ScenarioConfig:
    """57-agent layered community: 5 stubborn feed 3 strict layers of followers.

    Layer memberships follow the four branches of ids 6..57; consecutive
    layers are fully connected (layer 1 reads every stubborn agent, layer 2
    every layer-1 agent, layer 3 every layer-2 agent), which satisfies the
    strict layering condition, so the whole network freezes in 3 steps.
    """
    stubborn = tuple(range(1, 6))
    regular = tuple(range(6, 58))
    layer1 = (6, 19, 32, 45)
    layer2 = (7, 8, 9, 20, 21, 22, 33, 34, 35, 46, 47, 48)
    layer3 = tuple(sorted(set(regular) - set(layer1) - set(layer2)))
    edges: dict[int, tuple[int, ...]] = {}
    for a in layer1:
        edges[a] = stubborn
    for a in layer2:
        edges[a] = layer1
    for a in layer3:
        edges[a] = layer2
    rng = np.random.default_rng(np.random.SeedSequence((57, 0)))
    opinions = _uniform_opinions(rng, regular)
    stubborn_points = [(0.10, 0.50), (0.20, 0.75), (0.25, 0.45), (0.35, 0.65), (0.45, 0.55)]
    opinions.update({a: p for a, p in zip(stubborn, stubborn_points)})
    return ScenarioConfig(
        name="dnn57",
        n=2,
        regular=regular,
        stubborn=stubborn,
        initial_opinions=opinions,
        graph=GraphConfig(kind="layered", edges=edges, layers=(layer1, layer2, layer3)),
        weights=WeightConfig(mode="reward"),
        utility=_GAUSSIAN,
        horizon=8,
        epsilon=1e-9,
        seed=57,
    )


def irreducible100(lambda_zero: bool = False) -> ScenarioConfig:
    """100 agents, 4 stubborn at rectangle corners, one fixed random edge set.

    By default weights and biases are reward-driven.  With ``lambda_zero``
    the biases are pinned to 0 and weights are uniform, so every equilibrium
    opinion is a convex combination of the stubborn corners: the followers
    end up inside the rectangle.
    """
    regular = tuple(range(1, 97))
    stubborn = tuple(range(97, 101))
    community = Community(2, regular, stubborn)
    edge_set = sample_edge_set(community, out_degree=6, seed=100100, k=0, require_reachability=True)
    edges = {a: tuple(sorted(nbrs)) for a, nbrs in edge_set.in_neighbors_map.items()}
    rng = np.random.default_rng(np.random.SeedSequence((100, 0)))
    opinions = _uniform_opinions(rng, regular, lo=0.02, hi=0.98)
    corners = [(0.15, 0.45), (0.15, 0.75), (0.35, 0.45), (0.35, 0.75)]
    opinions.update({a: p for a, p in zip(stubborn, corners)})
    if lambda_zero:
        weights = WeightConfig(mode="fixed", bias=0.0)
        name = "irreducible100-lambda0"
    else:
        weights = WeightConfig(mode="reward")
        name = "irreducible100"
    return ScenarioConfig(
        name=name,
        n=2,
        regular=regular,
        stubborn=stubborn,
        initial_opinions=opinions,
        graph=GraphConfig(kind="static", edges=edges),
        weights=weights,
        utility=_GAUSSIAN,
        horizon=200,
        epsilon=1e-9,
        seed=100,
    )


def random_tv() -> ScenarioConfig:
    """100 agents on a fresh random influence graph every step, reward-driven.

    Every regular agent redraws 70 influencers each step, so the update
    matrices never stop changing; the trajectory still settles because
    averaging over many influencers washes out the resampling noise.  The
    leaders all sit at the utility peak (the opinion they promote) and the
    followers start as a spread cloud with its mean exactly on the peak, so
    the settled cluster has no residual drift: step deltas stay below 1e-3
    from step 5 on.
    """
    regular = tuple(range(1, 97))
    stubborn = tuple(range(97, 101))
    rng = np.random.default_rng(np.random.SeedSequence((2020, 0)))
    cloud = rng.uniform(-0.2, 0.2, size=(len(regular), 2))
    cloud -= cloud.mean(axis=0)
    cloud += np.asarray(_PEAK)
    opinions = {a: tuple(float(v) for v in p) for a, p in zip(regular, cloud)}
    opinions.update({a: _PEAK for a in stubborn})
    return ScenarioConfig(
        name="random-tv",
        n=2,
        regular=regular,
        stubborn=stubborn,
        initial_opinions=opinions,
        graph=GraphConfig(kind="random", out_degree=70, allow_stubborn_prob=1.0, require_reachability=True),
        weights=WeightConfig(mode="reward"),
        utility=_GAUSSIAN,
        horizon=20,
        epsilon=1e-9,
        seed=7,
    )


BUILTIN_SCENARIOS = {
    "dnn57": dnn57,
    "irreducible100": irreducible100,
    "random-tv": random_tv,
}


def build_scenario(name: str, **kwargs) -> ScenarioConfig:
    """Instantiate a built-in scenario by name."""
    try:
        factory = BUILTIN_SCENARIOS[name]
    except KeyError:
        known = ", ".join(sorted(BUILTIN_SCENARIOS))
        raise ScenarioError(f"unknown scenario {name!r}; built-ins: {known}") from None
    return factory(**kwargs)
