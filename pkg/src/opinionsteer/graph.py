"""Community structure, influence edges, reachability, and layer partitions.

A community splits its agents into a stubborn set (opinions never move) and
a regular set (opinions update from in-neighbors).  Everything downstream
indexes matrices in the canonical order "regular agents sorted ascending,
then stubborn agents sorted ascending"; agent ids themselves are arbitrary
positive integers.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import networkx as nx
import numpy as np

from .errors import ScenarioError

__all__ = [
    "Community",
    "EdgeSet",
    "LayerPartition",
    "LayerSelectors",
    "in_neighbors",
    "stubborn_reachable",
    "all_stubborn_reachable",
    "validate_layering",
    "infer_layering",
    "build_selection_matrices",
]


@dataclass(frozen=True)
class Community:
    """Agent universe: ``n`` opinion subjects, regular and stubborn id sets."""

    n: int
    regular: tuple[int, ...]
    stubborn: tuple[int, ...]

    def __post_init__(self):
        if self.n < 1:
            raise ScenarioError(f"subject count must be >= 1, got {self.n}")
        object.__setattr__(self, "regular", tuple(sorted(self.regular)))
        object.__setattr__(self, "stubborn", tuple(sorted(self.stubborn)))
        if not self.regular:
            raise ScenarioError("community needs at least one regular agent")
        if not self.stubborn:
            raise ScenarioError("community needs at least one stubborn agent")
        overlap = set(self.regular) & set(self.stubborn)
        if overlap:
            raise ScenarioError(f"agents cannot be both regular and stubborn: {sorted(overlap)}")
        if len(set(self.regular)) < len(self.regular) or len(set(self.stubborn)) < len(self.stubborn):
            raise ScenarioError("duplicate agent ids")

    @classmethod
    def from_counts(cls, n: int, total: int, num_regular: int) -> "Community":
        """Community with the default id convention: regular = 1..N_R, stubborn = N_R+1..N."""
        if not 1 <= num_regular < total:
            raise ScenarioError(f"need 1 <= N_R < N, got N_R={num_regular}, N={total}")
        return cls(n, tuple(range(1, num_regular + 1)), tuple(range(num_regular + 1, total + 1)))

    @property
    def size(self) -> int:
        return len(self.regular) + len(self.stubborn)

    @property
    def num_regular(self) -> int:
        return len(self.regular)

    @property
    def num_stubborn(self) -> int:
        return len(self.stubborn)

    @cached_property
    def agents(self) -> tuple[int, ...]:
        """All ids in canonical column order (regular first, then stubborn)."""
        return self.regular + self.stubborn

    @cached_property
    def regular_index(self) -> dict[int, int]:
        """Agent id -> 0-based row index among regular agents."""
        return {a: i for i, a in enumerate(self.regular)}

    @cached_property
    def column_index(self) -> dict[int, int]:
        """Agent id -> 0-based column index in the canonical order."""
        return {a: i for i, a in enumerate(self.agents)}

    def is_regular(self, agent: int) -> bool:
        return agent in self.regular_index

    def is_stubborn(self, agent: int) -> bool:
        return agent in self.column_index and agent not in self.regular_index


@dataclass(frozen=True)
class EdgeSet:
    """In-neighbor structure at one discrete time step.

    ``in_neighbors`` maps every regular agent to the nonempty set of agents
    influencing it.  Stubborn agents take no input and never appear as keys.
    """

    community: Community
    in_neighbors_map: dict[int, frozenset[int]]
    k: int = 0

    def __post_init__(self):
        comm = self.community
        frozen = {int(a): frozenset(int(j) for j in nbrs) for a, nbrs in self.in_neighbors_map.items()}
        object.__setattr__(self, "in_neighbors_map", frozen)
        keys = set(frozen)
        regular = set(comm.regular)
        if keys - regular:
            bad = sorted(keys - regular)
            raise ScenarioError(f"edge records for non-regular agents: {bad}")
        if regular - keys:
            bad = sorted(regular - keys)
            raise ScenarioError(f"regular agents without in-neighbors: {bad}")
        universe = set(comm.agents)
        for agent, nbrs in frozen.items():
            if not nbrs:
                raise ScenarioError(f"regular agent {agent} has an empty in-neighbor set")
            if agent in nbrs:
                raise ScenarioError(f"agent {agent} cannot influence itself")
            unknown = nbrs - universe
            if unknown:
                raise ScenarioError(f"agent {agent} lists unknown neighbors {sorted(unknown)}")

    def degree(self, agent: int) -> int:
        return len(self.in_neighbors_map[agent])


def in_neighbors(edges: EdgeSet, agent: int) -> frozenset[int]:
    """Agents influencing ``agent`` at the edge set's time step.

    Only regular agents have in-neighbors; querying a stubborn or unknown id
    is an error.
    """
    if agent in edges.in_neighbors_map:
        return edges.in_neighbors_map[agent]
    if edges.community.is_stubborn(agent):
        raise ScenarioError(f"agent {agent} is stubborn and takes no input")
    raise ScenarioError(f"unknown agent id {agent}")


def stubborn_reachable(edges: EdgeSet) -> dict[int, bool]:
    """For each regular agent: is it reachable from the stubborn set?

    Influence flows along j -> i whenever j is an in-neighbor of i; an agent
    counts as reachable when a directed path from some stubborn agent exists.
    """
    comm = edges.community
    out_edges: dict[int, list[int]] = {a: [] for a in comm.agents}
    for i, nbrs in edges.in_neighbors_map.items():
        for j in nbrs:
            out_edges[j].append(i)
    seen = set(comm.stubborn)
    queue = deque(comm.stubborn)
    while queue:
        j = queue.popleft()
        for i in out_edges[j]:
            if i not in seen:
                seen.add(i)
                queue.append(i)
    return {i: i in seen for i in comm.regular}


def all_stubborn_reachable(edges: EdgeSet) -> bool:
    """True iff every regular agent is reachable from the stubborn set."""
    return all(stubborn_reachable(edges).values())


@dataclass(frozen=True)
class LayerPartition:
    """Ordered disjoint layers covering the regular agents exactly.

    The cumulative influence sets grow one layer at a time: the first set is
    the stubborn agents plus layer 1, and each later set adds the next layer,
    so the last one is the whole community.
    """

    community: Community
    layers: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        layers = tuple(tuple(sorted(int(a) for a in layer)) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ScenarioError("partition needs at least one layer")
        seen: set[int] = set()
        for idx, layer in enumerate(layers, start=1):
            if not layer:
                raise ScenarioError(f"layer {idx} is empty")
            dupes = seen & set(layer)
            if dupes:
                raise ScenarioError(f"agents in multiple layers: {sorted(dupes)}")
            seen |= set(layer)
        if seen != set(self.community.regular):
            missing = sorted(set(self.community.regular) - seen)
            extra = sorted(seen - set(self.community.regular))
            raise ScenarioError(f"layers must cover the regular agents exactly (missing={missing}, extra={extra})")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(layer) for layer in self.layers)

    @cached_property
    def cumulative(self) -> tuple[frozenset[int], ...]:
        """Cumulative sets: stubborn + layers 1..l, for l = 1..M."""
        sets = []
        acc = set(self.community.stubborn)
        for layer in self.layers:
            acc |= set(layer)
            sets.append(frozenset(acc))
        return tuple(sets)


def validate_layering(edges: EdgeSet, partition: LayerPartition, mode: str = "weak") -> bool:
    """Check that in-neighbor sets respect the layer ordering.

    weak:   agents in layer l draw only from the cumulative set up to l
            (stubborn agents and layers 1..l).
    strict: layer-1 agents draw only from the stubborn set, and agents in
            layer l > 1 only from the cumulative set up to l-1.  Strictness
            is what guarantees convergence in exactly M steps.
    """
    if mode not in ("weak", "strict"):
        raise ScenarioError(f"unknown layering mode {mode!r}")
    if partition.community != edges.community:
        raise ScenarioError("partition and edge set describe different communities")
    stubborn = frozenset(edges.community.stubborn)
    cumulative = partition.cumulative
    for l, layer in enumerate(partition.layers, start=1):
        if mode == "weak":
            allowed = cumulative[l - 1]
        else:
            allowed = stubborn if l == 1 else cumulative[l - 2]
        for agent in layer:
            if not edges.in_neighbors_map[agent] <= allowed:
                return False
    return True


def infer_layering(edges: EdgeSet) -> LayerPartition | None:
    """Derive a layer partition from the influence structure, if one exists.

    Condenses the regular-agent subgraph into strongly connected components
    and assigns longest-path levels.  If the subgraph is acyclic this yields
    the minimal strict layering; with nontrivial components it yields a weak
    layering.  Returns None when a single component spans all regular agents
    (nothing to order).
    """
    comm = edges.community
    regular = set(comm.regular)
    g = nx.DiGraph()
    g.add_nodes_from(comm.regular)
    for i, nbrs in edges.in_neighbors_map.items():
        for j in nbrs:
            if j in regular:
                g.add_edge(j, i)
    condensed = nx.condensation(g)
    if condensed.number_of_nodes() == 1 and comm.num_regular > 1:
        return None
    level: dict[int, int] = {}
    for node in nx.topological_sort(condensed):
        preds = list(condensed.predecessors(node))
        level[node] = 1 + max((level[p] for p in preds), default=0)
    num_levels = max(level.values())
    layers: list[list[int]] = [[] for _ in range(num_levels)]
    for node, members in condensed.nodes(data="members"):
        layers[level[node] - 1].extend(members)
    return LayerPartition(comm, tuple(tuple(sorted(layer)) for layer in layers))


@dataclass(frozen=True)
class LayerSelectors:
    """0/1 selector matrices extracting layers from the regular-agent order.

    ``per_layer[l]`` picks out layer l+1's agents (rows ordered by ascending
    id within the layer); stacking them gives the permutation ``regular``;
    ``full`` pads it with an identity over the stubborn block so it acts on
    whole-community vectors (stubborn entries first).
    """

    partition: LayerPartition
    per_layer: tuple[np.ndarray, ...]
    regular: np.ndarray
    full: np.ndarray

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return self.partition.sizes


def build_selection_matrices(partition: LayerPartition) -> LayerSelectors:
    """Selector matrices for a partition.

    Each agent's column is its 0-based position within the regular agents
    sorted ascending by id, so the stacked matrix is a permutation; all
    products with transposes are exact identities (integer arithmetic).
    """
    comm = partition.community
    nr = comm.num_regular
    ns = comm.num_stubborn
    pos = comm.regular_index
    per_layer = []
    for layer in partition.layers:
        sel = np.zeros((len(layer), nr), dtype=np.int64)
        for row, agent in enumerate(layer):
            sel[row, pos[agent]] = 1
        per_layer.append(sel)
    stacked = np.vstack(per_layer)
    full = np.zeros((comm.size, comm.size), dtype=np.int64)
    full[:ns, :ns] = np.eye(ns, dtype=np.int64)
    full[ns:, ns:] = stacked
    return LayerSelectors(partition, tuple(per_layer), stacked, full)
