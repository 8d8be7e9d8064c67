"""Leader-specified utility fields and the decentralized influence update.

The stubborn agents publish a desired opinion distribution only implicitly,
as a nonnegative utility over the opinion space.  Regular agents never see
the field itself; they observe pointwise rewards — their own initial reward
and the current rewards of their in-neighbors — and rebuild their influence
row from those numbers alone:

* each neighbor's share of the row is its reward divided by the total
  observed reward,
* the agent's bias (attachment to its initial opinion) is its own initial
  reward divided by the same total,
* influence weights are the neighbor shares renormalized to sum to 1.

The update is invariant to rescaling the utility, strictly increasing in a
neighbor's reward, and always produces a row summing to 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ScenarioError, ZeroRewardError
from .graph import EdgeSet

__all__ = [
    "UtilityField",
    "GaussianUtility",
    "GridUtility",
    "grid_from_csv",
    "evaluate_utility",
    "RewardObservation",
    "local_reward_sum",
    "InfluenceRowUpdate",
    "update_influence_row",
    "RewardStepResult",
    "reward_step",
]

# below this total observed reward the update falls back to the previous row
ZERO_REWARD_TOL = 1e-300


class UtilityField:
    """Nonnegative reward over the opinion space, evaluated pointwise only."""

    dim: int

    def value(self, opinion: np.ndarray) -> float:
        raise NotImplementedError


class GaussianUtility(UtilityField):
    """Unnormalized Gaussian bump: exp(-(o-mean)' inv(cov) (o-mean) / 2).

    The peak value is 1 at the mean.  Normalization is irrelevant to the
    influence update (it uses reward ratios), so none is applied.
    """

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        if self.mean.ndim != 1:
            raise ScenarioError("utility mean must be a vector")
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ScenarioError(f"covariance shape {self.cov.shape} does not match mean of size {self.mean.size}")
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ScenarioError("utility covariance must be symmetric positive definite") from None
        self.dim = self.mean.size

    @classmethod
    def isotropic(cls, mean, scale: float) -> "GaussianUtility":
        mean = np.asarray(mean, dtype=float)
        if scale <= 0:
            raise ScenarioError(f"covariance scale must be positive, got {scale}")
        return cls(mean, scale * np.eye(mean.size))

    def value(self, opinion: np.ndarray) -> float:
        delta = np.asarray(opinion, dtype=float) - self.mean
        whitened = np.linalg.solve(self._chol, delta)
        return float(np.exp(-0.5 * whitened @ whitened))


class GridUtility(UtilityField):
    """Nonnegative samples on a rectangular lattice, multilinearly interpolated."""

    def __init__(self, axes, values):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != tuple(len(a) for a in self.axes):
            raise ScenarioError(f"grid values of shape {self.values.shape} do not match axes {[len(a) for a in self.axes]}")
        for axis in self.axes:
            if axis.size < 2 or (np.diff(axis) <= 0).any():
                raise ScenarioError("each grid axis needs at least two strictly increasing coordinates")
            if axis.min() < 0.0 or axis.max() > 1.0:
                raise ScenarioError("grid coordinates must lie in [0,1]")
        if self.values.min() < 0.0:
            raise ScenarioError("grid utility values must be nonnegative")
        self._interp = RegularGridInterpolator(self.axes, self.values, method="linear", bounds_error=True)
        self.dim = len(self.axes)

    def value(self, opinion: np.ndarray) -> float:
        return float(self._interp(np.asarray(opinion, dtype=float))[0])


def grid_from_csv(path) -> GridUtility:
    """Load a lattice utility from CSV: coordinate columns plus a final value column.

    Every lattice point (the cross product of the coordinate columns' unique
    values) must appear exactly once.
    """
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioError(f"{path}: empty utility grid file") from None
        if len(header) < 2:
            raise ScenarioError(f"{path}: need at least one coordinate column and a value column")
        rows = [[float(cell) for cell in row] for row in reader if row]
    if not rows:
        raise ScenarioError(f"{path}: no lattice points")
    dim = len(header) - 1
    data = np.asarray(rows, dtype=float)
    if data.shape[1] != dim + 1:
        raise ScenarioError(f"{path}: rows have {data.shape[1]} columns, header promises {dim + 1}")
    axes = [np.unique(data[:, d]) for d in range(dim)]
    shape = tuple(len(a) for a in axes)
    expected = int(np.prod(shape))
    if data.shape[0] != expected:
        raise ScenarioError(f"{path}: {data.shape[0]} rows, but the coordinate lattice has {expected} points")
    values = np.full(shape, np.nan)
    lookups = [{c: i for i, c in enumerate(axis)} for axis in axes]
    for row in data:
        idx = tuple(lookups[d][row[d]] for d in range(dim))
        values[idx] = row[-1]
    if np.isnan(values).any():
        raise ScenarioError(f"{path}: lattice has duplicate or missing points")
    return GridUtility(axes, values)


def evaluate_utility(field: UtilityField, opinion) -> float:
    """Reward at one opinion point; the point must lie in [0,1]^n."""
    o = np.asarray(opinion, dtype=float)
    if o.shape != (field.dim,):
        raise ScenarioError(f"opinion of shape {o.shape} does not match utility over {field.dim} subjects")
    if o.min() < 0.0 or o.max() > 1.0:
        raise ScenarioError(f"opinion {o} outside [0,1]^{field.dim}")
    reward = field.value(o)
    if reward < 0.0:
        raise ScenarioError(f"utility returned a negative reward {reward}")
    return reward


@dataclass(frozen=True)
class RewardObservation:
    """What one regular agent sees at step k: its own initial reward and its
    in-neighbors' current rewards."""

    agent: int
    own_initial: float
    neighbor_rewards: dict[int, float]

    def __post_init__(self):
        if self.own_initial < 0.0:
            raise ScenarioError(f"agent {self.agent}: negative initial reward")
        if not self.neighbor_rewards:
            raise ScenarioError(f"agent {self.agent}: observation with no neighbors")
        if any(r < 0.0 for r in self.neighbor_rewards.values()):
            raise ScenarioError(f"agent {self.agent}: negative neighbor reward")


def local_reward_sum(observation: RewardObservation) -> float:
    """Total reward mass the agent can see: own initial plus all neighbors' current."""
    return observation.own_initial + sum(observation.neighbor_rewards.values())


@dataclass(frozen=True)
class InfluenceRowUpdate:
    """One agent's rebuilt influence row.

    ``row`` holds the reward shares of the in-neighbors; ``self_weight`` the
    share of the agent's own initial opinion.  ``bias`` equals
    ``self_weight`` and ``weights`` are the neighbor shares renormalized to
    sum to 1.  ``flagged`` marks a degenerate fallback (zero total reward, or
    all-zero neighbor rewards forcing bias 1).
    """

    agent: int
    row: dict[int, float]
    self_weight: float
    bias: float
    weights: dict[int, float]
    flagged: bool = False


def update_influence_row(
    observation: RewardObservation,
    previous: tuple[float, Mapping[int, float]] | None = None,
) -> InfluenceRowUpdate:
    """Rebuild one agent's bias and weights from observed rewards.

    When the total observed reward is (numerically) zero the previous
    ``(bias, weights)`` pair is retained, flagged; without one the update
    raises.  When only the neighbors' rewards vanish the bias saturates at 1
    and the weights fall back to uniform, flagged.
    """
    total = local_reward_sum(observation)
    neighbors = observation.neighbor_rewards
    if total <= ZERO_REWARD_TOL:
        if previous is None:
            raise ZeroRewardError(f"agent {observation.agent}: zero total reward and no previous row to keep")
        bias, weights = previous
        weights = dict(weights)
        if set(weights) != set(neighbors):
            # the neighbor set changed since the retained row was built
            weights = {j: 1.0 / len(neighbors) for j in neighbors}
        row = {j: (1.0 - bias) * w for j, w in weights.items()}
        return InfluenceRowUpdate(observation.agent, row, bias, bias, weights, flagged=True)
    row = {j: r / total for j, r in neighbors.items()}
    self_weight = observation.own_initial / total
    if sum(neighbors.values()) <= ZERO_REWARD_TOL:
        # bias saturates at 1; neighbor shares are all zero and cannot be renormalized
        uniform = {j: 1.0 / len(neighbors) for j in neighbors}
        return InfluenceRowUpdate(observation.agent, row, self_weight, self_weight, uniform, flagged=True)
    scale = 1.0 - self_weight
    weights = {j: share / scale for j, share in row.items()}
    return InfluenceRowUpdate(observation.agent, row, self_weight, self_weight, weights)


@dataclass(frozen=True)
class RewardStepResult:
    """Updated weight rows and biases for all regular agents at one step."""

    weights: dict[int, dict[int, float]]
    bias: dict[int, float]
    flagged: frozenset[int]
    initial_rewards: dict[int, float]


def reward_step(
    edges: EdgeSet,
    opinions: Mapping[int, np.ndarray],
    initial_opinions: Mapping[int, np.ndarray],
    field: UtilityField,
    initial_rewards: Mapping[int, float] | None = None,
    previous: tuple[Mapping[int, float], Mapping[int, Mapping[int, float]]] | None = None,
) -> RewardStepResult:
    """One decentralized refresh of every regular agent's bias and weights.

    ``opinions`` holds current opinions for every agent that influences
    someone; ``initial_opinions`` the regular agents' anchors.  The field is
    only ever evaluated at those realized points.  ``initial_rewards`` (the
    rewards at the anchors) can be passed in to avoid re-evaluating them
    every step; ``previous`` supplies the per-agent ``(bias, weights)`` maps
    to retain if some agent observes zero total reward.
    """
    comm = edges.community
    if initial_rewards is None:
        initial_rewards = {
            i: evaluate_utility(field, initial_opinions[i]) for i in comm.regular
        }
    influencers = set().union(*edges.in_neighbors_map.values())
    current_rewards = {j: evaluate_utility(field, opinions[j]) for j in influencers}
    weights: dict[int, dict[int, float]] = {}
    bias: dict[int, float] = {}
    flagged: set[int] = set()
    for agent in comm.regular:
        nbrs = edges.in_neighbors_map[agent]
        observation = RewardObservation(
            agent=agent,
            own_initial=initial_rewards[agent],
            neighbor_rewards={j: current_rewards[j] for j in nbrs},
        )
        prev = None
        if previous is not None:
            prev_bias, prev_weights = previous
            if agent in prev_bias and agent in prev_weights:
                prev = (prev_bias[agent], prev_weights[agent])
        update = update_influence_row(observation, prev)
        weights[agent] = update.weights
        bias[agent] = update.bias
        if update.flagged:
            flagged.add(agent)
    return RewardStepResult(weights, bias, frozenset(flagged), dict(initial_rewards))
