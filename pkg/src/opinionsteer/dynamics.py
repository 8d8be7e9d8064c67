"""Opinion state, influence/bias matrices, and the one-step update.

Opinions live in [0,1]^n.  A regular agent's next opinion is a convex mix of
its in-neighbors' current opinions (weights sum to 1) and its own initial
opinion (weight = its bias), so opinions stay in [0,1] without clamping.

Whole-network state is the subject-major stacking of the regular opinion
matrix: first every agent's component for subject 1, then subject 2, and so
on.  The constant input stacks stubborn opinions first, then the regular
agents' initial opinions, with the same subject-major convention.  The
network step is computed per subject block; the Kronecker-product form is
never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import ScenarioError
from .graph import EdgeSet

__all__ = [
    "ROW_SUM_TOL",
    "SystemMatrices",
    "stack_opinions",
    "unstack_opinions",
    "input_vector",
    "influence_from_rows",
    "assemble_system",
    "step_agent",
    "step_network",
]

# absolute per-row tolerance for all stochasticity checks
ROW_SUM_TOL = 1e-12


def _check_unit_range(values: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ScenarioError(f"{what} must lie in [0,1], got range [{arr.min()}, {arr.max()}]")
    return arr


def stack_opinions(opinions: np.ndarray) -> np.ndarray:
    """Flatten an (agents x subjects) opinion matrix into the subject-major state vector."""
    mat = np.asarray(opinions, dtype=float)
    if mat.ndim != 2:
        raise ScenarioError(f"expected a 2-D opinion matrix, got shape {mat.shape}")
    return mat.ravel(order="F")


def unstack_opinions(state: np.ndarray, num_agents: int) -> np.ndarray:
    """Inverse of :func:`stack_opinions`; recovers the (agents x subjects) matrix."""
    vec = np.asarray(state, dtype=float)
    if vec.ndim != 1 or num_agents < 1 or vec.size % num_agents != 0:
        raise ScenarioError(f"state of length {vec.size} does not split into {num_agents} agents")
    return vec.reshape(-1, num_agents).T


def input_vector(stubborn_opinions: np.ndarray, regular_initials: np.ndarray) -> np.ndarray:
    """Constant input: stubborn opinions stacked over regular initial opinions.

    Both arguments are (agents x subjects) matrices in canonical id order;
    the result uses the same subject-major convention as the state vector.
    """
    stub = _check_unit_range(stubborn_opinions, "stubborn opinions")
    init = _check_unit_range(regular_initials, "initial opinions")
    if stub.ndim != 2 or init.ndim != 2 or stub.shape[1] != init.shape[1]:
        raise ScenarioError(f"opinion matrices disagree on subject count: {stub.shape} vs {init.shape}")
    return stack_opinions(np.vstack([stub, init]))


@dataclass(frozen=True)
class SystemMatrices:
    """One-step update matrices for the regular agents.

    ``A`` carries regular-to-regular influence (bias-attenuated weights), and
    ``B = [stubborn-influence | diag(bias)]`` multiplies the constant input.
    Every row of ``[A B]`` sums to 1: each agent's update is a convex
    combination.
    """

    A: np.ndarray
    B: np.ndarray
    stubborn: np.ndarray
    bias: np.ndarray

    @property
    def num_regular(self) -> int:
        return self.A.shape[0]

    @property
    def num_stubborn(self) -> int:
        return self.stubborn.shape[1]

    @property
    def size(self) -> int:
        """Total number of agents."""
        return self.B.shape[1]

    @cached_property
    def full(self) -> np.ndarray:
        """The stacked row matrix [A | stubborn-influence | diag(bias)]."""
        return np.hstack([self.A, self.B])

    @property
    def effectively_stubborn(self) -> np.ndarray:
        """Row indices of regular agents whose bias is exactly 1 (they never move)."""
        return np.flatnonzero(self.bias == 1.0)


def influence_from_rows(edges: EdgeSet, rows: Mapping[int, Mapping[int, float]]) -> np.ndarray:
    """Build the (regular x all-agents) influence matrix from per-agent weight rows.

    Each row's keys must be the agent's in-neighbors; weights are nonnegative
    and sum to 1 within ``ROW_SUM_TOL``.
    """
    comm = edges.community
    weights = np.zeros((comm.num_regular, comm.size))
    col = comm.column_index
    for agent, ridx in comm.regular_index.items():
        try:
            row = rows[agent]
        except KeyError:
            raise ScenarioError(f"no weight row for regular agent {agent}") from None
        nbrs = edges.in_neighbors_map[agent]
        if set(row) != set(nbrs):
            raise ScenarioError(
                f"agent {agent}: weight keys {sorted(row)} do not match in-neighbors {sorted(nbrs)}"
            )
        for j, w in row.items():
            if w < 0:
                raise ScenarioError(f"agent {agent}: negative weight {w} on neighbor {j}")
            weights[ridx, col[j]] = w
    _check_rows_stochastic(weights)
    return weights


def _check_rows_stochastic(weights: np.ndarray) -> None:
    err = np.abs(weights.sum(axis=1) - 1.0)
    if err.size and err.max() > ROW_SUM_TOL:
        bad = int(np.argmax(err))
        raise ScenarioError(f"influence row {bad} sums to {weights[bad].sum()!r}, beyond tolerance {ROW_SUM_TOL}")


def assemble_system(weights: np.ndarray, bias: np.ndarray) -> SystemMatrices:
    """Combine an influence matrix and bias vector into the update matrices.

    ``weights`` is (regular x all-agents) and row-stochastic, ``bias`` is the
    per-regular-agent attachment to the initial opinion in [0,1].  Row i of
    the result: (1-bias_i) * weights on current opinions, bias_i on the own
    initial opinion.
    """
    weights = np.asarray(weights, dtype=float)
    bias = np.asarray(bias, dtype=float)
    if weights.ndim != 2 or bias.ndim != 1 or weights.shape[0] != bias.size:
        raise ScenarioError(f"shape mismatch: weights {weights.shape}, bias {bias.shape}")
    num_regular = weights.shape[0]
    if weights.shape[1] <= num_regular:
        raise ScenarioError("influence matrix must have a column per agent, stubborn included")
    if weights.min(initial=0.0) < 0:
        raise ScenarioError("influence weights must be nonnegative")
    if bias.size and (bias.min() < 0.0 or bias.max() > 1.0):
        raise ScenarioError("bias values must lie in [0,1]")
    _check_rows_stochastic(weights)
    attenuated = (1.0 - bias)[:, None] * weights
    regular_part = attenuated[:, :num_regular]
    stubborn_part = attenuated[:, num_regular:]
    combined = np.hstack([stubborn_part, np.diag(bias)])
    return SystemMatrices(A=regular_part, B=combined, stubborn=stubborn_part, bias=bias.copy())


def step_agent(
    agent: int,
    opinions: Mapping[int, np.ndarray],
    weights: Mapping[int, float],
    bias: float,
    initial: np.ndarray,
) -> np.ndarray:
    """One opinion update for a single regular agent.

    ``opinions`` holds the current opinions of at least the agent's
    in-neighbors (the keys of ``weights``); ``initial`` is the agent's own
    opinion at time 0.  Returns (1-bias) * weighted neighbor mix + bias *
    initial.
    """
    if not 0.0 <= bias <= 1.0:
        raise ScenarioError(f"agent {agent}: bias {bias} outside [0,1]")
    if not weights:
        raise ScenarioError(f"agent {agent} has no influence weights")
    total = sum(weights.values())
    if abs(total - 1.0) > ROW_SUM_TOL:
        raise ScenarioError(f"agent {agent}: weights sum to {total!r}")
    anchor = _check_unit_range(np.atleast_1d(initial), f"agent {agent} initial opinion")
    mix = np.zeros_like(anchor)
    for j, w in weights.items():
        if w < 0:
            raise ScenarioError(f"agent {agent}: negative weight on neighbor {j}")
        try:
            neighbor = opinions[j]
        except KeyError:
            raise ScenarioError(f"agent {agent}: missing opinion for neighbor {j}") from None
        mix = mix + w * _check_unit_range(np.atleast_1d(neighbor), f"neighbor {j} opinion")
    return (1.0 - bias) * mix + bias * anchor


def step_network(state: np.ndarray, mats: SystemMatrices, constant_input: np.ndarray) -> np.ndarray:
    """Advance the whole-network state one step: x <- A x + B u per subject block."""
    x = np.asarray(state, dtype=float)
    u = np.asarray(constant_input, dtype=float)
    num_regular = mats.num_regular
    total = mats.size
    if x.ndim != 1 or x.size % num_regular != 0:
        raise ScenarioError(f"state length {x.size} does not split over {num_regular} regular agents")
    n = x.size // num_regular
    if u.ndim != 1 or u.size != n * total:
        raise ScenarioError(f"input length {u.size}, expected {n * total}")
    blocks = x.reshape(n, num_regular)
    input_blocks = u.reshape(n, total)
    return (blocks @ mats.A.T + input_blocks @ mats.B.T).ravel()
